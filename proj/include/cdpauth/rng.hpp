#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cdpauth {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to turn (root, tag...) tuples into independent seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(root);
    for (auto tag : tags) h = mix64(h ^ mix64(tag + 0x632be59bd9b4e019ULL));
    return h;
}

// Stream tags for the seed derivation tree rooted at RunConfig::root_seed.
namespace seed_tag {
inline constexpr std::uint64_t dataset = 1;
inline constexpr std::uint64_t split = 2;
inline constexpr std::uint64_t init = 3;
inline constexpr std::uint64_t train = 4;
inline constexpr std::uint64_t augment = 5;
inline constexpr std::uint64_t classify = 6;
inline constexpr std::uint64_t codec = 7;
inline constexpr std::uint64_t print = 8;
inline constexpr std::uint64_t counterfeit_src = 9;
inline constexpr std::uint64_t counterfeit_dst = 10;
inline constexpr std::uint64_t template_bits = 11;
}  // namespace seed_tag

}  // namespace cdpauth
