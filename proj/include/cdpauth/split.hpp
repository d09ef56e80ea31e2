#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "cdpauth/synth.hpp"

namespace cdpauth {

// Template-disjoint partition of a dataset.
struct SplitSpec {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
    std::array<double, 3> fractions{0.7, 0.1, 0.2};
    std::uint64_t seed = 0;
};

// Shuffles template ids with `seed`, then cuts by fractions using
// largest-remainder rounding (ties go to the earlier partition).
SplitSpec split_by_template(const DatasetManifest& manifest, std::array<double, 3> fractions, std::uint64_t seed);

nlohmann::json to_json(const SplitSpec& s);

}  // namespace cdpauth
