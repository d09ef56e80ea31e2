#include "cdpauth/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "cdpauth/error.hpp"

namespace cdpauth {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'D', 'P', 'A', 'U', 'T', 'H', '\0'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename U>
void put(std::ofstream& out, U v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::ifstream& in, const std::filesystem::path& path) {
    U v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated archive: " + path.string());
    return v;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write archive: " + path.string());
    const std::string meta = archive.meta.dump();
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kContainerVersion);
    put<std::uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    out.write(reinterpret_cast<const char*>(archive.blob.data()),
              static_cast<std::streamsize>(archive.blob.size() * sizeof(float)));
    if (!out) throw IoError("failed writing archive: " + path.string());
}

Archive read_archive(const std::filesystem::path& path, const std::string& expected_kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint not found: " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic)
        throw CompatibilityError("not a cdpauth archive: " + path.string());
    const auto version = get<std::uint32_t>(in, path);
    if (version != kContainerVersion)
        throw CompatibilityError("archive container version " + std::to_string(version) + " unsupported (expected " +
                                 std::to_string(kContainerVersion) + "): " + path.string());
    const auto len = get<std::uint64_t>(in, path);
    std::string meta(len, '\0');
    if (!in.read(meta.data(), static_cast<std::streamsize>(len))) throw IoError("truncated archive: " + path.string());

    Archive a;
    try {
        a.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw CompatibilityError("archive metadata is not JSON: " + path.string());
    }
    const auto kind = a.meta.value("kind", std::string{});
    if (kind != expected_kind)
        throw CompatibilityError("archive " + path.string() + " holds a '" + kind + "', expected '" + expected_kind + "'");

    const auto start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg() - start);
    in.seekg(start);
    if (bytes % sizeof(float) != 0) throw IoError("archive blob is not float32-aligned: " + path.string());
    a.blob.resize(bytes / sizeof(float));
    if (bytes && !in.read(reinterpret_cast<char*>(a.blob.data()), static_cast<std::streamsize>(bytes)))
        throw IoError("truncated archive blob: " + path.string());
    return a;
}

std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

std::uint64_t fnv1a(std::uint64_t h, const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

std::string fingerprint(const nlohmann::json& j) {
    const std::string text = canonical_json(j);
    return hex(fnv1a(kFnvOffset, reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string fingerprint(const nlohmann::json& j, const std::vector<float>& blob) {
    const std::string text = canonical_json(j);
    std::uint64_t h = fnv1a(kFnvOffset, reinterpret_cast<const unsigned char*>(text.data()), text.size());
    for (float v : blob) {
        unsigned char b[4];
        std::memcpy(b, &v, 4);
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 4);
        h = fnv1a(h, b, 4);
    }
    return hex(h);
}

}  // namespace cdpauth
