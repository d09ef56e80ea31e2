#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace cdpauth {

// Single-file archive: magic, container version, JSON metadata block, float32 blob.
//
//   bytes 0..7    "CDPAUTH\0"
//   bytes 8..11   container version (uint32 LE)
//   bytes 12..19  JSON length n (uint64 LE)
//   next n bytes  UTF-8 JSON; must carry "kind" and "format_version"
//   remainder     little-endian float32 parameter blob
struct Archive {
    nlohmann::json meta;
    std::vector<float> blob;
};

inline constexpr std::uint32_t kContainerVersion = 1;

void write_archive(const std::filesystem::path& path, const Archive& archive);
// Rejects bad magic, other container versions, and a "kind" different from expected_kind.
Archive read_archive(const std::filesystem::path& path, const std::string& expected_kind);

// Canonical (sorted-key, compact) JSON rendering and its FNV-1a 64 digest as 16 hex chars.
std::string canonical_json(const nlohmann::json& j);
std::string fingerprint(const nlohmann::json& j);
// Digest of the canonical JSON followed by the little-endian bytes of `blob`.
std::string fingerprint(const nlohmann::json& j, const std::vector<float>& blob);

}  // namespace cdpauth
