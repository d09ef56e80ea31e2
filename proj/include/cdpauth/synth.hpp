#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdpauth/image.hpp"

namespace cdpauth {

// Pixel convention throughout: 0 = ink (dark), 1 = paper (light). Templates
// hold the same values as their ideal print, so an identity channel is a copy.
struct BinaryTemplate {
    int template_id = 0;
    Image pixels;
};

struct PrintedCdp {
    int template_id = 0;
    int class_id = 0;
    Image pixels;
};

// Five-parameter print-and-scan channel.
struct ChannelParams {
    double dot_gain = 0.0;    // [-0.3, 0.3]; > 0 grows ink, < 0 erodes it
    double blur_sigma = 0.0;  // pixels
    double noise_std = 0.0;   // additive Gaussian, applied before the clamp
    double gamma = 1.0;       // tone curve v -> v^gamma
    std::array<double, 2> shift{0.0, 0.0};  // (row, col) misregistration in [-0.5, 0.5]
    double shift_jitter = 0.0;  // per-print uniform jitter added to shift, in [0, 0.5]
    std::uint64_t stream = 0;

    static ChannelParams identity() { return {}; }
    void validate() const;
    bool operator==(const ChannelParams&) const = default;
};

struct PrinterClass {
    int class_id = 0;
    std::string label;  // "HPXX" or "HPXX_YY"
    ChannelParams source_channel;
    std::optional<ChannelParams> reprint_channel;
    bool is_authentic = true;

    std::string source_printer() const;   // "XX"
    std::string reprint_printer() const;  // "YY", empty for authentic
};

// Checks label format against is_authentic/reprint_channel, contiguous ids,
// and that printer codes map to one channel each. Throws InvalidConfiguration.
void validate_class_table(const std::vector<PrinterClass>& classes);

// HP55, HP76, HP55_55, HP55_76, HP76_76, HP76_55 with the desk-scale channels.
std::vector<PrinterClass> default_classes();
ChannelParams hp55_channel();
ChannelParams hp76_channel();

// Index of the authentic class printed by `cls`'s source printer, or -1.
int expected_authentic_class(const std::vector<PrinterClass>& classes, int class_id);
int find_class(const std::vector<PrinterClass>& classes, const std::string& label);

BinaryTemplate gen_template(std::uint64_t seed, int side, int template_id = 0);

struct PrintStages {
    Image dot_gained;
    Image shifted;
    Image blurred;
    Image toned;
    Image noised;  // before the clamp
    Image output;
};

PrintStages print_cdp_stages(const BinaryTemplate& tmpl, const ChannelParams& channel, std::uint64_t seed);
PrintedCdp print_cdp(const BinaryTemplate& tmpl, const ChannelParams& channel, std::uint64_t seed);

// Otsu threshold over a 256-bin histogram (bin = round(255 v)); ties go to the lower bin.
int otsu_threshold_bin(const Image& img);
BinaryTemplate estimate_template(const PrintedCdp& printed);

PrintedCdp make_counterfeit(const BinaryTemplate& tmpl, const ChannelParams& src, const ChannelParams& dst,
                            std::uint64_t seed);

struct SampleRecord {
    int template_id = 0;
    int class_id = 0;
    std::uint64_t seed = 0;
    std::string image_path;
    std::string template_path;
    bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
    static constexpr int kSchemaVersion = 1;
    int schema_version = kSchemaVersion;
    int side = 32;
    int n_templates = 0;
    std::uint64_t seed = 0;
    std::vector<PrinterClass> classes;
    std::vector<SampleRecord> samples;  // ordered by (template_id, class_id)
};

// Manifest plus the pixel data it describes. prints[i] belongs to manifest.samples[i].
struct Dataset {
    DatasetManifest manifest;
    std::vector<BinaryTemplate> templates;  // indexed by template_id
    std::vector<PrintedCdp> prints;

    const BinaryTemplate& template_for(const PrintedCdp& p) const { return templates.at(p.template_id); }
};

// Images are quantized to 8 bits, the same as the PNG files written for them.
Dataset build_dataset(const std::vector<PrinterClass>& classes, int n_templates, std::uint64_t seed, int side = 32);

void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const ChannelParams& c);
ChannelParams channel_from_json(const nlohmann::json& j);
nlohmann::json to_json(const std::vector<PrinterClass>& classes);
std::vector<PrinterClass> classes_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

}  // namespace cdpauth
