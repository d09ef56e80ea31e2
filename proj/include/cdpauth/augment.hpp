#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cdpauth/image.hpp"

namespace cdpauth {

struct AugmentParams {
    int n_copies = 4;
    int crop_side = 24;
    double flip_prob = 0.8;
    double photometric_prob = 0.7;
    int blur_kernel_min = 3;  // odd sizes
    int blur_kernel_max = 7;
    double noise_var_min = 0.001;
    double noise_var_max = 0.005;
    double brightness = 0.2;  // +- additive shift
    double contrast = 0.2;    // +- relative gain around 0.5

    void validate(int image_side) const;
    static AugmentParams none(int side);
};

nlohmann::json to_json(const AugmentParams& a);
AugmentParams augment_params_from_json(const nlohmann::json& j);

using ImagePair = std::pair<Image, Image>;  // (template, printed)

// n_copies augmented pairs. Geometry (crop, flips) is shared by both images;
// photometric transforms touch the printed image only.
std::vector<ImagePair> augment(const ImagePair& pair, const AugmentParams& params, std::uint64_t seed);

}  // namespace cdpauth
