#include "cdpauth/augment.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"

namespace cdpauth {

namespace {

bool is_prob(double p) { return p >= 0.0 && p <= 1.0; }

enum class Photometric { blur, noise, brightness_contrast };

void apply(Photometric op, Image& img, const AugmentParams& p, Rng& rng) {
    switch (op) {
        case Photometric::blur: {
            const int n_sizes = (p.blur_kernel_max - p.blur_kernel_min) / 2 + 1;
            std::uniform_int_distribution<int> pick(0, n_sizes - 1);
            const int k = p.blur_kernel_min + 2 * pick(rng);
            // OpenCV's sigma for a given aperture when sigma is left unspecified.
            const double sigma = 0.3 * ((k - 1) * 0.5 - 1.0) + 0.8;
            img = gaussian_blur(img, sigma, (k - 1) / 2);
            break;
        }
        case Photometric::noise: {
            std::uniform_real_distribution<double> var(p.noise_var_min, p.noise_var_max);
            std::normal_distribution<double> n(0.0, std::sqrt(var(rng)));
            for (double& v : img.px) v = std::clamp(v + n(rng), 0.0, 1.0);
            break;
        }
        case Photometric::brightness_contrast: {
            std::uniform_real_distribution<double> b(-p.brightness, p.brightness);
            std::uniform_real_distribution<double> c(-p.contrast, p.contrast);
            const double shift = b(rng), gain = 1.0 + c(rng);
            for (double& v : img.px) v = std::clamp((v - 0.5) * gain + 0.5 + shift, 0.0, 1.0);
            break;
        }
    }
}

}  // namespace

void AugmentParams::validate(int image_side) const {
    if (n_copies < 1) throw InvalidArgument("augment: n_copies must be >= 1");
    if (crop_side < 1 || crop_side > image_side)
        throw InvalidArgument("augment: crop_side " + std::to_string(crop_side) + " larger than image side " +
                              std::to_string(image_side));
    if (!is_prob(flip_prob) || !is_prob(photometric_prob)) throw InvalidArgument("augment: probabilities must be in [0,1]");
    if (blur_kernel_min < 1 || blur_kernel_min % 2 == 0 || blur_kernel_max % 2 == 0 || blur_kernel_max < blur_kernel_min)
        throw InvalidArgument("augment: blur kernel range must be odd sizes with min <= max");
    if (noise_var_min < 0.0 || noise_var_max < noise_var_min) throw InvalidArgument("augment: bad noise variance range");
    if (brightness < 0.0 || contrast < 0.0) throw InvalidArgument("augment: brightness/contrast ranges must be >= 0");
}

AugmentParams AugmentParams::none(int side) {
    AugmentParams p;
    p.n_copies = 1;
    p.crop_side = side;
    p.flip_prob = 0.0;
    p.photometric_prob = 0.0;
    return p;
}

std::vector<ImagePair> augment(const ImagePair& pair, const AugmentParams& params, std::uint64_t seed) {
    const auto& [tmpl, printed] = pair;
    if (!tmpl.same_shape(printed) || tmpl.rows != tmpl.cols) throw InvalidArgument("augment: pair must be square and same shape");
    params.validate(tmpl.rows);

    std::vector<ImagePair> out;
    out.reserve(params.n_copies);
    for (int k = 0; k < params.n_copies; ++k) {
        Rng rng(derive_seed(seed, {seed_tag::augment, static_cast<std::uint64_t>(k)}));
        std::uniform_int_distribution<int> offset(0, tmpl.rows - params.crop_side);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const int top = offset(rng), left = offset(rng);
        Image a = crop(tmpl, top, left, params.crop_side, params.crop_side);
        Image b = crop(printed, top, left, params.crop_side, params.crop_side);
        if (u(rng) < params.flip_prob) {
            a = flip_horizontal(a);
            b = flip_horizontal(b);
        }
        if (u(rng) < params.flip_prob) {
            a = flip_vertical(a);
            b = flip_vertical(b);
        }
        if (u(rng) < params.photometric_prob) {
            std::array<Photometric, 3> ops{Photometric::blur, Photometric::noise, Photometric::brightness_contrast};
            std::shuffle(ops.begin(), ops.end(), rng);
            apply(ops[0], b, params, rng);
            apply(ops[1], b, params, rng);
        }
        out.emplace_back(std::move(a), std::move(b));
    }
    return out;
}

nlohmann::json to_json(const AugmentParams& a) {
    return {{"n_copies", a.n_copies},
            {"crop_side", a.crop_side},
            {"flip_prob", a.flip_prob},
            {"photometric_prob", a.photometric_prob},
            {"blur_kernel_min", a.blur_kernel_min},
            {"blur_kernel_max", a.blur_kernel_max},
            {"noise_var_min", a.noise_var_min},
            {"noise_var_max", a.noise_var_max},
            {"brightness", a.brightness},
            {"contrast", a.contrast}};
}

AugmentParams augment_params_from_json(const nlohmann::json& j) {
    AugmentParams a;
    a.n_copies = j.value("n_copies", a.n_copies);
    a.crop_side = j.value("crop_side", a.crop_side);
    a.flip_prob = j.value("flip_prob", a.flip_prob);
    a.photometric_prob = j.value("photometric_prob", a.photometric_prob);
    a.blur_kernel_min = j.value("blur_kernel_min", a.blur_kernel_min);
    a.blur_kernel_max = j.value("blur_kernel_max", a.blur_kernel_max);
    a.noise_var_min = j.value("noise_var_min", a.noise_var_min);
    a.noise_var_max = j.value("noise_var_max", a.noise_var_max);
    a.brightness = j.value("brightness", a.brightness);
    a.contrast = j.value("contrast", a.contrast);
    return a;
}

}  // namespace cdpauth
