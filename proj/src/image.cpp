#include "cdpauth/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdpauth/error.hpp"

namespace cdpauth {

double mean(const Image& img) {
    if (img.px.empty()) return 0.0;
    return std::accumulate(img.px.begin(), img.px.end(), 0.0) / static_cast<double>(img.px.size());
}

double variance(const Image& img) {
    if (img.px.empty()) return 0.0;
    const double m = mean(img);
    double acc = 0.0;
    for (double v : img.px) acc += (v - m) * (v - m);
    return acc / static_cast<double>(img.px.size());
}

double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw InvalidArgument("mse: shape mismatch");
    if (a.px.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double d = a.px[i] - b.px[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.px.size());
}

Image to_signed(const Image& img) {
    Image out = img;
    for (double& v : out.px) v = 2.0 * v - 1.0;
    return out;
}

Image to_unit(const Image& img) {
    Image out = img;
    for (double& v : out.px) v = 0.5 * (v + 1.0);
    return out;
}

Image crop(const Image& img, int top, int left, int rows, int cols) {
    if (top < 0 || left < 0 || rows <= 0 || cols <= 0 || top + rows > img.rows || left + cols > img.cols)
        throw InvalidArgument("crop: window outside image");
    Image out(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out(r, c) = img(top + r, left + c);
    return out;
}

Image flip_horizontal(const Image& img) {
    Image out(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c) out(r, c) = img(r, img.cols - 1 - c);
    return out;
}

Image flip_vertical(const Image& img) {
    Image out(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c) out(r, c) = img(img.rows - 1 - r, c);
    return out;
}

Image gaussian_blur(const Image& img, double sigma, int radius) {
    if (sigma <= 0.0) return img;
    if (radius < 0) radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
        total += kernel[k + radius];
    }
    for (double& k : kernel) k /= total;

    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    Image tmp(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img(r, clampi(c + k, img.cols));
            tmp(r, c) = acc;
        }
    Image out(img.rows, img.cols);
    for (int r = 0; r < img.rows; ++r)
        for (int c = 0; c < img.cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(clampi(r + k, img.rows), c);
            out(r, c) = acc;
        }
    return out;
}

}  // namespace cdpauth
