#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace cdpauth {

// Row-major single-channel image.
struct Image {
    int rows = 0;
    int cols = 0;
    std::vector<double> px;

    Image() = default;
    Image(int r, int c, double fill = 0.0) : rows(r), cols(c), px(static_cast<std::size_t>(r) * c, fill) {}

    double& operator()(int r, int c) { return px[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return px[static_cast<std::size_t>(r) * cols + c]; }

    std::size_t size() const { return px.size(); }
    bool same_shape(const Image& o) const { return rows == o.rows && cols == o.cols; }
    bool operator==(const Image&) const = default;
};

double mean(const Image& img);
double variance(const Image& img);
double mse(const Image& a, const Image& b);

// [0,1] <-> [-1,1], the diffusion-space convention.
Image to_signed(const Image& img);
Image to_unit(const Image& img);

Image crop(const Image& img, int top, int left, int rows, int cols);
Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);

// Separable Gaussian blur, edge-replicated borders. radius < 0 picks ceil(3 sigma).
Image gaussian_blur(const Image& img, double sigma, int radius = -1);

// 8-bit grayscale PNG; value = round(255 * clamp(pixel, 0, 1)).
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

}  // namespace cdpauth
