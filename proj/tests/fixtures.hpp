#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cdpauth/classify.hpp"
#include "cdpauth/denoiser.hpp"
#include "cdpauth/image.hpp"
#include "cdpauth/schedule.hpp"

namespace fixture {

// Same integer formulas as tests/oracles/make_oracles.py.
inline cdpauth::Image image_a(int n = 16) {
    cdpauth::Image img(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) img(r, c) = ((r * 37 + c * 17 + r * c * 5) % 101) / 100.0;
    return img;
}

inline cdpauth::Image image_b(int n = 16) {
    cdpauth::Image a = image_a(n), img(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) img(r, c) = 0.5 * ((r * 23 + c * 41 + r * c * 3) % 89) / 88.0 + 0.5 * a(r, c);
    return img;
}

inline cdpauth::Image bimodal_gray(int n = 16) {
    cdpauth::Image img(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const int g = (r * 7 + c * 3) % 97 < 40 ? 60 + (r * c) % 30 : 170 + (r + c) % 50;
            img(r, c) = g / 255.0;
        }
    return img;
}

inline cdpauth::Image noise_image(int rows, int cols, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    cdpauth::Image img(rows, cols);
    for (double& v : img.px) v = u(rng);
    return img;
}

inline cdpauth::DenoiserConfig tiny_config() {
    cdpauth::DenoiserConfig c;
    c.base_width = 8;
    c.depth = 2;
    c.image_side = 8;
    c.time_embed_dim = 8;
    c.class_embed_dim = 8;
    return c;
}

// Knows the clean image and the true class: returns the exact noise for the
// true class and the noise plus a constant bias for every other class.
class OraclePredictor : public cdpauth::NoisePredictor {
public:
    OraclePredictor(const cdpauth::NoiseSchedule& schedule, const cdpauth::Image& x0_unit, int true_class,
                    int n_classes, double bias = 0.5)
        : m_schedule(schedule), m_x0(cdpauth::to_signed(x0_unit)), m_true(true_class), m_n(n_classes), m_bias(bias) {}

    int num_classes() const override { return m_n; }

    std::vector<cdpauth::Image> predict(const std::vector<cdpauth::NoiseQuery>& queries) const override {
        std::vector<cdpauth::Image> out;
        for (const auto& q : queries) {
            cdpauth::Image eps(q.x_t->rows, q.x_t->cols);
            const double s = m_schedule.signal_scale(q.t), n = m_schedule.noise_scale(q.t);
            for (std::size_t i = 0; i < eps.px.size(); ++i) {
                eps.px[i] = (q.x_t->px[i] - s * m_x0.px[i]) / n;
                if (q.class_id != m_true) eps.px[i] += m_bias;
            }
            out.push_back(std::move(eps));
        }
        return out;
    }

private:
    cdpauth::NoiseSchedule m_schedule;
    cdpauth::Image m_x0;
    int m_true, m_n;
    double m_bias;
};

}  // namespace fixture
