#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "cdpauth/image.hpp"

namespace cdpauth {

enum class ScheduleKind { linear };

// Variance-preserving schedule. Timesteps are 1-based: beta(1) .. beta(T).
class NoiseSchedule {
public:
    static NoiseSchedule make(int steps, double beta_start, double beta_end, ScheduleKind kind = ScheduleKind::linear);
    static NoiseSchedule default_schedule() { return make(200, 1e-4, 0.02); }

    int steps() const { return static_cast<int>(m_beta.size()); }
    double beta(int t) const { return m_beta.at(t - 1); }
    double alpha(int t) const { return 1.0 - beta(t); }
    double alpha_bar(int t) const { return m_alpha_bar.at(t - 1); }
    double signal_scale(int t) const { return std::sqrt(alpha_bar(t)); }
    double noise_scale(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

    double beta_start() const { return m_beta_start; }
    double beta_end() const { return m_beta_end; }
    ScheduleKind kind() const { return m_kind; }

    const std::vector<double>& alpha_bars() const { return m_alpha_bar; }

private:
    std::vector<double> m_beta;
    std::vector<double> m_alpha_bar;
    double m_beta_start = 0.0;
    double m_beta_end = 0.0;
    ScheduleKind m_kind = ScheduleKind::linear;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Image q_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& schedule);

// Inverse of q_sample given the noise.
Image predict_x0(const Image& x_t, int t, const Image& eps, const NoiseSchedule& schedule);

nlohmann::json to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace cdpauth
