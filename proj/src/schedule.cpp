#include "cdpauth/schedule.hpp"

#include <string>

#include "cdpauth/error.hpp"

namespace cdpauth {

NoiseSchedule NoiseSchedule::make(int steps, double beta_start, double beta_end, ScheduleKind kind) {
    if (steps < 2) throw InvalidArgument("schedule: T must be >= 2, got " + std::to_string(steps));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw InvalidArgument("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.m_kind = kind;
    s.m_beta_start = beta_start;
    s.m_beta_end = beta_end;
    s.m_beta.resize(steps);
    s.m_alpha_bar.resize(steps);
    double running = 1.0;
    for (int i = 0; i < steps; ++i) {
        s.m_beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
        running *= 1.0 - s.m_beta[i];
        s.m_alpha_bar[i] = running;
    }
    return s;
}

Image q_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& schedule) {
    if (!x0.same_shape(eps)) throw InvalidArgument("q_sample: x0 and eps shapes differ");
    if (t < 1 || t > schedule.steps())
        throw InvalidArgument("q_sample: timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(schedule.steps()) + "]");
    const double a = schedule.signal_scale(t), b = schedule.noise_scale(t);
    Image out(x0.rows, x0.cols);
    for (std::size_t i = 0; i < x0.px.size(); ++i) out.px[i] = a * x0.px[i] + b * eps.px[i];
    return out;
}

Image predict_x0(const Image& x_t, int t, const Image& eps, const NoiseSchedule& schedule) {
    if (!x_t.same_shape(eps)) throw InvalidArgument("predict_x0: shapes differ");
    if (t < 1 || t > schedule.steps()) throw InvalidArgument("predict_x0: timestep out of range");
    const double a = schedule.signal_scale(t), b = schedule.noise_scale(t);
    Image out(x_t.rows, x_t.cols);
    for (std::size_t i = 0; i < x_t.px.size(); ++i) out.px[i] = (x_t.px[i] - b * eps.px[i]) / a;
    return out;
}

nlohmann::json to_json(const NoiseSchedule& s) {
    return {{"kind", "linear"}, {"steps", s.steps()}, {"beta_start", s.beta_start()}, {"beta_end", s.beta_end()}};
}

NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    if (j.value("kind", std::string("linear")) != "linear")
        throw InvalidConfiguration("schedule.kind: only 'linear' is supported");
    return NoiseSchedule::make(j.at("steps").get<int>(), j.at("beta_start").get<double>(),
                               j.at("beta_end").get<double>());
}

}  // namespace cdpauth
