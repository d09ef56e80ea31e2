#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdpauth/denoiser.hpp"
#include "cdpauth/image.hpp"
#include "cdpauth/schedule.hpp"
#include "cdpauth/synth.hpp"

namespace cdpauth {

struct NoiseQuery {
    const Image* x_t = nullptr;  // diffusion space
    int t = 1;
    const Image* z = nullptr;    // diffusion space
    int class_id = 0;
};

// Anything that predicts eps from (x_t, t, z, c). The trained denoiser is one;
// tests plug in analytic oracles.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual int num_classes() const = 0;
    virtual std::vector<Image> predict(const std::vector<NoiseQuery>& queries) const = 0;
};

class DenoiserPredictor : public NoisePredictor {
public:
    explicit DenoiserPredictor(const Denoiser& model, int chunk = 60) : m_model(&model), m_chunk(chunk) {}
    int num_classes() const override { return m_model->num_classes(); }
    std::vector<Image> predict(const std::vector<NoiseQuery>& queries) const override;

private:
    const Denoiser* m_model;
    int m_chunk;
};

// Trial j's (t, eps) depends only on (seed, j): t ~ U{1..T}, eps ~ N(0, I).
struct TrialDraw {
    int t = 1;
    Image eps;
};
TrialDraw trial_draw(std::uint64_t seed, int trial, int rows, int cols, int steps);

// Called once per (class, trial) with the draw used for it.
using TrialObserver = std::function<void(int class_id, int trial, const TrialDraw& draw)>;

// Mean over trials of ||eps_j - f(q_sample(x0, t_j, eps_j), t_j, z, c)||^2 (sum over pixels).
// x0 and probe are [0,1] images.
double class_error(const NoisePredictor& model, const NoiseSchedule& schedule, const Image& x0, const Image& probe,
                   int class_id, int n_trials, std::uint64_t seed, const TrialObserver& observer = {});

struct ClassScores {
    std::vector<int> class_ids;
    std::vector<double> errors;  // aligned with class_ids
    int n_trials = 0;
    std::uint64_t seed = 0;
};

struct Classification {
    int predicted = -1;
    ClassScores scores;
};

// argmin over `candidates` of class_error, every class scored on the same draws.
// Ties go to the lowest class id.
Classification classify(const NoisePredictor& model, const NoiseSchedule& schedule, const Image& x0,
                        const Image& probe, const std::vector<int>& candidates, int n_trials, std::uint64_t seed,
                        const TrialObserver& observer = {});

int argmin_class(const std::vector<int>& class_ids, const std::vector<double>& errors);

enum class Verdict { authentic, counterfeit };
std::string to_string(Verdict v);

inline constexpr int kNoClass = -1;

struct AuthDecision {
    int predicted_class = kNoClass;
    int expected_class = kNoClass;
    Verdict verdict = Verdict::counterfeit;
    std::optional<ClassScores> scores;
};

// Authentic iff predicted == expected. `expected` must name an authentic class.
AuthDecision authenticate(const std::vector<PrinterClass>& classes, int predicted, int expected);

// One line of the batch classification log.
struct ClassificationRecord {
    int template_id = 0;
    int true_class = 0;      // dataset class id
    int expected_class = 0;  // dataset class id of the authentic printer
    std::vector<std::string> candidate_labels;
    std::vector<double> scores;
    int predicted_class = kNoClass;  // dataset class id
    Verdict verdict = Verdict::counterfeit;
};

nlohmann::json to_json(const ClassificationRecord& r, const std::vector<PrinterClass>& classes);

struct Probe {
    int template_id = 0;
    int class_id = 0;  // dataset class id
    const Image* x0 = nullptr;
    const Image* pixels = nullptr;
};

// Classifies each probe against `model_classes` (the checkpoint's table), maps the
// prediction back to dataset ids by label, and authenticates against the probe's
// source printer. Probes run on up to `workers` threads; output order = input order.
std::vector<ClassificationRecord> classify_probes(const NoisePredictor& model, const NoiseSchedule& schedule,
                                                  const std::vector<PrinterClass>& dataset_classes,
                                                  const std::vector<PrinterClass>& model_classes,
                                                  const std::vector<Probe>& probes, int n_trials, std::uint64_t seed,
                                                  int workers = 1);

}  // namespace cdpauth
