#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "cdpauth/classify.hpp"
#include "cdpauth/image.hpp"

namespace cdpauth {

enum class SimilarityMetric { ncc, ssim };
std::string to_string(SimilarityMetric m);
SimilarityMetric similarity_metric_from_string(const std::string& s);

// Zero-mean, unit-norm correlation in [-1, 1]. Throws DegenerateInput on a constant image.
double ncc(const Image& a, const Image& b);

struct SsimParams {
    int window = 8;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};
// Mean SSIM over every window position (stride 1, population statistics).
double ssim(const Image& a, const Image& b, const SsimParams& p = {});

double similarity(SimilarityMetric m, const Image& a, const Image& b);

struct ThresholdEntry {
    int class_id = 0;
    std::string label;
    SimilarityMetric metric = SimilarityMetric::ncc;
    double threshold = 0.0;
    std::string rule = "equal_error";
    double val_miss = 0.0;  // rates on the calibration scores at `threshold`
    double val_fa = 0.0;
};

struct ThresholdTable {
    std::vector<ThresholdEntry> entries;
    // nullptr when absent
    const ThresholdEntry* find(int class_id, SimilarityMetric m) const;
};

nlohmann::json to_json(const ThresholdTable& t);
ThresholdTable threshold_table_from_json(const nlohmann::json& j);

// Scores of one authentic class's validation probes and of the counterfeits
// whose source printer makes it their expected class.
struct CalibrationScores {
    int class_id = 0;
    std::string label;
    std::vector<double> authentic;
    std::vector<double> counterfeit;
};

// Miss rate (authentic < thr) and false-accept rate (counterfeit >= thr).
std::pair<double, double> rates_at(const CalibrationScores& s, double threshold);

// Equal-error threshold among the observed scores: minimizes |miss - fa|, ties
// to the lower threshold. Throws InsufficientData if either population is empty.
ThresholdEntry calibrate(const CalibrationScores& s, SimilarityMetric m);
ThresholdTable calibrate(const std::vector<CalibrationScores>& per_class, SimilarityMetric m);

// Authentic iff metric(probe, template) >= threshold of c_star. The predicted
// class is c_star on accept and kNoClass otherwise.
AuthDecision authenticate_similarity(const std::vector<PrinterClass>& classes, const Image& probe,
                                     const Image& template_image, int c_star, SimilarityMetric m,
                                     const ThresholdTable& table);

}  // namespace cdpauth
