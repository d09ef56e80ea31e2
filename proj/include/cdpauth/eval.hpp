#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdpauth/classify.hpp"
#include "cdpauth/synth.hpp"

namespace cdpauth {

// Rows = true classes that have records, columns = candidate classes; row-normalized percentages.
struct ConfusionMatrix {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    std::vector<std::vector<int>> counts;
    std::vector<std::vector<double>> percent;
};

ConfusionMatrix confusion(const std::vector<ClassificationRecord>& records, const std::vector<PrinterClass>& classes);

nlohmann::json to_json(const ConfusionMatrix& m);

// An authentication outcome together with the probe's true class.
struct LabeledDecision {
    int true_class = 0;
    AuthDecision decision;
};

LabeledDecision labeled(const ClassificationRecord& r);

struct ClassRate {
    std::string label;
    int n = 0;
    int errors = 0;
    double rate = 0.0;
};

struct AuthMetrics {
    std::vector<ClassRate> p_miss;  // authentic classes: fraction rejected
    std::vector<ClassRate> p_fa;    // counterfeit classes: fraction accepted
    double mean_p_miss = 0.0;
    double mean_p_fa = 0.0;
    double p_err = 0.0;
    int n_authentic = 0;
    int n_counterfeit = 0;
};

// Per-class rates over the classes that have probes; a false accept counts against
// the counterfeit's own class. Throws InsufficientData if either population is absent.
AuthMetrics auth_metrics(const std::vector<LabeledDecision>& decisions, const std::vector<PrinterClass>& classes);

nlohmann::json to_json(const AuthMetrics& m);

// Mean false-accept rate over a named subset of counterfeit classes.
struct FaGroup {
    std::string name;
    std::vector<std::string> labels;
    double p_fa = 0.0;
    int n = 0;
};

FaGroup fa_group(const AuthMetrics& m, const std::string& name, const std::vector<std::string>& labels);

struct MetricsReport {
    std::string variant;
    AuthMetrics auth;
    std::optional<ConfusionMatrix> confusion;
    double accuracy = 0.0;     // over probes whose true class is a candidate
    int n_classified = 0;
    std::vector<FaGroup> fa_groups;
    std::vector<std::pair<std::string, AuthMetrics>> baselines;
};

struct ExperimentReport {
    std::string kind;
    std::string config_fingerprint;
    std::vector<std::string> checkpoint_fingerprints;
    std::vector<MetricsReport> runs;
};

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const ExperimentReport& r);

// Human-readable tables, from a report or its serialized form.
std::string format_report(const ExperimentReport& r);
std::string format_report(const nlohmann::json& report);

}  // namespace cdpauth
