#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cdpauth/baselines.hpp"
#include "cdpauth/classify.hpp"
#include "cdpauth/config.hpp"
#include "cdpauth/denoiser.hpp"
#include "cdpauth/eval.hpp"
#include "cdpauth/split.hpp"

namespace cdpauth {

enum class ExperimentKind { main, unseen_counterfeit, ablation_no_template, ablation_identity };
std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

// Trained models an experiment may need.
enum class ModelVariant { main, unseen, no_template, identity_index };
std::string to_string(ModelVariant v);
ModelVariant model_variant_from_string(const std::string& s);

std::vector<ModelVariant> required_variants(ExperimentKind k);

// Class table a variant is trained on. `unseen` keeps the authentic classes and
// the counterfeits reprinted on their own source printer, renumbered from 0.
std::vector<PrinterClass> variant_classes(const RunConfig& c, ModelVariant v);
DenoiserConfig variant_model_config(const RunConfig& c, ModelVariant v);

struct PreparedData {
    Dataset dataset;
    SplitSpec split;
};

PreparedData prepare_data(const RunConfig& c);
SplitSpec make_split(const RunConfig& c, const DatasetManifest& manifest);

Checkpoint train_variant(const RunConfig& c, const PreparedData& data, ModelVariant v, const ProgressFn& progress = {});

// Digest of a checkpoint's metadata and parameter values.
std::string checkpoint_fingerprint(const Checkpoint& ck);

// Throws CompatibilityError unless `ck` was trained as variant `v` of config `c`.
void check_compatible(const RunConfig& c, ModelVariant v, const Checkpoint& ck);

struct BaselineResult {
    ThresholdTable thresholds;
    AuthMetrics metrics;
};

// Thresholds calibrated on the validation split, metrics on the test split.
BaselineResult run_baseline(const Dataset& ds, const SplitSpec& split, SimilarityMetric m);

struct ExperimentResult {
    ExperimentReport report;
    // per run variant: classification records in (template_id, class_id) order
    std::vector<std::pair<std::string, std::vector<ClassificationRecord>>> records;
    std::vector<std::pair<std::string, ThresholdTable>> thresholds;
};

using LogFn = std::function<void(const std::string&)>;

ExperimentResult run_experiment(ExperimentKind kind, const RunConfig& c, const PreparedData& data,
                                const std::map<ModelVariant, Checkpoint>& checkpoints, const LogFn& log = {});

// Data synthesis, training of every required variant, and evaluation, all in memory.
ExperimentResult run_pipeline(ExperimentKind kind, const RunConfig& c, const LogFn& log = {});

}  // namespace cdpauth
