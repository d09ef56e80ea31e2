#include "cdpauth/experiment.hpp"

#include <algorithm>

#include "cdpauth/checkpoint.hpp"
#include "cdpauth/error.hpp"

namespace cdpauth {

std::string to_string(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::main: return "main";
    case ExperimentKind::unseen_counterfeit: return "unseen_counterfeit";
    case ExperimentKind::ablation_no_template: return "ablation_no_template";
    case ExperimentKind::ablation_identity: return "ablation_identity";
    }
    return "?";
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
    for (auto k : {ExperimentKind::main, ExperimentKind::unseen_counterfeit, ExperimentKind::ablation_no_template,
                   ExperimentKind::ablation_identity})
        if (to_string(k) == s) return k;
    throw InvalidArgument("unknown experiment kind '" + s + "'");
}

std::string to_string(ModelVariant v) {
    switch (v) {
    case ModelVariant::main: return "main";
    case ModelVariant::unseen: return "unseen";
    case ModelVariant::no_template: return "no_template";
    case ModelVariant::identity_index: return "identity_index";
    }
    return "?";
}

ModelVariant model_variant_from_string(const std::string& s) {
    for (auto v : {ModelVariant::main, ModelVariant::unseen, ModelVariant::no_template, ModelVariant::identity_index})
        if (to_string(v) == s) return v;
    throw InvalidArgument("unknown model variant '" + s + "'");
}

std::vector<ModelVariant> required_variants(ExperimentKind k) {
    switch (k) {
    case ExperimentKind::main: return {ModelVariant::main};
    case ExperimentKind::unseen_counterfeit: return {ModelVariant::unseen};
    case ExperimentKind::ablation_no_template: return {ModelVariant::no_template};
    case ExperimentKind::ablation_identity: return {ModelVariant::identity_index, ModelVariant::main};
    }
    return {};
}

std::vector<PrinterClass> variant_classes(const RunConfig& c, ModelVariant v) {
    if (v != ModelVariant::unseen) return c.classes;
    std::vector<PrinterClass> out;
    for (const auto& cls : c.classes)
        if (cls.is_authentic || cls.reprint_printer() == cls.source_printer()) {
            PrinterClass copy = cls;
            copy.class_id = static_cast<int>(out.size());
            out.push_back(copy);
        }
    return out;
}

DenoiserConfig variant_model_config(const RunConfig& c, ModelVariant v) {
    DenoiserConfig m = c.model;
    if (v == ModelVariant::no_template) m.x0_source = X0Source::printed_probe;
    if (v == ModelVariant::identity_index) m.identity_mode = IdentityMode::index;
    return m;
}

SplitSpec make_split(const RunConfig& c, const DatasetManifest& manifest) {
    return split_by_template(manifest, c.split_fractions, derive_seeds(c.seed).split);
}

PreparedData prepare_data(const RunConfig& c) {
    PreparedData d;
    d.dataset = build_dataset(c.classes, c.n_templates, derive_seeds(c.seed).dataset, c.side);
    d.split = make_split(c, d.dataset.manifest);
    return d;
}

Checkpoint train_variant(const RunConfig& c, const PreparedData& data, ModelVariant v, const ProgressFn& progress) {
    Denoiser model(variant_model_config(c, v), variant_classes(c, v), c.schedule.steps(), derive_seeds(c.seed).init);
    Checkpoint ck = train(model, c.schedule, data.dataset, data.split, resolved_hyperparams(c), progress);
    ck.training.config_fingerprint = config_fingerprint(c);
    return ck;
}

std::string checkpoint_fingerprint(const Checkpoint& ck) {
    nlohmann::json meta{{"config", to_json(ck.config)},
                        {"schedule", to_json(ck.schedule)},
                        {"classes", to_json(ck.classes)},
                        {"config_fingerprint", ck.training.config_fingerprint}};
    std::vector<float> blob;
    for (const auto& [name, values] : ck.params) blob.insert(blob.end(), values.begin(), values.end());
    return fingerprint(meta, blob);
}

void check_compatible(const RunConfig& c, ModelVariant v, const Checkpoint& ck) {
    const auto expected = variant_classes(c, v);
    if (to_json(ck.classes) != to_json(expected)) {
        std::string have, want;
        for (const auto& cls : ck.classes) have += (have.empty() ? "" : ",") + cls.label;
        for (const auto& cls : expected) want += (want.empty() ? "" : ",") + cls.label;
        throw CompatibilityError("checkpoint class table [" + have + "] does not match the " + to_string(v) +
                                 " model's [" + want + "]");
    }
    if (!(ck.config == variant_model_config(c, v)))
        throw CompatibilityError("checkpoint model config differs from the " + to_string(v) + " variant of this config");
    if (to_json(ck.schedule) != to_json(c.schedule))
        throw CompatibilityError("checkpoint noise schedule differs from the config's");
}

namespace {

// (template, class) pairs of a split in template_id, class_id order.
std::vector<const PrintedCdp*> split_prints(const Dataset& ds, const std::vector<int>& template_ids) {
    std::vector<const PrintedCdp*> out;
    for (const auto& p : ds.prints)
        if (std::binary_search(template_ids.begin(), template_ids.end(), p.template_id)) out.push_back(&p);
    std::sort(out.begin(), out.end(), [](const PrintedCdp* a, const PrintedCdp* b) {
        return std::pair(a->template_id, a->class_id) < std::pair(b->template_id, b->class_id);
    });
    return out;
}

std::vector<int> sorted(std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
}

MetricsReport evaluate_model(const RunConfig& c, const PreparedData& data, const Checkpoint& ck, const std::string& name,
                             std::vector<ClassificationRecord>& records_out) {
    const auto& ds = data.dataset;
    const auto& classes = ds.manifest.classes;
    auto model = load_model(ck);
    const bool self_x0 = ck.config.x0_source == X0Source::printed_probe;
    std::vector<Probe> probes;
    for (const PrintedCdp* p : split_prints(ds, sorted(data.split.test)))
        probes.push_back({p->template_id, p->class_id, self_x0 ? &p->pixels : &ds.template_for(*p).pixels, &p->pixels});
    DenoiserPredictor predictor(*model);
    records_out = classify_probes(predictor, ck.schedule, classes, ck.classes, probes, c.n_trials,
                                  derive_seeds(c.seed).classify, c.workers);

    MetricsReport r;
    r.variant = name;
    std::vector<LabeledDecision> decisions;
    int correct = 0;
    for (const auto& rec : records_out) {
        decisions.push_back(labeled(rec));
        const auto& labels = rec.candidate_labels;
        if (std::find(labels.begin(), labels.end(), classes[rec.true_class].label) == labels.end()) continue;
        ++r.n_classified;
        correct += rec.predicted_class == rec.true_class;
    }
    r.accuracy = r.n_classified ? static_cast<double>(correct) / r.n_classified : 0.0;
    r.auth = auth_metrics(decisions, classes);
    r.confusion = confusion(records_out, classes);
    return r;
}

}  // namespace

BaselineResult run_baseline(const Dataset& ds, const SplitSpec& split, SimilarityMetric m) {
    const auto& classes = ds.manifest.classes;
    std::vector<CalibrationScores> cal;
    for (const auto& cls : classes)
        if (cls.is_authentic) cal.push_back({cls.class_id, cls.label, {}, {}});
    auto slot = [&](int expected) -> CalibrationScores& {
        for (auto& s : cal)
            if (s.class_id == expected) return s;
        throw InvalidConfiguration("no authentic class for expected id " + std::to_string(expected));
    };
    for (const PrintedCdp* p : split_prints(ds, sorted(split.val))) {
        const double score = similarity(m, p->pixels, ds.template_for(*p).pixels);
        auto& s = slot(expected_authentic_class(classes, p->class_id));
        (classes[p->class_id].is_authentic ? s.authentic : s.counterfeit).push_back(score);
    }
    BaselineResult out;
    out.thresholds = calibrate(cal, m);
    std::vector<LabeledDecision> decisions;
    for (const PrintedCdp* p : split_prints(ds, sorted(split.test))) {
        const int expected = expected_authentic_class(classes, p->class_id);
        decisions.push_back({p->class_id, authenticate_similarity(classes, p->pixels, ds.template_for(*p).pixels,
                                                                  expected, m, out.thresholds)});
    }
    out.metrics = auth_metrics(decisions, classes);
    return out;
}

ExperimentResult run_experiment(ExperimentKind kind, const RunConfig& c, const PreparedData& data,
                                const std::map<ModelVariant, Checkpoint>& checkpoints, const LogFn& log) {
    for (auto v : required_variants(kind)) {
        const auto it = checkpoints.find(v);
        if (it == checkpoints.end())
            throw InvalidConfiguration("experiment " + to_string(kind) + " needs a trained '" + to_string(v) +
                                       "' checkpoint");
        check_compatible(c, v, it->second);
    }
    if (to_json(data.dataset.manifest.classes) != to_json(c.classes))
        throw CompatibilityError("dataset class table differs from the config's");

    ExperimentResult result;
    result.report.kind = to_string(kind);
    result.report.config_fingerprint = config_fingerprint(c);
    auto evaluate = [&](ModelVariant v, const std::string& name) {
        const auto& ck = checkpoints.at(v);
        result.report.checkpoint_fingerprints.push_back(checkpoint_fingerprint(ck));
        if (log) log("classifying test probes with the " + name + " model");
        std::vector<ClassificationRecord> records;
        result.report.runs.push_back(evaluate_model(c, data, ck, name, records));
        result.records.emplace_back(name, std::move(records));
        return &result.report.runs.back();
    };

    switch (kind) {
    case ExperimentKind::main: {
        MetricsReport* run = evaluate(ModelVariant::main, "main");
        for (auto m : {SimilarityMetric::ncc, SimilarityMetric::ssim}) {
            if (log) log("calibrating the " + to_string(m) + " baseline");
            auto b = run_baseline(data.dataset, data.split, m);
            run->baselines.emplace_back(to_string(m), b.metrics);
            result.thresholds.emplace_back(to_string(m), std::move(b.thresholds));
        }
        break;
    }
    case ExperimentKind::unseen_counterfeit: {
        MetricsReport* run = evaluate(ModelVariant::unseen, "unseen_counterfeit");
        std::vector<std::string> known, unseen;
        const auto trained = variant_classes(c, ModelVariant::unseen);
        for (const auto& cls : c.classes) {
            if (cls.is_authentic) continue;
            const bool seen = find_class(trained, cls.label) >= 0;
            (seen ? known : unseen).push_back(cls.label);
        }
        run->fa_groups.push_back(fa_group(run->auth, "known_counterfeit", known));
        run->fa_groups.push_back(fa_group(run->auth, "unseen_counterfeit", unseen));
        break;
    }
    case ExperimentKind::ablation_no_template:
        evaluate(ModelVariant::no_template, "no_template");
        break;
    case ExperimentKind::ablation_identity:
        evaluate(ModelVariant::identity_index, "identity_index");
        evaluate(ModelVariant::main, "identity_structured");
        break;
    }
    return result;
}

ExperimentResult run_pipeline(ExperimentKind kind, const RunConfig& c, const LogFn& log) {
    c.validate();
    const PreparedData data = prepare_data(c);
    std::map<ModelVariant, Checkpoint> checkpoints;
    for (auto v : required_variants(kind)) {
        if (log) log("training the " + to_string(v) + " model");
        checkpoints.emplace(v, train_variant(c, data, v, [&](int epoch, double loss) {
                                if (log) log("  epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
                            }));
    }
    return run_experiment(kind, c, data, checkpoints, log);
}

}  // namespace cdpauth
