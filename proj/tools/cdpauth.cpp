#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdpauth/checkpoint.hpp"
#include "cdpauth/classify.hpp"
#include "cdpauth/codec.hpp"
#include "cdpauth/config.hpp"
#include "cdpauth/error.hpp"
#include "cdpauth/experiment.hpp"
#include "cdpauth/rng.hpp"

namespace fs = std::filesystem;
using namespace cdpauth;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kValidation = 2, kIo = 3, kDiverged = 4 };

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
};

RunConfig resolve(const Common& o) {
    nlohmann::json user = nlohmann::json::object();
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        if (!in) throw IoError("cannot read config file " + o.config_path);
        try {
            in >> user;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidConfiguration("config file " + o.config_path + " is not valid JSON: " + e.what());
        }
    }
    for (const auto& s : o.overrides) apply_override(user, s);
    if (!o.out.empty()) user["output_dir"] = o.out;
    return run_config_from_json(user);
}

void write_text(const fs::path& path, const std::string& text) {
    if (!path.parent_path().empty()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

// Every command leaves the resolved config and its fingerprint in the output directory.
fs::path stamp_output(const RunConfig& c) {
    const fs::path dir = c.output_dir;
    write_text(dir / "config.resolved.json", to_json(c).dump(2) + "\n");
    write_text(dir / "fingerprint.txt", config_fingerprint(c) + "\n");
    return dir;
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

Dataset load_matching_dataset(const RunConfig& c) {
    const fs::path dir = fs::path(c.output_dir) / "dataset";
    Dataset ds = load_dataset(dir);
    const auto& m = ds.manifest;
    if (m.side != c.side || m.n_templates != c.n_templates || m.seed != derive_seeds(c.seed).dataset ||
        to_json(m.classes) != to_json(c.classes))
        throw CompatibilityError("dataset in " + dir.string() + " was synthesized from a different config; rerun synth");
    return ds;
}

fs::path checkpoint_path(const RunConfig& c, ModelVariant v) {
    return fs::path(c.output_dir) / "checkpoints" / (to_string(v) + ".ckpt");
}

int cmd_synth(const Common& o) {
    const RunConfig c = resolve(o);
    const fs::path dir = stamp_output(c);
    const Dataset ds = build_dataset(c.classes, c.n_templates, derive_seeds(c.seed).dataset, c.side);
    write_dataset(dir / "dataset", ds);
    const SplitSpec split = make_split(c, ds.manifest);
    write_text(dir / "dataset" / "split.json", to_json(split).dump(2) + "\n");
    std::cout << "wrote " << ds.prints.size() << " prints of " << c.n_templates << " templates to "
              << (dir / "dataset").string() << "\n";
    return kOk;
}

int cmd_train(const Common& o, const std::string& variant_name) {
    const RunConfig c = resolve(o);
    const ModelVariant v = model_variant_from_string(variant_name);
    const fs::path dir = stamp_output(c);
    PreparedData data;
    data.dataset = load_matching_dataset(c);
    data.split = make_split(c, data.dataset.manifest);
    const Checkpoint ck = train_variant(c, data, v, [](int epoch, double loss) {
        log_line("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
    });
    const fs::path path = checkpoint_path(c, v);
    fs::create_directories(path.parent_path());
    save_checkpoint(path, ck);
    nlohmann::json log{{"variant", to_string(v)},
                       {"config_fingerprint", ck.training.config_fingerprint},
                       {"checkpoint_fingerprint", checkpoint_fingerprint(ck)},
                       {"loss_curve", ck.training.loss_curve},
                       {"loss_curve_smoothed", ck.training.loss_curve_smoothed},
                       {"val_loss_init", ck.training.val_loss_init},
                       {"val_loss_final", ck.training.val_loss_final},
                       {"steps", ck.training.steps}};
    write_text(dir / "checkpoints" / (to_string(v) + ".loss.json"), log.dump(2) + "\n");
    std::cout << "wrote " << path.string() << " (val loss " << ck.training.val_loss_init << " -> "
              << ck.training.val_loss_final << ")\n";
    return kOk;
}

int cmd_train_codec(const Common& o, const std::string& corpus_name) {
    const RunConfig c = resolve(o);
    const CorpusTag tag = corpus_tag_from_string(corpus_name);
    if (tag == CorpusTag::none) throw InvalidArgument("--corpus must be templates or generic");
    const fs::path dir = stamp_output(c);
    const auto hp = resolved_codec_hyperparams(c);
    const auto corpus = tag == CorpusTag::templates ? template_corpus(c.codec_corpus, c.side, hp.seed)
                                                    : generic_corpus(c.codec_corpus, c.side, hp.seed);
    auto codec = train_codec(corpus, tag, c.codec, hp);

    // Held out: the dataset's test-split templates.
    const Dataset ds = load_matching_dataset(c);
    const SplitSpec split = make_split(c, ds.manifest);
    std::vector<Image> held_out;
    for (int t : split.test) held_out.push_back(ds.templates.at(t).pixels);
    const double mse = recon_mse(*codec, held_out);

    const fs::path path = dir / "codecs" / (corpus_name + ".ckpt");
    fs::create_directories(path.parent_path());
    save_codec(path, *codec, hp.seed);
    nlohmann::json report{{"kind", "codec"},
                          {"corpus", corpus_name},
                          {"config_fingerprint", config_fingerprint(c)},
                          {"train_loss_init", codec->training().loss_init},
                          {"train_loss_final", codec->training().loss_final},
                          {"loss_curve", codec->training().loss_curve},
                          {"held_out_templates", held_out.size()},
                          {"held_out_mse", mse}};
    write_text(dir / "codecs" / (corpus_name + ".json"), report.dump(2) + "\n");
    std::cout << corpus_name << " codec: held-out template MSE " << mse << "\n";
    return kOk;
}

int cmd_classify(const Common& o, const std::string& ckpt_path, const std::string& template_path,
                 const std::string& probe_path, const std::string& expected_label) {
    const RunConfig c = resolve(o);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    auto model = load_model(ck);
    const Image probe = read_png(probe_path);
    const Image x0 = ck.config.x0_source == X0Source::printed_probe ? probe : read_png(template_path);
    std::vector<int> candidates;
    for (const auto& cls : ck.classes) candidates.push_back(cls.class_id);
    DenoiserPredictor predictor(*model);
    const auto result = classify(predictor, ck.schedule, x0, probe, candidates, c.n_trials, derive_seeds(c.seed).classify);
    nlohmann::json scores = nlohmann::json::object();
    for (std::size_t i = 0; i < candidates.size(); ++i) scores[ck.classes[candidates[i]].label] = result.scores.errors[i];
    nlohmann::json out{{"scores", scores},
                       {"predicted_class", ck.classes[result.predicted].label},
                       {"n_trials", c.n_trials}};
    if (!expected_label.empty()) {
        const int expected = find_class(ck.classes, expected_label);
        if (expected < 0) throw InvalidArgument("--expected: class " + expected_label + " is not in the checkpoint");
        out["expected_class"] = expected_label;
        out["verdict"] = to_string(authenticate(ck.classes, result.predicted, expected).verdict);
    }
    std::cout << out.dump(2) << "\n";
    return kOk;
}

int cmd_eval(const Common& o, const std::string& kind_name, const std::vector<std::string>& ckpt_args) {
    const RunConfig c = resolve(o);
    const ExperimentKind kind = experiment_kind_from_string(kind_name);
    const fs::path dir = stamp_output(c);
    const auto variants = required_variants(kind);

    std::map<ModelVariant, fs::path> paths;
    std::size_t positional = 0;
    for (const auto& arg : ckpt_args) {
        const auto eq = arg.find('=');
        if (eq != std::string::npos) {
            paths[model_variant_from_string(arg.substr(0, eq))] = arg.substr(eq + 1);
        } else {
            if (positional >= variants.size()) throw InvalidArgument("too many --checkpoint paths for " + kind_name);
            paths[variants[positional++]] = arg;
        }
    }
    std::map<ModelVariant, Checkpoint> checkpoints;
    for (auto v : variants) {
        const fs::path p = paths.count(v) ? paths[v] : checkpoint_path(c, v);
        if (!fs::exists(p))
            throw InvalidConfiguration("experiment " + kind_name + " needs the " + to_string(v) + " checkpoint at " +
                                       p.string() + " (run: cdpauth train --variant " + to_string(v) + ")");
        checkpoints.emplace(v, load_checkpoint(p));
    }

    PreparedData data;
    data.dataset = load_matching_dataset(c);
    data.split = make_split(c, data.dataset.manifest);
    const auto result = run_experiment(kind, c, data, checkpoints, log_line);

    const fs::path reports = dir / "reports";
    write_text(reports / (kind_name + ".json"), to_json(result.report).dump(2) + "\n");
    write_text(reports / (kind_name + ".txt"), format_report(result.report));
    for (const auto& [name, records] : result.records) {
        std::string lines;
        for (const auto& r : records) {
            auto j = to_json(r, data.dataset.manifest.classes);
            j["config_fingerprint"] = result.report.config_fingerprint;
            lines += j.dump() + "\n";
        }
        write_text(reports / (kind_name + "." + name + ".records.jsonl"), lines);
    }
    for (const auto& [metric, table] : result.thresholds) {
        nlohmann::json j{{"config_fingerprint", result.report.config_fingerprint}, {"thresholds", to_json(table)}};
        write_text(reports / (kind_name + "." + metric + ".thresholds.json"), j.dump(2) + "\n");
    }
    std::cout << format_report(result.report);
    return kOk;
}

int cmd_report(const std::vector<std::string>& files) {
    for (const auto& f : files) {
        std::ifstream in(f);
        if (!in) throw IoError("cannot read report " + f);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidConfiguration("report " + f + " is not valid JSON: " + e.what());
        }
        if (j.value("kind", std::string()) == "codec") {
            std::printf("codec (%s corpus): train MSE %.4f -> %.4f, held-out template MSE %.4f\n",
                        j.at("corpus").get<std::string>().c_str(), j.at("train_loss_init").get<double>(),
                        j.at("train_loss_final").get<double>(), j.at("held_out_mse").get<double>());
        } else {
            std::cout << format_report(j);
        }
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Copy detection pattern authentication with a class-conditioned diffusion classifier"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", common.config_path, "JSON run config (defaults when omitted)");
        sub->add_option("--set", common.overrides, "override a config field, e.g. --set train.epochs=10");
        sub->add_option("-o,--out", common.out, "output directory (overrides output_dir)");
    };

    auto* synth = app.add_subcommand("synth", "synthesize the printed-CDP dataset");
    add_common(synth);

    std::string variant = "main";
    auto* train_cmd = app.add_subcommand("train", "train a denoiser variant");
    add_common(train_cmd);
    train_cmd->add_option("--variant", variant, "main | unseen | no_template | identity_index");

    std::string corpus = "templates";
    auto* train_codec_cmd = app.add_subcommand("train-codec", "train a template codec");
    add_common(train_codec_cmd);
    train_codec_cmd->add_option("--corpus", corpus, "templates | generic");

    std::string ckpt, template_png, probe_png, expected;
    auto* classify_cmd = app.add_subcommand("classify", "classify and authenticate one probe");
    add_common(classify_cmd);
    classify_cmd->add_option("--checkpoint", ckpt, "denoiser checkpoint")->required();
    classify_cmd->add_option("--template", template_png, "binary template PNG");
    classify_cmd->add_option("--probe", probe_png, "printed probe PNG")->required();
    classify_cmd->add_option("--expected", expected, "authentic class label of the probe's source printer");

    std::string kind = "main";
    std::vector<std::string> eval_ckpts;
    auto* eval_cmd = app.add_subcommand("eval", "run an experiment on the test split");
    add_common(eval_cmd);
    eval_cmd->add_option("--kind", kind, "main | unseen_counterfeit | ablation_no_template | ablation_identity");
    eval_cmd->add_option("--checkpoint", eval_ckpts, "checkpoint path or variant=path (default: <out>/checkpoints)");

    std::vector<std::string> report_files;
    auto* report_cmd = app.add_subcommand("report", "print report JSON files as tables");
    report_cmd->add_option("files", report_files, "report JSON files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*synth) return cmd_synth(common);
        if (*train_cmd) return cmd_train(common, variant);
        if (*train_codec_cmd) return cmd_train_codec(common, corpus);
        if (*classify_cmd) {
            if (template_png.empty() && load_checkpoint(ckpt).config.x0_source == X0Source::template_image)
                throw InvalidArgument("--template is required for this checkpoint");
            return cmd_classify(common, ckpt, template_png, probe_png, expected);
        }
        if (*eval_cmd) return cmd_eval(common, kind, eval_ckpts);
        if (*report_cmd) return cmd_report(report_files);
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDiverged;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const InvalidConfiguration& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const CompatibilityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const InsufficientData& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const DegenerateInput& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
