#include "cdpauth/config.hpp"

#include <fstream>

#include "cdpauth/checkpoint.hpp"
#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"

namespace cdpauth {

RunSeeds derive_seeds(std::uint64_t root) {
    return {derive_seed(root, {seed_tag::dataset}), derive_seed(root, {seed_tag::split}),
            derive_seed(root, {seed_tag::init}),    derive_seed(root, {seed_tag::train}),
            derive_seed(root, {seed_tag::classify}), derive_seed(root, {seed_tag::codec})};
}

Hyperparams resolved_hyperparams(const RunConfig& c) {
    Hyperparams h = c.train;
    h.seed = derive_seeds(c.seed).train;
    return h;
}

CodecHyperparams resolved_codec_hyperparams(const RunConfig& c) {
    CodecHyperparams h = c.codec_train;
    h.seed = derive_seeds(c.seed).codec;
    return h;
}

void RunConfig::validate() const {
    if (n_templates < 3) throw InvalidConfiguration("dataset.n_templates must be at least 3");
    if (side < 8) throw InvalidConfiguration("dataset.side must be at least 8");
    validate_class_table(classes);
    model.validate();
    if (model.image_side != side)
        throw InvalidConfiguration("model.image_side (" + std::to_string(model.image_side) +
                                   ") must equal dataset.side (" + std::to_string(side) + ")");
    if (!model.accepts_side(side)) throw InvalidConfiguration("dataset.side is not accepted by the model depth");
    train.augment.validate(side);
    if (train.batch_size < 1 || train.epochs < 0 || !(train.lr >= 0.0))
        throw InvalidConfiguration("train: batch_size >= 1, epochs >= 0 and lr >= 0 required");
    if (n_trials < 1) throw InvalidConfiguration("classify.n_trials must be at least 1");
    if (workers < 1) throw InvalidConfiguration("workers must be at least 1");
    double total = 0.0;
    for (double f : split_fractions) {
        if (!(f > 0.0)) throw InvalidConfiguration("eval.split_fractions must be positive");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidConfiguration("eval.split_fractions must sum to 1");
    codec.validate();
    if (codec.image_side != side) throw InvalidConfiguration("codec.config.image_side must equal dataset.side");
    if (codec_corpus < 1) throw InvalidConfiguration("codec.corpus_size must be positive");
}

nlohmann::json to_json(const RunConfig& c) {
    auto train = to_json(c.train);
    train.erase("seed");
    auto codec_train = to_json(c.codec_train);
    codec_train.erase("seed");
    return {{"seed", c.seed},
            {"output_dir", c.output_dir},
            {"workers", c.workers},
            {"dataset", {{"n_templates", c.n_templates}, {"side", c.side}, {"classes", to_json(c.classes)}}},
            {"schedule", to_json(c.schedule)},
            {"model", to_json(c.model)},
            {"train", train},
            {"classify", {{"n_trials", c.n_trials}}},
            {"eval", {{"split_fractions", c.split_fractions}}},
            {"codec", {{"config", to_json(c.codec)}, {"train", codec_train}, {"corpus_size", c.codec_corpus}}}};
}

namespace {

std::string kind_name(const nlohmann::json& j) {
    if (j.is_object()) return "an object";
    if (j.is_array()) return "an array";
    if (j.is_boolean()) return "a boolean";
    if (j.is_number_integer()) return "an integer";
    if (j.is_number()) return "a number";
    if (j.is_string()) return "a string";
    return "null";
}

// Structural check of `user` against the fully populated defaults.
void check_fields(const nlohmann::json& user, const nlohmann::json& reference, const std::string& path) {
    if (reference.is_object()) {
        if (!user.is_object()) throw InvalidConfiguration("config field '" + path + "' must be an object");
        for (const auto& [key, value] : user.items()) {
            const std::string child = path.empty() ? key : path + "." + key;
            if (!reference.contains(key)) throw InvalidConfiguration("unknown config field '" + child + "'");
            check_fields(value, reference.at(key), child);
        }
        return;
    }
    bool ok;
    if (reference.is_number_integer())
        ok = user.is_number_integer();
    else if (reference.is_number())
        ok = user.is_number();
    else
        ok = user.type() == reference.type();
    if (!ok) throw InvalidConfiguration("config field '" + path + "' must be " + kind_name(reference) + ", got " + kind_name(user));
}

template <typename F>
auto section(const std::string& name, F&& parse) {
    try {
        return parse();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration("config field '" + name + "': " + e.what());
    } catch (const InvalidArgument& e) {
        throw InvalidConfiguration("config field '" + name + "': " + e.what());
    }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& user) {
    const RunConfig defaults;
    nlohmann::json merged = to_json(defaults);
    check_fields(user, merged, "");
    merged.merge_patch(user);

    RunConfig c;
    c.seed = section("seed", [&] { return merged.at("seed").get<std::uint64_t>(); });
    c.output_dir = merged.at("output_dir").get<std::string>();
    c.workers = merged.at("workers").get<int>();
    const auto& ds = merged.at("dataset");
    c.n_templates = ds.at("n_templates").get<int>();
    c.side = ds.at("side").get<int>();
    c.classes = section("dataset.classes", [&] { return classes_from_json(ds.at("classes")); });
    c.schedule = section("schedule", [&] { return schedule_from_json(merged.at("schedule")); });
    c.model = section("model", [&] { return denoiser_config_from_json(merged.at("model")); });
    c.train = section("train", [&] { return hyperparams_from_json(merged.at("train")); });
    c.n_trials = merged.at("classify").at("n_trials").get<int>();
    c.split_fractions =
        section("eval.split_fractions", [&] { return merged.at("eval").at("split_fractions").get<std::array<double, 3>>(); });
    const auto& codec = merged.at("codec");
    c.codec = section("codec.config", [&] { return codec_config_from_json(codec.at("config")); });
    c.codec_train = section("codec.train", [&] { return codec_hyperparams_from_json(codec.at("train")); });
    c.codec_corpus = codec.at("corpus_size").get<int>();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfiguration("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void apply_override(nlohmann::json& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidConfiguration("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    nlohmann::json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw InvalidConfiguration("override key '" + key + "' has an empty component");
        if (!node->is_object()) *node = nlohmann::json::object();
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

// Where results are written and how many threads compute them do not change them.
std::string config_fingerprint(const RunConfig& c) {
    auto j = to_json(c);
    j.erase("output_dir");
    j.erase("workers");
    return fingerprint(j);
}

}  // namespace cdpauth
