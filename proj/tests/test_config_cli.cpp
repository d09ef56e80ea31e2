#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cdpauth/config.hpp"
#include "cdpauth/error.hpp"

using namespace cdpauth;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string config_error(const json& user) {
    try {
        run_config_from_json(user);
    } catch (const InvalidConfiguration& e) {
        return e.what();
    }
    return "";
}

json tiny_run() {
    return json::parse(R"({
        "seed": 77,
        "dataset": {"n_templates": 10, "side": 16},
        "model": {"base_width": 8, "depth": 2, "image_side": 16, "time_embed_dim": 8, "class_embed_dim": 8},
        "train": {"epochs": 1, "batch_size": 16, "warmup_steps": 1, "augment": {"n_copies": 1, "crop_side": 12}},
        "classify": {"n_trials": 2},
        "codec": {"config": {"image_side": 16, "width": 4}, "train": {"epochs": 1}, "corpus_size": 16}
    })");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CDPAUTH_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config errors name the offending field") {
    CHECK(config_error({{"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(config_error({{"train", {{"epochz", 3}}}}).find("train.epochz") != std::string::npos);
    CHECK(config_error({{"train", {{"epochs", "ten"}}}}).find("train.epochs") != std::string::npos);
    CHECK(config_error({{"classify", {{"n_trials", 0}}}}).find("n_trials") != std::string::npos);
    CHECK(config_error({{"dataset", {{"side", 20}}}}) != "");
    CHECK(config_error({{"eval", {{"split_fractions", {0.5, 0.5, 0.5}}}}}) != "");
    CHECK(config_error(json::object()) == "");
}

TEST_CASE("defaults round-trip and the fingerprint tracks content") {
    const RunConfig d;
    const auto back = run_config_from_json(to_json(d));
    CHECK(config_fingerprint(back) == config_fingerprint(d));
    CHECK(to_json(back) == to_json(d));
    auto j = to_json(d);
    apply_override(j, "train.epochs=3");
    apply_override(j, "output_dir=somewhere/else");
    const auto changed = run_config_from_json(j);
    CHECK(changed.train.epochs == 3);
    CHECK(changed.output_dir == "somewhere/else");
    CHECK(config_fingerprint(changed) != config_fingerprint(d));
    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), InvalidConfiguration);
    RunConfig moved = d;
    moved.output_dir = "elsewhere";
    moved.workers = 4;
    CHECK(config_fingerprint(moved) == config_fingerprint(d));
}

TEST_CASE("sub-seeds derive from the root seed") {
    const auto a = derive_seeds(1), b = derive_seeds(1), c = derive_seeds(2);
    CHECK(a.train == b.train);
    CHECK(a.train != c.train);
    CHECK(a.dataset != a.split);
    RunConfig cfg;
    cfg.seed = 5;
    CHECK(resolved_hyperparams(cfg).seed == derive_seeds(5).train);
}

TEST_CASE("cli: exit codes and reproducible end-to-end output") {
    const fs::path root = fs::temp_directory_path() / "cdpauth_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    const fs::path cfg = root / "tiny.json";
    std::ofstream(cfg) << tiny_run().dump(2);

    CHECK(run_cli("--bogus-flag") != 0);
    CHECK(run_cli("synth -c " + (root / "missing.json").string()) == 3);
    CHECK(run_cli("synth --set nope=1 -o " + (root / "x").string()) == 2);
    CHECK(run_cli("train --variant nonsense -c " + cfg.string() + " -o " + (root / "x").string()) == 2);

    std::string reports[2];
    for (int i = 0; i < 2; ++i) {
        const std::string out = (root / ("run" + std::to_string(i))).string();
        const std::string common = " -c " + cfg.string() + " -o " + out;
        REQUIRE(run_cli("synth" + common) == 0);
        REQUIRE(run_cli("train --variant main" + common) == 0);
        REQUIRE(run_cli("eval --kind main" + common) == 0);
        reports[i] = slurp(fs::path(out) / "reports" / "main.json");
        CHECK(fs::exists(fs::path(out) / "config.resolved.json"));
        CHECK(fs::exists(fs::path(out) / "checkpoints" / "main.ckpt"));
    }
    CHECK(!reports[0].empty());
    CHECK(reports[0] == reports[1]);

    // A config that no longer matches the stored dataset is refused.
    const std::string out0 = (root / "run0").string();
    CHECK(run_cli("eval --kind main -c " + cfg.string() + " --set seed=78 -o " + out0) == 2);
    fs::remove_all(root);
}
