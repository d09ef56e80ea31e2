#include <doctest.h>

#include <numeric>

#include "cdpauth/config.hpp"
#include "cdpauth/error.hpp"
#include "cdpauth/eval.hpp"
#include "cdpauth/experiment.hpp"

using namespace cdpauth;

namespace {

// n probes of one class, the first `wrong` of which get the wrong verdict.
void add(std::vector<LabeledDecision>& out, const std::vector<PrinterClass>& classes, int cls, int n, int wrong) {
    const int expected = expected_authentic_class(classes, cls);
    const bool authentic = classes[cls].is_authentic;
    for (int i = 0; i < n; ++i) {
        const bool accept = authentic ? i >= wrong : i < wrong;
        const int predicted = accept ? expected : (expected == 0 ? 1 : 0);
        out.push_back({cls, authenticate(classes, predicted, expected)});
    }
}

ClassificationRecord record(const std::vector<PrinterClass>& classes, int true_class, int predicted) {
    ClassificationRecord r;
    r.true_class = true_class;
    r.expected_class = expected_authentic_class(classes, true_class);
    for (const auto& c : classes) r.candidate_labels.push_back(c.label);
    r.scores.assign(classes.size(), 1.0);
    r.predicted_class = predicted;
    r.verdict = authenticate(classes, predicted, r.expected_class).verdict;
    return r;
}

}  // namespace

TEST_CASE("error rate from per-class rates reproduces the published operating point") {
    const auto classes = default_classes();
    std::vector<LabeledDecision> d;
    add(d, classes, 0, 500, 21);  // 0.042
    add(d, classes, 1, 500, 21);
    for (int c = 2; c < 6; ++c) add(d, classes, c, 200, 1);  // 0.005
    const auto m = auth_metrics(d, classes);
    CHECK(m.mean_p_miss == doctest::Approx(0.042));
    CHECK(m.mean_p_fa == doctest::Approx(0.005));
    CHECK(m.p_err == doctest::Approx(0.0235));
    CHECK(std::abs(m.p_err - 0.023) < 0.001);
    CHECK(m.n_authentic == 1000);
    CHECK(m.n_counterfeit == 800);
}

TEST_CASE("degenerate and perfect deciders") {
    const auto classes = default_classes();
    std::vector<LabeledDecision> reject_all, perfect;
    for (int c = 0; c < 6; ++c) {
        add(reject_all, classes, c, 7, classes[c].is_authentic ? 7 : 0);
        add(perfect, classes, c, 7, 0);
    }
    const auto r = auth_metrics(reject_all, classes);
    CHECK(r.mean_p_miss == 1.0);
    CHECK(r.mean_p_fa == 0.0);
    CHECK(r.p_err == 0.5);
    const auto p = auth_metrics(perfect, classes);
    CHECK(p.mean_p_miss == 0.0);
    CHECK(p.mean_p_fa == 0.0);
    CHECK(p.p_err == 0.0);
}

TEST_CASE("false accepts count against the counterfeit's own class") {
    const auto classes = default_classes();
    std::vector<LabeledDecision> d;
    add(d, classes, 0, 4, 0);
    add(d, classes, 5, 4, 2);  // HP76_55 accepted as HP76
    add(d, classes, 3, 4, 0);
    const auto m = auth_metrics(d, classes);
    REQUIRE(m.p_fa.size() == 2);
    CHECK(m.p_fa[0].label == "HP55_76");
    CHECK(m.p_fa[0].rate == 0.0);
    CHECK(m.p_fa[1].label == "HP76_55");
    CHECK(m.p_fa[1].rate == 0.5);
    CHECK(m.p_miss.size() == 1);
    CHECK(m.mean_p_fa == 0.25);
    const double recomputed = (m.mean_p_miss + m.mean_p_fa) / 2.0;
    CHECK(m.p_err == recomputed);

    const auto g = fa_group(m, "mixed", {"HP76_55", "HP55_55"});
    CHECK(g.p_fa == 0.5);
    CHECK(g.n == 4);
}

TEST_CASE("metrics need both populations") {
    const auto classes = default_classes();
    std::vector<LabeledDecision> only_auth, only_fake;
    add(only_auth, classes, 0, 3, 0);
    add(only_fake, classes, 2, 3, 0);
    CHECK_THROWS_AS(auth_metrics(only_auth, classes), InsufficientData);
    CHECK_THROWS_AS(auth_metrics(only_fake, classes), InsufficientData);
    CHECK_THROWS_AS(auth_metrics({}, classes), InsufficientData);
}

TEST_CASE("confusion rows are percentages of each true class") {
    const auto classes = default_classes();
    std::vector<ClassificationRecord> recs;
    for (int c = 0; c < 6; ++c)
        for (int i = 0; i < 3 + c; ++i) recs.push_back(record(classes, c, i == 0 ? (c + 1) % 6 : c));
    const auto m = confusion(recs, classes);
    REQUIRE(m.row_labels.size() == 6);
    REQUIRE(m.col_labels.size() == 6);
    for (std::size_t r = 0; r < 6; ++r) {
        CHECK(std::accumulate(m.percent[r].begin(), m.percent[r].end(), 0.0) == doctest::Approx(100.0));
        CHECK(std::accumulate(m.counts[r].begin(), m.counts[r].end(), 0) == 3 + static_cast<int>(r));
        CHECK(m.counts[r][r] == 2 + static_cast<int>(r));
    }
    CHECK_THROWS_AS(confusion({}, classes), InvalidArgument);
}

TEST_CASE("verdicts in records agree with the classification") {
    const auto classes = default_classes();
    for (int t = 0; t < 6; ++t)
        for (int p = 0; p < 6; ++p) {
            const auto r = record(classes, t, p);
            const auto l = labeled(r);
            CHECK(l.true_class == t);
            CHECK((l.decision.verdict == Verdict::authentic) == (p == r.expected_class));
        }
}

TEST_CASE("report text carries every class and the error rate") {
    const auto classes = default_classes();
    std::vector<LabeledDecision> d;
    std::vector<ClassificationRecord> recs;
    for (int c = 0; c < 6; ++c) {
        add(d, classes, c, 5, 1);
        recs.push_back(record(classes, c, c));
    }
    ExperimentReport rep;
    rep.kind = "main";
    rep.config_fingerprint = "0123456789abcdef";
    MetricsReport run;
    run.variant = "main";
    run.auth = auth_metrics(d, classes);
    run.confusion = confusion(recs, classes);
    run.accuracy = 1.0;
    run.n_classified = 6;
    run.baselines.push_back({"ncc", run.auth});
    rep.runs.push_back(run);
    const std::string text = format_report(rep);
    for (const auto& c : classes) CHECK(text.find(c.label) != std::string::npos);
    CHECK(text.find("P_err") != std::string::npos);
    CHECK(text.find("ncc") != std::string::npos);
    CHECK(format_report(to_json(rep)) == text);
    const auto j = to_json(rep);
    const auto& a = j.at("runs").at(0).at("auth");
    CHECK(a.at("p_err").get<double>() ==
          (a.at("mean_p_miss").get<double>() + a.at("mean_p_fa").get<double>()) / 2.0);
}

TEST_CASE("unseen-counterfeit variant trains on same-printer reprints only") {
    RunConfig c;
    const auto cls = variant_classes(c, ModelVariant::unseen);
    REQUIRE(cls.size() == 4);
    std::vector<std::string> labels;
    for (const auto& k : cls) labels.push_back(k.label);
    CHECK(labels == std::vector<std::string>{"HP55", "HP76", "HP55_55", "HP76_76"});
    for (std::size_t i = 0; i < cls.size(); ++i) CHECK(cls[i].class_id == static_cast<int>(i));
    CHECK(variant_classes(c, ModelVariant::main).size() == 6);
    CHECK(required_variants(ExperimentKind::ablation_identity).size() == 2);
}
