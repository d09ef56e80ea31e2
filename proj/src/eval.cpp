#include "cdpauth/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "cdpauth/error.hpp"

namespace cdpauth {

ConfusionMatrix confusion(const std::vector<ClassificationRecord>& records, const std::vector<PrinterClass>& classes) {
    if (records.empty()) throw InvalidArgument("confusion: no records");
    ConfusionMatrix m;
    m.col_labels = records.front().candidate_labels;
    std::map<int, std::vector<int>> rows;
    for (const auto& r : records) {
        if (r.candidate_labels != m.col_labels) throw InvalidArgument("confusion: records disagree on the candidate set");
        if (r.true_class < 0 || r.true_class >= static_cast<int>(classes.size()))
            throw InvalidArgument("confusion: unknown true class");
        const std::string& predicted = classes.at(r.predicted_class).label;
        const auto col = std::find(m.col_labels.begin(), m.col_labels.end(), predicted) - m.col_labels.begin();
        if (col == static_cast<long>(m.col_labels.size())) throw InvalidArgument("confusion: prediction outside candidates");
        auto& row = rows[r.true_class];
        row.resize(m.col_labels.size());
        ++row[col];
    }
    for (auto& [cls, counts] : rows) {
        m.row_labels.push_back(classes[cls].label);
        int total = 0;
        for (int v : counts) total += v;
        std::vector<double> pct;
        for (int v : counts) pct.push_back(100.0 * v / total);
        m.counts.push_back(counts);
        m.percent.push_back(std::move(pct));
    }
    return m;
}

nlohmann::json to_json(const ConfusionMatrix& m) {
    return {{"rows", m.row_labels}, {"cols", m.col_labels}, {"counts", m.counts}, {"percent", m.percent}};
}

LabeledDecision labeled(const ClassificationRecord& r) {
    LabeledDecision d;
    d.true_class = r.true_class;
    d.decision.predicted_class = r.predicted_class;
    d.decision.expected_class = r.expected_class;
    d.decision.verdict = r.verdict;
    return d;
}

AuthMetrics auth_metrics(const std::vector<LabeledDecision>& decisions, const std::vector<PrinterClass>& classes) {
    const int k = static_cast<int>(classes.size());
    std::vector<int> n(k, 0), errors(k, 0);
    for (const auto& d : decisions) {
        if (d.true_class < 0 || d.true_class >= k) throw InvalidArgument("auth_metrics: unknown true class");
        ++n[d.true_class];
        const bool accepted = d.decision.verdict == Verdict::authentic;
        if (classes[d.true_class].is_authentic != accepted) ++errors[d.true_class];
    }
    AuthMetrics m;
    for (int c = 0; c < k; ++c) {
        if (n[c] == 0) continue;
        ClassRate r{classes[c].label, n[c], errors[c], static_cast<double>(errors[c]) / n[c]};
        if (classes[c].is_authentic) {
            m.n_authentic += n[c];
            m.p_miss.push_back(r);
        } else {
            m.n_counterfeit += n[c];
            m.p_fa.push_back(r);
        }
    }
    if (m.p_miss.empty()) throw InsufficientData("auth_metrics: no authentic probes");
    if (m.p_fa.empty()) throw InsufficientData("auth_metrics: no counterfeit probes");
    for (const auto& r : m.p_miss) m.mean_p_miss += r.rate;
    for (const auto& r : m.p_fa) m.mean_p_fa += r.rate;
    m.mean_p_miss /= m.p_miss.size();
    m.mean_p_fa /= m.p_fa.size();
    m.p_err = (m.mean_p_miss + m.mean_p_fa) / 2.0;
    return m;
}

namespace {

nlohmann::json rates_json(const std::vector<ClassRate>& rates) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rates) j.push_back({{"label", r.label}, {"n", r.n}, {"errors", r.errors}, {"rate", r.rate}});
    return j;
}

}  // namespace

nlohmann::json to_json(const AuthMetrics& m) {
    return {{"p_miss", rates_json(m.p_miss)}, {"p_fa", rates_json(m.p_fa)},   {"mean_p_miss", m.mean_p_miss},
            {"mean_p_fa", m.mean_p_fa},       {"p_err", m.p_err},             {"n_authentic", m.n_authentic},
            {"n_counterfeit", m.n_counterfeit}};
}

FaGroup fa_group(const AuthMetrics& m, const std::string& name, const std::vector<std::string>& labels) {
    FaGroup g{name, labels, 0.0, 0};
    int present = 0;
    for (const auto& r : m.p_fa)
        if (std::find(labels.begin(), labels.end(), r.label) != labels.end()) {
            g.p_fa += r.rate;
            g.n += r.n;
            ++present;
        }
    if (present == 0) throw InsufficientData("false-accept group '" + name + "' has no probes");
    g.p_fa /= present;
    return g;
}

nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j{{"variant", r.variant},
                     {"auth", to_json(r.auth)},
                     {"accuracy", r.accuracy},
                     {"n_classified", r.n_classified}};
    if (r.confusion) j["confusion"] = to_json(*r.confusion);
    if (!r.fa_groups.empty()) {
        auto& groups = j["fa_groups"] = nlohmann::json::array();
        for (const auto& g : r.fa_groups) groups.push_back({{"name", g.name}, {"labels", g.labels}, {"p_fa", g.p_fa}, {"n", g.n}});
    }
    if (!r.baselines.empty()) {
        auto& b = j["baselines"] = nlohmann::json::object();
        for (const auto& [name, m] : r.baselines) b[name] = to_json(m);
    }
    return j;
}

nlohmann::json to_json(const ExperimentReport& r) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& run : r.runs) runs.push_back(to_json(run));
    return {{"kind", r.kind},
            {"config_fingerprint", r.config_fingerprint},
            {"checkpoint_fingerprints", r.checkpoint_fingerprints},
            {"runs", runs}};
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width, bool right = false) {
    if (s.size() >= width) return s;
    const std::string fill(width - s.size(), ' ');
    return right ? fill + s : s + fill;
}

void auth_table(std::ostringstream& out, const std::string& name, const nlohmann::json& a) {
    out << "  " << name << "\n";
    out << "    P_miss:";
    for (const auto& r : a.at("p_miss")) out << "  " << r.at("label").get<std::string>() << " " << fmt("%.3f", r.at("rate"));
    out << "  | mean " << fmt("%.3f", a.at("mean_p_miss")) << "\n";
    out << "    P_fa:  ";
    for (const auto& r : a.at("p_fa")) out << "  " << r.at("label").get<std::string>() << " " << fmt("%.3f", r.at("rate"));
    out << "  | mean " << fmt("%.3f", a.at("mean_p_fa")) << "\n";
    out << "    P_err " << fmt("%.4f", a.at("p_err")) << "  (authentic n=" << a.at("n_authentic")
        << ", counterfeit n=" << a.at("n_counterfeit") << ")\n";
}

}  // namespace

std::string format_report(const nlohmann::json& report) {
    std::ostringstream out;
    out << "experiment " << report.at("kind").get<std::string>() << "\n";
    out << "config fingerprint " << report.at("config_fingerprint").get<std::string>() << "\n";
    for (const auto& f : report.at("checkpoint_fingerprints")) out << "checkpoint " << f.get<std::string>() << "\n";
    for (const auto& run : report.at("runs")) {
        out << "\n[" << run.at("variant").get<std::string>() << "]  accuracy " << fmt("%.3f", run.at("accuracy"))
            << " over " << run.at("n_classified") << " probes\n";
        auth_table(out, "diffusion classifier", run.at("auth"));
        if (run.contains("baselines"))
            for (const auto& [name, a] : run.at("baselines").items()) auth_table(out, name, a);
        if (run.contains("fa_groups"))
            for (const auto& g : run.at("fa_groups")) {
                out << "  " << g.at("name").get<std::string>() << " (";
                bool first = true;
                for (const auto& l : g.at("labels")) {
                    out << (first ? "" : ", ") << l.get<std::string>();
                    first = false;
                }
                out << ")  P_fa " << fmt("%.3f", g.at("p_fa")) << "\n";
            }
        if (run.contains("confusion")) {
            const auto& c = run.at("confusion");
            out << "  confusion (%), rows = true class\n" << pad("", 10);
            for (const auto& l : c.at("cols")) out << ' ' << pad(l.get<std::string>(), 8, true);
            out << "\n";
            for (std::size_t i = 0; i < c.at("rows").size(); ++i) {
                const std::string label = c.at("rows")[i].get<std::string>();
                out << "  " << pad(label, 8);
                for (const auto& v : c.at("percent")[i]) out << fmt(" %8.1f", v);
                out << "\n";
            }
        }
    }
    return out.str();
}

std::string format_report(const ExperimentReport& r) { return format_report(to_json(r)); }

}  // namespace cdpauth
