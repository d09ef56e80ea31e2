#include "cdpauth/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cdpauth/error.hpp"

namespace cdpauth {

std::string to_string(SimilarityMetric m) { return m == SimilarityMetric::ncc ? "ncc" : "ssim"; }

SimilarityMetric similarity_metric_from_string(const std::string& s) {
    if (s == "ncc") return SimilarityMetric::ncc;
    if (s == "ssim") return SimilarityMetric::ssim;
    throw InvalidArgument("unknown similarity metric '" + s + "'");
}

double ncc(const Image& a, const Image& b) {
    if (!a.same_shape(b) || a.px.empty()) throw InvalidArgument("ncc: shape mismatch");
    const double ma = mean(a), mb = mean(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double da = a.px[i] - ma, db = b.px[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) throw DegenerateInput("ncc: constant image");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double ssim(const Image& a, const Image& b, const SsimParams& p) {
    if (!a.same_shape(b)) throw InvalidArgument("ssim: shape mismatch");
    const int w = p.window;
    if (w < 1 || a.rows < w || a.cols < w) throw InvalidArgument("ssim: image smaller than the window");
    const double c1 = (p.k1 * p.range) * (p.k1 * p.range);
    const double c2 = (p.k2 * p.range) * (p.k2 * p.range);
    const double n = static_cast<double>(w) * w;
    double total = 0.0;
    int count = 0;
    for (int r0 = 0; r0 + w <= a.rows; ++r0)
        for (int c0 = 0; c0 + w <= a.cols; ++c0) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int r = r0; r < r0 + w; ++r)
                for (int c = c0; c < c0 + w; ++c) {
                    const double x = a(r, c), y = b(r, c);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            const double mx = sa / n, my = sb / n;
            const double vx = saa / n - mx * mx, vy = sbb / n - my * my, cxy = sab / n - mx * my;
            total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    return total / count;
}

double similarity(SimilarityMetric m, const Image& a, const Image& b) {
    return m == SimilarityMetric::ncc ? ncc(a, b) : ssim(a, b);
}

const ThresholdEntry* ThresholdTable::find(int class_id, SimilarityMetric m) const {
    for (const auto& e : entries)
        if (e.class_id == class_id && e.metric == m) return &e;
    return nullptr;
}

nlohmann::json to_json(const ThresholdTable& t) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : t.entries)
        arr.push_back({{"class_id", e.class_id},
                       {"label", e.label},
                       {"metric", to_string(e.metric)},
                       {"threshold", e.threshold},
                       {"rule", e.rule},
                       {"val_miss", e.val_miss},
                       {"val_fa", e.val_fa}});
    return arr;
}

ThresholdTable threshold_table_from_json(const nlohmann::json& j) {
    ThresholdTable t;
    for (const auto& e : j) {
        ThresholdEntry x;
        x.class_id = e.at("class_id").get<int>();
        x.label = e.at("label").get<std::string>();
        x.metric = similarity_metric_from_string(e.at("metric").get<std::string>());
        x.threshold = e.at("threshold").get<double>();
        x.rule = e.at("rule").get<std::string>();
        x.val_miss = e.value("val_miss", 0.0);
        x.val_fa = e.value("val_fa", 0.0);
        if (!std::isfinite(x.threshold)) throw InvalidConfiguration("threshold for " + x.label + " is not finite");
        t.entries.push_back(std::move(x));
    }
    return t;
}

std::pair<double, double> rates_at(const CalibrationScores& s, double threshold) {
    const auto misses = std::count_if(s.authentic.begin(), s.authentic.end(), [&](double v) { return v < threshold; });
    const auto accepts =
        std::count_if(s.counterfeit.begin(), s.counterfeit.end(), [&](double v) { return v >= threshold; });
    return {static_cast<double>(misses) / s.authentic.size(), static_cast<double>(accepts) / s.counterfeit.size()};
}

ThresholdEntry calibrate(const CalibrationScores& s, SimilarityMetric m) {
    if (s.authentic.empty() || s.counterfeit.empty())
        throw InsufficientData("calibrate: class " + s.label + " lacks authentic or counterfeit validation scores");
    std::set<double> candidates(s.authentic.begin(), s.authentic.end());
    candidates.insert(s.counterfeit.begin(), s.counterfeit.end());
    ThresholdEntry best;
    best.class_id = s.class_id;
    best.label = s.label;
    best.metric = m;
    double best_gap = 2.0;
    for (double thr : candidates) {  // ascending, so strict < keeps the lower threshold on ties
        const auto [miss, fa] = rates_at(s, thr);
        const double gap = std::abs(miss - fa);
        if (gap < best_gap) {
            best_gap = gap;
            best.threshold = thr;
            best.val_miss = miss;
            best.val_fa = fa;
        }
    }
    return best;
}

ThresholdTable calibrate(const std::vector<CalibrationScores>& per_class, SimilarityMetric m) {
    ThresholdTable t;
    for (const auto& s : per_class) t.entries.push_back(calibrate(s, m));
    return t;
}

AuthDecision authenticate_similarity(const std::vector<PrinterClass>& classes, const Image& probe,
                                     const Image& template_image, int c_star, SimilarityMetric m,
                                     const ThresholdTable& table) {
    const auto* entry = table.find(c_star, m);
    if (!entry) throw InvalidArgument("no " + to_string(m) + " threshold for class " + std::to_string(c_star));
    const bool accept = similarity(m, probe, template_image) >= entry->threshold;
    return authenticate(classes, accept ? c_star : kNoClass, c_star);
}

}  // namespace cdpauth
