#include "cdpauth/classify.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"

namespace cdpauth {

std::vector<Image> DenoiserPredictor::predict(const std::vector<NoiseQuery>& queries) const {
    std::vector<Image> out;
    out.reserve(queries.size());
    const int side = m_model->config().image_side;
    for (std::size_t start = 0; start < queries.size(); start += m_chunk) {
        const std::size_t stop = std::min(queries.size(), start + m_chunk);
        DenoiserBatch<float> batch;
        batch.side = side;
        const auto n = static_cast<Eigen::Index>(stop - start);
        batch.x_t.resize(1, n * side * side);
        batch.z.resize(1, n * side * side);
        Eigen::Index k = 0;
        for (std::size_t i = start; i < stop; ++i) {
            const auto& q = queries[i];
            if (q.x_t->rows != side || q.x_t->cols != side || !q.z->same_shape(*q.x_t))
                throw InvalidArgument("classify: images must be " + std::to_string(side) + "x" + std::to_string(side));
            for (std::size_t p = 0; p < q.x_t->px.size(); ++p, ++k) {
                batch.x_t(0, k) = static_cast<float>(q.x_t->px[p]);
                batch.z(0, k) = static_cast<float>(q.z->px[p]);
            }
            batch.timesteps.push_back(q.t);
            batch.class_ids.push_back(q.class_id);
        }
        const auto eps = m_model->infer(batch);
        k = 0;
        for (std::size_t i = start; i < stop; ++i) {
            Image img(side, side);
            for (double& v : img.px) v = eps(0, k++);
            out.push_back(std::move(img));
        }
    }
    return out;
}

TrialDraw trial_draw(std::uint64_t seed, int trial, int rows, int cols, int steps) {
    Rng rng(derive_seed(seed, {seed_tag::classify, static_cast<std::uint64_t>(trial)}));
    std::uniform_int_distribution<int> tdist(1, steps);
    std::normal_distribution<double> n(0.0, 1.0);
    TrialDraw d;
    d.t = tdist(rng);
    d.eps = Image(rows, cols);
    for (double& v : d.eps.px) v = n(rng);
    return d;
}

int argmin_class(const std::vector<int>& class_ids, const std::vector<double>& errors) {
    if (class_ids.empty() || class_ids.size() != errors.size()) throw InvalidArgument("argmin over an empty class set");
    std::size_t best = 0;
    for (std::size_t i = 1; i < class_ids.size(); ++i)
        if (errors[i] < errors[best] || (errors[i] == errors[best] && class_ids[i] < class_ids[best])) best = i;
    return class_ids[best];
}

Classification classify(const NoisePredictor& model, const NoiseSchedule& schedule, const Image& x0,
                        const Image& probe, const std::vector<int>& candidates, int n_trials, std::uint64_t seed,
                        const TrialObserver& observer) {
    if (candidates.empty()) throw InvalidArgument("classify: empty candidate class set");
    if (n_trials < 1) throw InvalidArgument("classify: n_trials must be >= 1");
    if (!x0.same_shape(probe)) throw InvalidArgument("classify: template and probe shapes differ");
    for (int c : candidates)
        if (c < 0 || c >= model.num_classes()) throw InvalidArgument("classify: unknown class id " + std::to_string(c));

    const Image x0s = to_signed(x0);
    const Image zs = to_signed(probe);
    std::vector<TrialDraw> draws;
    std::vector<Image> noised;
    draws.reserve(n_trials);
    for (int j = 0; j < n_trials; ++j) {
        draws.push_back(trial_draw(seed, j, x0.rows, x0.cols, schedule.steps()));
        noised.push_back(q_sample(x0s, draws.back().t, draws.back().eps, schedule));
    }

    std::vector<NoiseQuery> queries;
    queries.reserve(candidates.size() * n_trials);
    for (int c : candidates)
        for (int j = 0; j < n_trials; ++j) {
            queries.push_back({&noised[j], draws[j].t, &zs, c});
            if (observer) observer(c, j, draws[j]);
        }
    const auto predicted = model.predict(queries);

    Classification out;
    out.scores.class_ids = candidates;
    out.scores.n_trials = n_trials;
    out.scores.seed = seed;
    std::size_t q = 0;
    for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
        double total = 0.0;
        for (int j = 0; j < n_trials; ++j, ++q) {
            double sq = 0.0;
            const auto& eps = draws[j].eps.px;
            const auto& hat = predicted[q].px;
            for (std::size_t p = 0; p < eps.size(); ++p) sq += (eps[p] - hat[p]) * (eps[p] - hat[p]);
            total += sq;
        }
        out.scores.errors.push_back(total / n_trials);
    }
    out.predicted = argmin_class(out.scores.class_ids, out.scores.errors);
    return out;
}

double class_error(const NoisePredictor& model, const NoiseSchedule& schedule, const Image& x0, const Image& probe,
                   int class_id, int n_trials, std::uint64_t seed, const TrialObserver& observer) {
    return classify(model, schedule, x0, probe, {class_id}, n_trials, seed, observer).scores.errors.front();
}

std::string to_string(Verdict v) { return v == Verdict::authentic ? "Authentic" : "Counterfeit"; }

AuthDecision authenticate(const std::vector<PrinterClass>& classes, int predicted, int expected) {
    const int k = static_cast<int>(classes.size());
    if (expected < 0 || expected >= k) throw InvalidArgument("authenticate: unknown expected class");
    if (predicted != kNoClass && (predicted < 0 || predicted >= k))
        throw InvalidArgument("authenticate: unknown predicted class");
    if (!classes[expected].is_authentic)
        throw InvalidArgument("authenticate: expected class " + classes[expected].label + " is a counterfeit class");
    AuthDecision d;
    d.predicted_class = predicted;
    d.expected_class = expected;
    d.verdict = predicted == expected ? Verdict::authentic : Verdict::counterfeit;
    return d;
}

nlohmann::json to_json(const ClassificationRecord& r, const std::vector<PrinterClass>& classes) {
    nlohmann::json scores = nlohmann::json::object();
    for (std::size_t i = 0; i < r.candidate_labels.size(); ++i) scores[r.candidate_labels[i]] = r.scores[i];
    return {{"template_id", r.template_id},
            {"true_class", classes.at(r.true_class).label},
            {"expected_class", classes.at(r.expected_class).label},
            {"scores", scores},
            {"predicted_class", r.predicted_class == kNoClass ? std::string() : classes.at(r.predicted_class).label},
            {"verdict", to_string(r.verdict)}};
}

std::vector<ClassificationRecord> classify_probes(const NoisePredictor& model, const NoiseSchedule& schedule,
                                                  const std::vector<PrinterClass>& dataset_classes,
                                                  const std::vector<PrinterClass>& model_classes,
                                                  const std::vector<Probe>& probes, int n_trials, std::uint64_t seed,
                                                  int workers) {
    std::vector<int> candidates;
    std::vector<std::string> labels;
    for (const auto& c : model_classes) {
        if (find_class(dataset_classes, c.label) < 0)
            throw CompatibilityError("model class " + c.label + " is absent from the dataset class table");
        candidates.push_back(c.class_id);
        labels.push_back(c.label);
    }

    std::vector<ClassificationRecord> records(probes.size());
    auto work = [&](std::size_t i) {
        const auto& p = probes[i];
        const auto probe_seed = derive_seed(seed, {seed_tag::classify, static_cast<std::uint64_t>(p.template_id),
                                                   static_cast<std::uint64_t>(p.class_id)});
        const auto result = classify(model, schedule, *p.x0, *p.pixels, candidates, n_trials, probe_seed);
        ClassificationRecord r;
        r.template_id = p.template_id;
        r.true_class = p.class_id;
        r.expected_class = expected_authentic_class(dataset_classes, p.class_id);
        if (r.expected_class < 0)
            throw InvalidConfiguration("no authentic class for the source printer of " +
                                       dataset_classes.at(p.class_id).label);
        r.candidate_labels = labels;
        r.scores = result.scores.errors;
        r.predicted_class = find_class(dataset_classes, model_classes.at(result.predicted).label);
        r.verdict = authenticate(dataset_classes, r.predicted_class, r.expected_class).verdict;
        records[i] = std::move(r);
    };

    workers = std::max(1, workers);
    if (workers == 1 || probes.size() < 2) {
        for (std::size_t i = 0; i < probes.size(); ++i) work(i);
        return records;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < probes.size();) {
                try {
                    work(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return records;
}

}  // namespace cdpauth
