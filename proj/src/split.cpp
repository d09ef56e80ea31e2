#include "cdpauth/split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdpauth/error.hpp"
#include "cdpauth/rng.hpp"

namespace cdpauth {

SplitSpec split_by_template(const DatasetManifest& manifest, std::array<double, 3> fractions, std::uint64_t seed) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::any_of(fractions.begin(), fractions.end(), [](double f) { return !(f > 0.0); }) ||
        std::abs(total - 1.0) > 1e-9)
        throw InvalidArgument("split: fractions must be positive and sum to 1");

    std::vector<int> ids;
    for (const auto& s : manifest.samples)
        if (std::find(ids.begin(), ids.end(), s.template_id) == ids.end()) ids.push_back(s.template_id);
    std::sort(ids.begin(), ids.end());
    const int n = static_cast<int>(ids.size());
    if (n < 3) throw InvalidArgument("split: need at least 3 templates for 3 partitions, got " + std::to_string(n));

    Rng rng(derive_seed(seed, {seed_tag::split}));
    std::shuffle(ids.begin(), ids.end(), rng);

    std::array<int, 3> counts{};
    std::array<double, 3> remainders{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = fractions[i] * n;
        counts[i] = static_cast<int>(std::floor(exact + 1e-9));
        remainders[i] = exact - counts[i];
        assigned += counts[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainders[a] > remainders[b] + 1e-12; });
    for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
    // Every partition gets at least one template.
    for (int i = 0; i < 3; ++i)
        while (counts[i] == 0) {
            const int donor = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
            --counts[donor];
            ++counts[i];
        }

    SplitSpec s;
    s.fractions = fractions;
    s.seed = seed;
    s.train.assign(ids.begin(), ids.begin() + counts[0]);
    s.val.assign(ids.begin() + counts[0], ids.begin() + counts[0] + counts[1]);
    s.test.assign(ids.begin() + counts[0] + counts[1], ids.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.val.begin(), s.val.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

nlohmann::json to_json(const SplitSpec& s) {
    return {{"train", s.train}, {"val", s.val}, {"test", s.test}, {"fractions", s.fractions}, {"seed", s.seed}};
}

}  // namespace cdpauth
