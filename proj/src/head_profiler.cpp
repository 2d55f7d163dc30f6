#include "tcap/head_profiler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tcap/error.hpp"

namespace tcap::profiler {

Partition partition_components(const gmm::GmmModel& model, double threshold) {
    Partition p;
    const int k = model.k();
    if (k <= 1) {
        for (int j = 0; j < k; ++j) p.background.push_back(j);
        return p;
    }
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const auto& ca = model.components[a];
        const auto& cb = model.components[b];
        if (ca.weight != cb.weight) return ca.weight < cb.weight;
        return ca.mean > cb.mean;
    });

    double cumulative = 0.0;
    std::size_t prefix = 0;
    // The background must keep at least one component.
    while (prefix + 1 < order.size() && cumulative + model.components[order[prefix]].weight < threshold) {
        cumulative += model.components[order[prefix]].weight;
        ++prefix;
    }
    if (prefix == 0) prefix = 1;

    p.target.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(prefix));
    p.background.assign(order.begin() + static_cast<std::ptrdiff_t>(prefix), order.end());
    std::sort(p.target.begin(), p.target.end());
    std::sort(p.background.begin(), p.background.end());
    return p;
}

double overlap_area(const gmm::GmmModel& model, std::span<const int> target, std::span<const int> background,
                    int n_grid) {
    if (target.empty() || background.empty()) throw std::invalid_argument("overlap_area: empty component group");
    if (n_grid < 2) throw std::invalid_argument("overlap_area: n_grid must be >= 2");

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& c : model.components) {
        const double sd = std::sqrt(c.variance);
        lo = std::min(lo, c.mean - 6.0 * sd);
        hi = std::max(hi, c.mean + 6.0 * sd);
    }

    auto group_density = [&](std::span<const int> group, double x) {
        double d = 0.0;
        for (int j : group) {
            const auto& c = model.components[j];
            d += c.weight * gmm::normal_pdf(x, c.mean, c.variance);
        }
        return d;
    };

    const double h = (hi - lo) / (n_grid - 1);
    double sum = 0.0;
    for (int i = 0; i < n_grid; ++i) {
        const double x = lo + h * i;
        const double f = std::min(group_density(target, x), group_density(background, x));
        sum += (i == 0 || i == n_grid - 1) ? 0.5 * f : f;
    }
    return sum * h;
}

double separation_score(double overlap, double epsilon) {
    return 1.0 / (overlap + epsilon);
}

HeadProfile profile_head(int layer, int head, std::span<const double> raw_values, std::uint64_t seed,
                         const gmm::EmConfig& em, const ProfilerConfig& config) {
    HeadProfile p;
    p.layer = layer;
    p.head = head;
    const gmm::NormalizedSeries norm = gmm::normalize_minmax(raw_values);
    p.model = gmm::select_model_order(norm.values, seed, em);
    const Partition part = partition_components(p.model, config.minority_weight_threshold);
    p.target_group = part.target;
    p.background_group = part.background;
    if (norm.degenerate || p.model.k() == 1) {
        p.degenerate = true;
        p.overlap = 1.0;
    } else {
        p.overlap = overlap_area(p.model, part.target, part.background, config.n_grid);
    }
    p.separation_score = separation_score(p.overlap, config.epsilon);
    return p;
}

SensitiveHeadSet rank_heads(std::span<const HeadProfile> profiles, int num_layers, int l_sens, int h_sens) {
    if (l_sens < 1 || h_sens < 1) throw std::invalid_argument("rank_heads: l_sens and h_sens must be >= 1");
    const int first = first_sensitive_layer(num_layers, l_sens);

    SensitiveHeadSet candidates;
    for (const auto& p : profiles) {
        if (p.degenerate || p.layer < first || p.layer >= num_layers) continue;
        candidates.push_back({p.layer, p.head, p.separation_score});
    }
    if (candidates.empty()) {
        throw EmptyCandidateSet("no non-degenerate head in the last " + std::to_string(l_sens) + " layers");
    }
    std::sort(candidates.begin(), candidates.end(), [](const HeadRef& a, const HeadRef& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.layer != b.layer) return a.layer > b.layer;
        return a.head < b.head;
    });
    candidates.erase(std::unique(candidates.begin(), candidates.end(),
                                 [](const HeadRef& a, const HeadRef& b) { return a.layer == b.layer && a.head == b.head; }),
                     candidates.end());
    if (candidates.size() > static_cast<std::size_t>(h_sens)) candidates.resize(static_cast<std::size_t>(h_sens));
    return candidates;
}

}  // namespace tcap::profiler
