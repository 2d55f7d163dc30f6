#pragma once
// Per-head separation analysis: splits a fitted mixture into a minority target
// group and a background group, scores how well the two separate, and picks
// the trigger-responsive heads.

#include <cstdint>
#include <span>
#include <vector>

#include "tcap/gmm.hpp"

namespace tcap::profiler {

struct ProfilerConfig {
    int l_sens = 8;
    int h_sens = 10;
    double epsilon = 1e-10;
    double minority_weight_threshold = 0.35;
    int n_grid = 4096;
};

struct Partition {
    std::vector<int> target;      // component indices, ascending
    std::vector<int> background;  // component indices, ascending
};

struct HeadProfile {
    int layer = 0;
    int head = 0;
    gmm::GmmModel model;
    std::vector<int> target_group;
    std::vector<int> background_group;
    double overlap = 1.0;
    double separation_score = 0.0;
    bool degenerate = false;
};

struct HeadRef {
    int layer = 0;
    int head = 0;
    double score = 0.0;

    bool operator==(const HeadRef&) const = default;
};

// Ordered by descending separation score.
using SensitiveHeadSet = std::vector<HeadRef>;

// K* = 1 gives an empty target. Otherwise the target is the longest prefix of
// the components in ascending-weight order whose cumulative weight stays below
// the threshold, or the single lightest component when that prefix is empty
// (equal weights resolve toward the higher mean).
Partition partition_components(const gmm::GmmModel& model, double minority_weight_threshold);

// Composite trapezoid estimate of the integral of min(target density,
// background density) over [min(mu - 6 sigma), max(mu + 6 sigma)].
double overlap_area(const gmm::GmmModel& model, std::span<const int> target, std::span<const int> background,
                    int n_grid);

double separation_score(double overlap, double epsilon);

// Fits, partitions and scores one head's alpha_sys series (raw values; the
// series is min-max normalised internally).
HeadProfile profile_head(int layer, int head, std::span<const double> raw_values, std::uint64_t seed,
                         const gmm::EmConfig& em, const ProfilerConfig& config);

// Keeps non-degenerate heads in layers >= num_layers - l_sens, sorts by
// descending score (ties: higher layer, then lower head) and truncates to
// h_sens. Throws EmptyCandidateSet when nothing remains.
SensitiveHeadSet rank_heads(std::span<const HeadProfile> profiles, int num_layers, int l_sens, int h_sens);

// First layer inside the sensitive window.
constexpr int first_sensitive_layer(int num_layers, int l_sens) noexcept {
    return l_sens >= num_layers ? 0 : num_layers - l_sens;
}

}  // namespace tcap::profiler
