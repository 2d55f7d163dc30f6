#pragma once
// Visual-attention entropy statistic, its patch/global upper bounds, and an
// entropy-based baseline detector used for comparisons on synthetic data.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tcap/gmm.hpp"

namespace tcap::entropy {

struct VisualAttentionRow {
    std::string sample_id;
    int layer = 0;
    int head = 0;
    std::vector<double> weights;               // a_i >= 0, sum <= 1
    std::optional<std::vector<bool>> trigger_mask;  // synthetic only

    double mass() const noexcept;
};

// Throws ValidationError on negative weights or mass > 1 + 1e-9.
void validate_row(const VisualAttentionRow& row);

// -sum a_i ln a_i over a_i > 0.
double attention_entropy(std::span<const double> weights) noexcept;

// alpha * ln(s_trig / alpha).
double patch_entropy_bound(double alpha_vis, int s_trig);

// alpha * ln(t / alpha).
double global_entropy_bound(double alpha_vis, int t);

// Converts a natural-log entropy to another base for reporting.
double to_base(double nats, double base);

// Visual row stream: one JSON object per line,
// {"sample_id", "layer", "head", "visual_row": [...], "trigger_mask"?: [...]}.
std::vector<VisualAttentionRow> read_visual_rows(const std::filesystem::path& path);
std::string format_visual_row(const VisualAttentionRow& row);

struct BaselineVerdict {
    std::vector<std::string> sample_ids;  // sorted
    std::vector<double> entropy;
    std::vector<std::uint8_t> flagged;
    gmm::GmmModel model;
    std::vector<int> low_group;  // components treated as the low-entropy tail
};

// Flags samples whose entropy falls in the low-entropy minority mode of a
// mixture fitted to the min-max normalised entropies. Rows for one (layer,
// head) are expected; with several rows per sample their entropies are
// averaged.
BaselineVerdict entropy_baseline(std::span<const VisualAttentionRow> rows, std::uint64_t seed,
                                 const gmm::EmConfig& em, double minority_weight_threshold = 0.35);

}  // namespace tcap::entropy
