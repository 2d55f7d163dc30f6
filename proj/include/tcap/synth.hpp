#pragma once
// Deterministic synthetic attention dumps with planted allocation anomalies
// and ground-truth labels.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcap/attention_store.hpp"
#include "tcap/entropy.hpp"

namespace tcap::synth {

// suppressed: poisoned alpha_sys drops by the shift and vision gains it.
// amplified: the reverse.
enum class AnomalyKind { suppressed, amplified };

std::string to_string(AnomalyKind kind);
AnomalyKind parse_anomaly_kind(const std::string& name);

struct ResponsiveHead {
    int layer = 0;
    int head = 0;
    AnomalyKind kind = AnomalyKind::suppressed;

    bool operator==(const ResponsiveHead&) const = default;
};

enum class TriggerShape { patch, global };

// Optional visual-token rows for the entropy baseline.
struct VisualRowSpec {
    bool enabled = false;
    int tokens = 64;
    int trigger_tokens = 4;
    TriggerShape shape = TriggerShape::patch;
    double concentration = 0.9;  // share of alpha_vis put on the trigger mask (patch only)
    int layer = -1;              // -1: first responsive head
    int head = -1;
};

struct SynthSpec {
    std::int64_t num_samples = 2000;
    int num_layers = 32;
    int num_heads = 32;
    double poison_rate = 0.10;
    // Explicit responsive heads; when empty, num_responsive heads are drawn
    // from the last responsive_window layers, the first half suppressed and the
    // rest amplified.
    std::vector<ResponsiveHead> responsive_heads;
    int num_responsive = 12;
    int responsive_window = 8;
    double clean_mean_min = 0.3;  // per-head clean alpha_sys mean ~ U(min, max)
    double clean_mean_max = 0.6;
    double clean_std = 0.03;
    double shift = 0.2;
    double noise_heads_std = 0.03;
    double excluded_mass_max = 0.02;  // share of residual mass outside the three spans
    std::uint64_t seed = 42;
    std::string source = "tcap-synth";
    VisualRowSpec visual;

    // Throws SpecInvalid.
    void validate() const;
};

nlohmann::ordered_json to_json(const SynthSpec& spec);
SynthSpec spec_from_json(const nlohmann::json& j, SynthSpec base = {});
SynthSpec load_spec(const std::filesystem::path& path, SynthSpec base = {});

struct SynthDataset {
    store::AttentionStore store;
    store::LabelMap labels;
    std::vector<ResponsiveHead> responsive;
    std::vector<entropy::VisualAttentionRow> visual_rows;
};

// Resolves the responsive head list (explicit or drawn from the seed).
std::vector<ResponsiveHead> resolve_responsive_heads(const SynthSpec& spec);

SynthDataset generate_synthetic_dataset(const SynthSpec& spec);

struct DatasetPaths {
    std::filesystem::path dump;
    std::filesystem::path manifest;
    std::filesystem::path labels;
    std::filesystem::path visual;  // empty when no visual rows were generated
};

// Writes dump.jsonl, manifest.json, labels.jsonl (and visual.jsonl) into out_dir.
DatasetPaths write_synthetic_dataset(const SynthDataset& dataset, const std::filesystem::path& out_dir);

}  // namespace tcap::synth
