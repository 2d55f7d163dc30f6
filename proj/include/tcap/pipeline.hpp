#pragma once
// End-to-end detection: profile the sensitive layers, pick the
// trigger-responsive heads, vote, aggregate and filter.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcap/attention_store.hpp"
#include "tcap/config.hpp"
#include "tcap/head_profiler.hpp"
#include "tcap/vote.hpp"

namespace tcap {

struct SampleVerdict {
    std::string sample_id;
    double posterior = 0.0;
    bool flagged = false;  // posterior > 0.5

    bool operator==(const SampleVerdict&) const = default;
};

struct VerdictSummary {
    std::size_t num_samples = 0;
    std::size_t num_flagged = 0;
    std::size_t num_kept = 0;
    std::size_t num_profiled_heads = 0;
    std::size_t num_degenerate_heads = 0;
    int ds_iterations = 0;
    bool ds_converged = false;
    double prior_poisoned = 0.0;
    bool empty_candidate_set = false;
    std::vector<std::string> warnings;

    bool operator==(const VerdictSummary&) const = default;
};

struct VerdictReport {
    RunConfig config;
    std::string source;
    std::vector<profiler::HeadRef> heads;
    std::vector<SampleVerdict> samples;
    VerdictSummary summary;

    std::vector<std::uint8_t> flags() const;
    std::vector<std::string> sample_ids() const;
    std::vector<std::string> clean_ids() const;
};

struct DetectionResult {
    VerdictReport report;
    std::vector<profiler::HeadProfile> profiles;  // heads of the sensitive layers
    vote::VoteMatrix votes;
    std::optional<vote::DawidSkeneState> aggregation;
};

// Seed used for the mixture fits of one head.
std::uint64_t head_seed(std::uint64_t seed, int layer, int head) noexcept;

// Profiles every head with layer >= first_layer, in (layer, head) order.
std::vector<profiler::HeadProfile> profile_heads(const store::AttentionStore& store, int first_layer,
                                                 const RunConfig& config);

// Ranking, voting and aggregation on already computed profiles. Profiles
// outside the config's sensitive window are ignored.
DetectionResult detect_from_profiles(const store::AttentionStore& store,
                                     std::vector<profiler::HeadProfile> profiles, const RunConfig& config);

DetectionResult detect(const store::AttentionStore& store, const RunConfig& config);

nlohmann::ordered_json to_json(const VerdictReport& report);
std::string serialize_report(const VerdictReport& report);
VerdictReport parse_report(const nlohmann::json& j);
VerdictReport read_report(const std::filesystem::path& path);

// Report plus a newline-separated list of the kept sample ids.
void write_report(const VerdictReport& report, const std::filesystem::path& report_path,
                  const std::filesystem::path& clean_ids_path);

nlohmann::ordered_json to_json(const vote::DetectionMetrics& metrics);

vote::DetectionMetrics evaluate_report(const VerdictReport& report, const store::LabelMap& labels);

}  // namespace tcap
