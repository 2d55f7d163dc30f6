#pragma once
// Binary per-head votes from mixture posteriors, Dawid-Skene aggregation of
// those votes, filtering and detection metrics.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tcap/attention_store.hpp"
#include "tcap/gmm.hpp"
#include "tcap/head_profiler.hpp"

namespace tcap::vote {

inline constexpr double kDefaultTauVote = 1e-4;
inline constexpr double kFlagThreshold = 0.5;

// M x H matrix of 0/1 votes; column j belongs to heads[j].
class VoteMatrix {
public:
    VoteMatrix() = default;
    VoteMatrix(std::size_t samples, std::vector<profiler::HeadRef> heads)
        : samples_(samples), heads_(std::move(heads)), data_(samples_ * heads_.size(), 0) {}

    std::size_t samples() const noexcept { return samples_; }
    std::size_t num_heads() const noexcept { return heads_.size(); }
    const std::vector<profiler::HeadRef>& heads() const noexcept { return heads_; }

    std::uint8_t operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * heads_.size() + j]; }
    void set(std::size_t i, std::size_t j, bool v) noexcept { data_[i * heads_.size() + j] = v ? 1 : 0; }

    // Builds a matrix from rows of 0/1 values; heads get placeholder refs.
    static VoteMatrix from_rows(const std::vector<std::vector<int>>& rows);

    bool operator==(const VoteMatrix&) const = default;

private:
    std::size_t samples_ = 0;
    std::vector<profiler::HeadRef> heads_;
    std::vector<std::uint8_t> data_;
};

// Votes for one head: 1 iff the posterior mass on the target group exceeds tau.
std::vector<std::uint8_t> head_votes(const gmm::Responsibilities& resp, std::span<const int> target_group, double tau_vote);

struct HeadEvidence {
    profiler::HeadRef head;
    const gmm::Responsibilities* responsibilities = nullptr;
    std::vector<int> target_group;
};

VoteMatrix cast_votes(std::span<const HeadEvidence> evidence, double tau_vote);

struct DawidSkeneConfig {
    int max_iters = 100;
    double tol = 1e-6;        // on max |delta p_i|
    double smoothing = 1.0;   // Laplace pseudo-count per confusion cell
    bool anchor_minority = true;
};

// Row = true class (0 clean, 1 poisoned), column = vote.
struct Confusion {
    double p[2][2] = {{0.5, 0.5}, {0.5, 0.5}};
};

struct DawidSkeneState {
    double prior_clean = 1.0;
    double prior_poisoned = 0.0;
    std::vector<Confusion> confusion;  // one per head column
    std::vector<double> posterior;     // P(poisoned) per sample
    int iterations = 0;
    bool converged = false;
    bool swapped = false;  // class labels were exchanged by anchoring
    // Per-iteration observed-data log-likelihood and the smoothed objective
    // (log-likelihood plus the Laplace log-prior) that EM maximises.
    std::vector<double> log_likelihood_trace;
    std::vector<double> objective_trace;
};

DawidSkeneState dawid_skene_aggregate(const VoteMatrix& votes, const DawidSkeneConfig& config = {});

struct FilterResult {
    std::vector<std::string> kept;  // posterior <= 0.5, canonical order preserved
    bool all_flagged = false;
};

FilterResult filter_dataset(std::span<const double> posteriors, std::span<const std::string> sample_ids);

struct DetectionMetrics {
    double precision = 0.0;  // percent
    double recall = 0.0;     // percent
    double f1 = 0.0;         // percent
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
    std::vector<std::string> warnings;
};

// Flagged counts as positive, poisoned as true. Throws LabelMismatch when a
// sample has no label.
DetectionMetrics evaluate_detection(std::span<const std::string> sample_ids, std::span<const std::uint8_t> flagged,
                                    const store::LabelMap& labels);

}  // namespace tcap::vote
