#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "tcap/attention_store.hpp"
#include "tcap/gmm.hpp"
#include "tcap/head_profiler.hpp"
#include "tcap/vote.hpp"

namespace tcap {

// Every tunable of a detection run. Defaults: l_sens 8, h_sens 10,
// tau_vote 1e-4, BIC, epsilon 1e-10, minority threshold 0.35, 4096-point grid.
struct RunConfig {
    profiler::ProfilerConfig profiler;
    double tau_vote = vote::kDefaultTauVote;
    gmm::EmConfig em;
    vote::DawidSkeneConfig ds;
    std::uint64_t seed = 0;
    double mass_tolerance = store::kDefaultMassTolerance;

    // Throws ConfigError naming the first invalid field.
    void validate() const;
};

// Flat snake_case object, e.g. {"l_sens": 8, "criterion": "bic", ...}.
nlohmann::ordered_json to_json(const RunConfig& config);

// Applies the keys present in `j` on top of `base`. Unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});

RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace tcap
