#pragma once
// Ablation sweeps over synthetic data: one detect + evaluate run per value.

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcap/config.hpp"
#include "tcap/synth.hpp"
#include "tcap/vote.hpp"

namespace tcap::synth {

enum class SweepAxis { poison_rate, l_sens, h_sens, tau_vote };

std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& name);  // throws ConfigError

struct SweepRow {
    std::string value;  // as given; "all" is accepted for l_sens
    bool ok = false;
    std::string error;
    vote::DetectionMetrics metrics;
    std::size_t num_flagged = 0;
};

// Data axes regenerate the dataset per value; config axes profile once and
// re-run selection, voting and aggregation. A failing cell is recorded, not
// thrown.
std::vector<SweepRow> run_sweep(const SynthSpec& base_spec, const RunConfig& config, SweepAxis axis,
                                std::span<const std::string> values);

nlohmann::ordered_json to_json(SweepAxis axis, std::span<const SweepRow> rows);

// Fixed-width text table in the layout of the ablation tables.
std::string format_sweep_table(SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace tcap::synth
