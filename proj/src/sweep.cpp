#include "tcap/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <optional>

#include "tcap/error.hpp"
#include "tcap/pipeline.hpp"

namespace tcap::synth {

namespace {

double parse_real(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("not a number: '" + s + "'");
    }
}

int parse_int(const std::string& s) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw ConfigError("not an integer: '" + s + "'");
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("not an integer: '" + s + "'");
    }
}

RunConfig apply(RunConfig cfg, SweepAxis axis, const std::string& value, int num_layers) {
    switch (axis) {
        case SweepAxis::l_sens: cfg.profiler.l_sens = value == "all" ? num_layers : parse_int(value); break;
        case SweepAxis::h_sens: cfg.profiler.h_sens = parse_int(value); break;
        case SweepAxis::tau_vote: cfg.tau_vote = parse_real(value); break;
        case SweepAxis::poison_rate: break;
    }
    cfg.validate();
    return cfg;
}

SweepRow run_cell(const store::AttentionStore& store, const store::LabelMap& labels,
                  std::vector<profiler::HeadProfile> profiles, const RunConfig& cfg, std::string value) {
    SweepRow row;
    row.value = std::move(value);
    const auto result = detect_from_profiles(store, std::move(profiles), cfg);
    row.metrics = evaluate_report(result.report, labels);
    row.num_flagged = result.report.summary.num_flagged;
    row.ok = true;
    return row;
}

}  // namespace

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::poison_rate: return "poison_rate";
        case SweepAxis::l_sens: return "l_sens";
        case SweepAxis::h_sens: return "h_sens";
        case SweepAxis::tau_vote: return "tau_vote";
    }
    return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "poison_rate" || name == "poison-rate") return SweepAxis::poison_rate;
    if (name == "l_sens" || name == "l-sens") return SweepAxis::l_sens;
    if (name == "h_sens" || name == "h-sens") return SweepAxis::h_sens;
    if (name == "tau_vote" || name == "tau-vote") return SweepAxis::tau_vote;
    throw ConfigError("unknown sweep axis '" + name + "'");
}

std::vector<SweepRow> run_sweep(const SynthSpec& base_spec, const RunConfig& config, SweepAxis axis,
                                std::span<const std::string> values) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<SweepRow> rows;

    if (axis == SweepAxis::poison_rate) {
        for (const auto& value : values) {
            try {
                SynthSpec spec = base_spec;
                spec.poison_rate = parse_real(value);
                const auto data = generate_synthetic_dataset(spec);
                const int first = profiler::first_sensitive_layer(data.store.num_layers(), config.profiler.l_sens);
                rows.push_back(run_cell(data.store, data.labels, profile_heads(data.store, first, config), config, value));
            } catch (const std::exception& e) {
                rows.push_back({value, false, e.what(), {}, 0});
            }
        }
        return rows;
    }

    std::optional<SynthDataset> data;
    try {
        data = generate_synthetic_dataset(base_spec);
    } catch (const std::exception& e) {
        for (const auto& value : values) rows.push_back({value, false, e.what(), {}, 0});
        return rows;
    }

    // Profile the widest window any value asks for, once.
    const int num_layers = data->store.num_layers();
    std::vector<std::optional<RunConfig>> configs;
    int first = num_layers;
    for (const auto& value : values) {
        try {
            configs.push_back(apply(config, axis, value, num_layers));
            first = std::min(first, profiler::first_sensitive_layer(num_layers, configs.back()->profiler.l_sens));
        } catch (const std::exception& e) {
            configs.emplace_back(std::nullopt);
        }
    }
    std::vector<profiler::HeadProfile> profiles;
    if (first < num_layers) profiles = profile_heads(data->store, first, config);

    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!configs[i]) {
            try {
                apply(config, axis, values[i], num_layers);
            } catch (const std::exception& e) {
                rows.push_back({values[i], false, e.what(), {}, 0});
            }
            continue;
        }
        try {
            rows.push_back(run_cell(data->store, data->labels, profiles, *configs[i], values[i]));
        } catch (const std::exception& e) {
            rows.push_back({values[i], false, e.what(), {}, 0});
        }
    }
    return rows;
}

nlohmann::ordered_json to_json(SweepAxis axis, std::span<const SweepRow> rows) {
    nlohmann::ordered_json out;
    out["axis"] = to_string(axis);
    nlohmann::ordered_json table = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json row;
        row["value"] = r.value;
        row["status"] = r.ok ? "ok" : "failed";
        if (r.ok) {
            row["precision"] = r.metrics.precision;
            row["recall"] = r.metrics.recall;
            row["f1"] = r.metrics.f1;
            row["tp"] = r.metrics.tp;
            row["fp"] = r.metrics.fp;
            row["fn"] = r.metrics.fn;
            row["tn"] = r.metrics.tn;
            row["num_flagged"] = r.num_flagged;
        } else {
            row["error"] = r.error;
        }
        table.push_back(std::move(row));
    }
    out["rows"] = std::move(table);
    return out;
}

std::string format_sweep_table(SweepAxis axis, std::span<const SweepRow> rows) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %9s %9s %9s\n", to_string(axis).c_str(), "P", "R", "F1");
    out += line;
    for (const auto& r : rows) {
        if (r.ok) {
            std::snprintf(line, sizeof line, "%-12s %9.2f %9.2f %9.2f\n", r.value.c_str(), r.metrics.precision,
                          r.metrics.recall, r.metrics.f1);
        } else {
            std::snprintf(line, sizeof line, "%-12s    failed: %s\n", r.value.c_str(), r.error.c_str());
        }
        out += line;
    }
    return out;
}

}  // namespace tcap::synth
