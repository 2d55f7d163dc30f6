#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tcap/config.hpp"
#include "tcap/entropy.hpp"
#include "tcap/error.hpp"
#include "tcap/pipeline.hpp"
#include "tcap/sweep.hpp"
#include "tcap/synth.hpp"

namespace tcap::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Collects flags that override fields of a target struct only when given on
// the command line, so file-based config keeps precedence over defaults.
template <class Target>
class Overrides {
public:
    template <class T, class Fn>
    void add(CLI::App* app, const std::string& flag, const std::string& help, Fn apply) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app->add_option(flag, *value, help);
        setters_.push_back([opt, value, apply](Target& t) {
            if (opt->count() > 0) apply(t, *value);
        });
    }

    void apply(Target& target) const {
        for (const auto& s : setters_) s(target);
    }

private:
    std::vector<std::function<void(Target&)>> setters_;
};

struct ConfigOptions {
    std::string config_path;
    Overrides<RunConfig> flags;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run configuration");
        flags.add<int>(app, "--l-sens", "sensitive layer count (default 8)", [](RunConfig& c, int v) { c.profiler.l_sens = v; });
        flags.add<int>(app, "--h-sens", "trigger-responsive head count (default 10)", [](RunConfig& c, int v) { c.profiler.h_sens = v; });
        flags.add<double>(app, "--tau-vote", "vote threshold (default 1e-4)", [](RunConfig& c, double v) { c.tau_vote = v; });
        flags.add<std::string>(app, "--criterion", "bic or aic", [](RunConfig& c, const std::string& v) { c.em.criterion = gmm::parse_criterion(v); });
        flags.add<double>(app, "--epsilon", "separation score stabiliser", [](RunConfig& c, double v) { c.profiler.epsilon = v; });
        flags.add<double>(app, "--minority-weight-threshold", "cumulative weight bound of the target group",
                          [](RunConfig& c, double v) { c.profiler.minority_weight_threshold = v; });
        flags.add<int>(app, "--n-grid", "overlap integration points", [](RunConfig& c, int v) { c.profiler.n_grid = v; });
        flags.add<std::uint64_t>(app, "--seed", "fit seed", [](RunConfig& c, std::uint64_t v) { c.seed = v; });
        flags.add<double>(app, "--ll-tol", "relative EM tolerance", [](RunConfig& c, double v) { c.em.ll_tol = v; });
        flags.add<int>(app, "--max-iters", "EM iteration cap", [](RunConfig& c, int v) { c.em.max_iters = v; });
        flags.add<int>(app, "--n-init", "EM restarts per k", [](RunConfig& c, int v) { c.em.n_init = v; });
        flags.add<double>(app, "--variance-floor", "minimum component variance", [](RunConfig& c, double v) { c.em.variance_floor = v; });
        flags.add<double>(app, "--mass-tolerance", "allowed excess of the component mass over 1",
                          [](RunConfig& c, double v) { c.mass_tolerance = v; });
    }

    RunConfig resolve() const {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        flags.apply(cfg);
        cfg.validate();
        return cfg;
    }
};

struct SpecOptions {
    std::string spec_path;
    bool visual_rows = false;
    Overrides<synth::SynthSpec> flags;

    void attach(CLI::App* app, const std::string& seed_flag) {
        app->add_option("--spec", spec_path, "JSON synthetic spec");
        app->add_flag("--visual-rows", visual_rows, "also emit visual-token rows for the entropy baseline");
        using S = synth::SynthSpec;
        flags.add<std::int64_t>(app, "--num-samples", "sample count", [](S& s, std::int64_t v) { s.num_samples = v; });
        flags.add<int>(app, "--num-layers", "layer count", [](S& s, int v) { s.num_layers = v; });
        flags.add<int>(app, "--num-heads", "heads per layer", [](S& s, int v) { s.num_heads = v; });
        flags.add<double>(app, "--poison-rate", "poisoned fraction", [](S& s, double v) { s.poison_rate = v; });
        flags.add<int>(app, "--num-responsive", "planted responsive heads", [](S& s, int v) { s.num_responsive = v; });
        flags.add<int>(app, "--responsive-window", "responsive heads live in the last N layers",
                       [](S& s, int v) { s.responsive_window = v; });
        flags.add<double>(app, "--shift", "poisoned alpha_sys shift", [](S& s, double v) { s.shift = v; });
        flags.add<double>(app, "--clean-std", "clean alpha_sys std on responsive heads", [](S& s, double v) { s.clean_std = v; });
        flags.add<double>(app, "--noise-heads-std", "alpha_sys std on other heads", [](S& s, double v) { s.noise_heads_std = v; });
        flags.add<double>(app, "--clean-mean-min", "lower bound of per-head clean means", [](S& s, double v) { s.clean_mean_min = v; });
        flags.add<double>(app, "--clean-mean-max", "upper bound of per-head clean means", [](S& s, double v) { s.clean_mean_max = v; });
        flags.add<std::uint64_t>(app, seed_flag, "generator seed", [](S& s, std::uint64_t v) { s.seed = v; });
    }

    synth::SynthSpec resolve() const {
        synth::SynthSpec spec;
        if (!spec_path.empty()) spec = synth::load_spec(spec_path);
        flags.apply(spec);
        if (visual_rows) spec.visual.enabled = true;
        spec.validate();
        return spec;
    }
};

void print_warnings(const std::vector<std::string>& warnings, std::ostream& err) {
    for (const auto& w : warnings) err << "warning: " << w << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::vector<std::string> split_values(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_detect(const std::string& dump, const std::string& manifest, const ConfigOptions& copts,
               const std::string& out_dir, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = copts.resolve();
    const auto store = store::ingest_dump(dump, manifest, cfg.mass_tolerance);
    const auto result = detect(store, cfg);
    fs::create_directories(out_dir);
    const fs::path report_path = fs::path(out_dir) / "report.json";
    const fs::path ids_path = fs::path(out_dir) / "clean_ids.txt";
    write_report(result.report, report_path, ids_path);
    print_warnings(result.report.summary.warnings, err);

    const auto& s = result.report.summary;
    out << "samples " << s.num_samples << ", flagged " << s.num_flagged << ", kept " << s.num_kept << '\n';
    out << "heads:";
    for (const auto& h : result.report.heads) out << " (" << h.layer << "," << h.head << ")";
    out << "\nreport: " << report_path.string() << "\nclean ids: " << ids_path.string() << '\n';
    return s.empty_candidate_set ? kExitNoCandidates : kExitOk;
}

int cmd_simulate(const SpecOptions& sopts, const std::string& out_dir, std::ostream& out) {
    const auto spec = sopts.resolve();
    const auto data = synth::generate_synthetic_dataset(spec);
    const auto paths = synth::write_synthetic_dataset(data, out_dir);
    write_text(fs::path(out_dir) / "spec.json", synth::to_json(spec).dump(2) + "\n");
    std::size_t poisoned = 0;
    for (const auto& [id, p] : data.labels) poisoned += p ? 1 : 0;
    out << "wrote " << data.store.manifest().expected_records() << " records (" << poisoned << " of "
        << data.store.num_samples() << " samples poisoned)\n";
    out << "dump: " << paths.dump.string() << "\nmanifest: " << paths.manifest.string()
        << "\nlabels: " << paths.labels.string() << '\n';
    if (!paths.visual.empty()) out << "visual rows: " << paths.visual.string() << '\n';
    out << "responsive heads:";
    for (const auto& r : data.responsive) out << " (" << r.layer << "," << r.head << "," << synth::to_string(r.kind) << ")";
    out << '\n';
    return kExitOk;
}

int cmd_evaluate(const std::string& report_path, const std::string& labels_path, const std::string& out_path,
                 std::ostream& out, std::ostream& err) {
    const auto report = read_report(report_path);
    const auto labels = store::read_labels(labels_path);
    const auto metrics = evaluate_report(report, labels);
    print_warnings(metrics.warnings, err);
    const std::string text = to_json(metrics).dump(2) + "\n";
    if (!out_path.empty()) write_text(out_path, text);
    out << text;
    return kExitOk;
}

int cmd_sweep(const SpecOptions& sopts, const ConfigOptions& copts, const std::string& axis_name,
              const std::string& values_csv, const std::string& out_path, std::ostream& out) {
    const auto spec = sopts.resolve();
    const RunConfig cfg = copts.resolve();
    const auto axis = synth::parse_sweep_axis(axis_name);
    const auto values = split_values(values_csv);
    if (values.empty()) throw ConfigError("--values must list at least one value");
    const auto rows = synth::run_sweep(spec, cfg, axis, values);
    if (!out_path.empty()) write_text(out_path, synth::to_json(axis, rows).dump(2) + "\n");
    out << synth::format_sweep_table(axis, rows);
    return kExitOk;
}

int cmd_inspect(const std::string& dump, const std::string& manifest, const ConfigOptions& copts, int layer, int head,
                int bins, bool with_samples, const std::string& out_path, std::ostream& out) {
    const RunConfig cfg = copts.resolve();
    if (bins < 1) throw ConfigError("--bins must be >= 1");
    const auto store = store::ingest_dump(dump, manifest, cfg.mass_tolerance);
    if (!store.contains(layer, head)) {
        throw ConfigError("head (" + std::to_string(layer) + ", " + std::to_string(head) + ") outside the " +
                          std::to_string(store.num_layers()) + "x" + std::to_string(store.num_heads()) + " grid");
    }
    const auto raw = store.series(layer, head).values;
    const auto profile = profiler::profile_head(layer, head, raw, head_seed(cfg.seed, layer, head), cfg.em, cfg.profiler);
    const auto norm = gmm::normalize_minmax(raw);
    const auto resp = gmm::posterior(profile.model, norm.values);
    const auto votes = profile.degenerate ? std::vector<std::uint8_t>(raw.size(), 0)
                                          : vote::head_votes(resp, profile.target_group, cfg.tau_vote);

    ordered_json j;
    j["layer"] = layer;
    j["head"] = head;
    j["num_samples"] = store.num_samples();
    j["raw_min"] = norm.min;
    j["raw_max"] = norm.max;
    ordered_json comps = ordered_json::array();
    for (const auto& c : profile.model.components) {
        comps.push_back({{"weight", c.weight}, {"mean", c.mean}, {"variance", c.variance}});
    }
    j["model"] = {
        {"k_star", profile.model.k_star},
        {"components", comps},
        {"log_likelihood", profile.model.log_likelihood},
        {"criterion", std::string(gmm::to_string(cfg.em.criterion))},
        {"criterion_value", profile.model.criterion_value},
        {"converged", profile.model.converged},
        {"iterations", profile.model.iterations},
    };
    j["target_group"] = profile.target_group;
    j["background_group"] = profile.background_group;
    j["overlap"] = profile.overlap;
    j["separation_score"] = profile.separation_score;
    j["degenerate"] = profile.degenerate;

    std::size_t yes = 0;
    for (auto v : votes) yes += v;
    j["votes"] = {{"tau_vote", cfg.tau_vote}, {"0", votes.size() - yes}, {"1", yes}};

    std::vector<std::size_t> hist(static_cast<std::size_t>(bins), 0);
    for (double v : norm.values) {
        const auto b = std::min<std::size_t>(static_cast<std::size_t>(v * bins), hist.size() - 1);
        ++hist[b];
    }
    j["histogram"] = {{"bins", bins}, {"range", {0.0, 1.0}}, {"counts", hist}};

    auto mean_of = [](std::span<const double> s) {
        double t = 0.0;
        for (double v : s) t += v;
        return t / static_cast<double>(s.size());
    };
    j["channel_means"] = {
        {"alpha_sys", mean_of(store.channel(store::Channel::sys, layer, head))},
        {"alpha_vis", mean_of(store.channel(store::Channel::vis, layer, head))},
        {"alpha_txt", mean_of(store.channel(store::Channel::txt, layer, head))},
    };
    if (with_samples) {
        ordered_json rows = ordered_json::array();
        const auto vis = store.channel(store::Channel::vis, layer, head);
        const auto txt = store.channel(store::Channel::txt, layer, head);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            double target_mass = 0.0;
            for (int k : profile.target_group) target_mass += resp(i, static_cast<std::size_t>(k));
            rows.push_back({{"sample_id", store.sample_ids()[i]},
                            {"alpha_sys", raw[i]},
                            {"alpha_vis", vis[i]},
                            {"alpha_txt", txt[i]},
                            {"normalized", norm.values[i]},
                            {"target_mass", target_mass},
                            {"vote", votes[i]}});
        }
        j["samples"] = std::move(rows);
    }
    const std::string text = j.dump(2) + "\n";
    if (!out_path.empty()) write_text(out_path, text);
    out << text;
    return kExitOk;
}

int cmd_baseline(const std::string& visual_path, const std::string& labels_path, const ConfigOptions& copts,
                 const std::string& out_path, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = copts.resolve();
    const auto rows = entropy::read_visual_rows(visual_path);
    const auto verdict = entropy::entropy_baseline(rows, cfg.seed, cfg.em, cfg.profiler.minority_weight_threshold);
    ordered_json j;
    std::size_t flagged = 0;
    for (auto f : verdict.flagged) flagged += f;
    j["num_samples"] = verdict.sample_ids.size();
    j["num_flagged"] = flagged;
    j["k_star"] = verdict.model.k_star;
    j["low_group"] = verdict.low_group;
    double mean_entropy = 0.0;
    for (double h : verdict.entropy) mean_entropy += h;
    j["mean_entropy"] = verdict.entropy.empty() ? 0.0 : mean_entropy / static_cast<double>(verdict.entropy.size());
    if (!labels_path.empty()) {
        const auto labels = store::read_labels(labels_path);
        const auto metrics = vote::evaluate_detection(verdict.sample_ids, verdict.flagged, labels);
        print_warnings(metrics.warnings, err);
        j["metrics"] = to_json(metrics);
    }
    const std::string text = j.dump(2) + "\n";
    if (!out_path.empty()) write_text(out_path, text);
    out << text;
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"tcap: unsupervised backdoor-sample detection from tri-component attention dumps", "tcap"};
    app.require_subcommand(1);

    std::string dump, manifest, out_dir = ".", out_path, report_path, labels_path, axis, values, visual_path;
    int layer = -1, head = -1, bins = 50;
    bool with_samples = false;

    ConfigOptions detect_cfg, sweep_cfg, inspect_cfg, baseline_cfg;
    SpecOptions simulate_spec, sweep_spec;

    auto* detect_cmd = app.add_subcommand("detect", "profile heads, vote and flag poisoned samples");
    detect_cmd->add_option("--dump", dump, "attention dump (JSONL)")->required();
    detect_cmd->add_option("--manifest", manifest, "dump manifest (JSON)")->required();
    detect_cmd->add_option("--out", out_dir, "output directory for report.json and clean_ids.txt");
    detect_cfg.attach(detect_cmd);

    auto* simulate_cmd = app.add_subcommand("simulate", "generate a synthetic dump with labels");
    simulate_cmd->add_option("--out", out_dir, "output directory")->required();
    simulate_spec.attach(simulate_cmd, "--seed");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "precision / recall / F1 of a verdict report");
    evaluate_cmd->add_option("--report", report_path, "report.json from detect")->required();
    evaluate_cmd->add_option("--labels", labels_path, "label file (JSONL)")->required();
    evaluate_cmd->add_option("--out", out_path, "also write the metrics JSON here");

    auto* sweep_cmd = app.add_subcommand("sweep", "ablation sweep on synthetic data");
    sweep_cmd->add_option("--axis", axis, "poison_rate | l_sens | h_sens | tau_vote")->required();
    sweep_cmd->add_option("--values", values, "comma-separated values (l_sens accepts 'all')")->required();
    sweep_cmd->add_option("--out", out_path, "write the sweep table as JSON");
    sweep_spec.attach(sweep_cmd, "--spec-seed");
    sweep_cfg.attach(sweep_cmd);

    auto* inspect_cmd = app.add_subcommand("inspect", "export one head's profile for plotting");
    inspect_cmd->add_option("--dump", dump, "attention dump (JSONL)")->required();
    inspect_cmd->add_option("--manifest", manifest, "dump manifest (JSON)")->required();
    inspect_cmd->add_option("--layer", layer, "layer index")->required();
    inspect_cmd->add_option("--head", head, "head index")->required();
    inspect_cmd->add_option("--bins", bins, "histogram bins");
    inspect_cmd->add_flag("--samples", with_samples, "include per-sample values");
    inspect_cmd->add_option("--out", out_path, "also write the profile JSON here");
    inspect_cfg.attach(inspect_cmd);

    auto* baseline_cmd = app.add_subcommand("baseline", "entropy baseline on synthetic visual rows");
    baseline_cmd->add_option("--visual", visual_path, "visual row stream (JSONL)")->required();
    baseline_cmd->add_option("--labels", labels_path, "label file for metrics");
    baseline_cmd->add_option("--out", out_path, "also write the result JSON here");
    baseline_cfg.attach(baseline_cmd);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitValidation;
    }

    try {
        if (*detect_cmd) return cmd_detect(dump, manifest, detect_cfg, out_dir, out, err);
        if (*simulate_cmd) return cmd_simulate(simulate_spec, out_dir, out);
        if (*evaluate_cmd) return cmd_evaluate(report_path, labels_path, out_path, out, err);
        if (*sweep_cmd) return cmd_sweep(sweep_spec, sweep_cfg, axis, values, out_path, out);
        if (*inspect_cmd) return cmd_inspect(dump, manifest, inspect_cfg, layer, head, bins, with_samples, out_path, out);
        if (*baseline_cmd) return cmd_baseline(visual_path, labels_path, baseline_cfg, out_path, out, err);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace tcap::cli
