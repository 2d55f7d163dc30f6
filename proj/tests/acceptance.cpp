// Acceptance checks for the detection pipeline. Prints one PASS/FAIL line per
// criterion and exits non-zero when any of them fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "support/oracles.hpp"
#include "tcap/entropy.hpp"
#include "tcap/gmm.hpp"
#include "tcap/head_profiler.hpp"
#include "tcap/pipeline.hpp"
#include "tcap/synth.hpp"
#include "tcap/vote.hpp"

using namespace tcap;
using testing::NormalPart;

namespace {

constexpr double kMonotoneSlack = 1e-8;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s  %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Worst per-iteration decrease seen across every EM trace of the run.
struct MonotoneLog {
    double gmm = 0.0;
    double ds_ll = 0.0;
    double ds_objective = 0.0;
    std::size_t gmm_models = 0;
    std::size_t ds_runs = 0;

    static double worst_drop(const std::vector<double>& trace) {
        double d = 0.0;
        for (std::size_t i = 1; i < trace.size(); ++i) d = std::max(d, trace[i - 1] - trace[i]);
        return d;
    }

    void add(const gmm::GmmModel& m) {
        gmm = std::max(gmm, m.max_ll_decrease);
        ++gmm_models;
    }

    void add(const DetectionResult& r) {
        for (const auto& p : r.profiles) add(p.model);
        if (r.aggregation) add(*r.aggregation);
    }

    void add(const vote::DawidSkeneState& s) {
        ds_ll = std::max(ds_ll, worst_drop(s.log_likelihood_trace));
        ds_objective = std::max(ds_objective, worst_drop(s.objective_trace));
        ++ds_runs;
    }
};

MonotoneLog monotone;

struct FileRun {
    std::string report;
    vote::DetectionMetrics metrics;
    double seconds = 0.0;
};

// simulate -> write -> ingest -> detect -> evaluate, as the command line does.
FileRun run_from_files(const synth::SynthDataset& data, const std::filesystem::path& dir) {
    const auto paths = synth::write_synthetic_dataset(data, dir);
    const auto t0 = std::chrono::steady_clock::now();
    const auto store = store::ingest_dump(paths.dump, paths.manifest);
    const auto result = detect(store, RunConfig{});
    const auto labels = store::read_labels(paths.labels);
    FileRun run;
    run.metrics = evaluate_report(result.report, labels);
    run.seconds = seconds_since(t0);
    run.report = serialize_report(result.report);
    monotone.add(result);
    return run;
}

void end_to_end_and_determinism() {
    testing::TempDir dir("acceptance-e2e");
    const auto data = synth::generate_synthetic_dataset(synth::SynthSpec{});
    const auto first = run_from_files(data, dir / "a");
    const auto& m = first.metrics;
    report(m.f1 >= 95.0 && m.precision >= 95.0 && first.seconds < 60.0, "end-to-end synthetic detection",
           fmt("P=%.2f R=%.2f F1=%.2f (need F1>=95, P>=95), %.1f s (limit 60 s)", m.precision, m.recall, m.f1,
               first.seconds));

    const auto second = run_from_files(data, dir / "b");
    report(first.report == second.report, "determinism",
           fmt("reports of %zu and %zu bytes, %s", first.report.size(), second.report.size(),
               first.report == second.report ? "byte-identical" : "differ"));
}

void poison_rate_sweep() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (double rate : {0.05, 0.10, 0.15, 0.20}) {
        synth::SynthSpec spec;
        spec.poison_rate = rate;
        const auto data = synth::generate_synthetic_dataset(spec);
        const auto result = detect(data.store, RunConfig{});
        monotone.add(result);
        const double f1 = evaluate_report(result.report, data.labels).f1;
        const double need = rate < 0.1 ? 80.0 : 95.0;
        ok = ok && f1 >= need;
        detail += fmt("%.2f:F1=%.2f(>=%.0f) ", rate, f1, need);
    }
    const double elapsed = seconds_since(t0);
    ok = ok && elapsed < 300.0;
    report(ok, "poison-rate sweep", detail + fmt("total %.1f s (limit 300 s)", elapsed));
}

void null_control() {
    synth::SynthSpec spec;
    spec.shift = 0.0;
    const auto data = synth::generate_synthetic_dataset(spec);
    const auto result = detect(data.store, RunConfig{});
    monotone.add(result);
    const auto m = evaluate_report(result.report, data.labels);
    const double fraction =
        static_cast<double>(result.report.summary.num_flagged) / static_cast<double>(spec.num_samples);
    report(m.f1 <= 30.0 && fraction <= 2.0 * spec.poison_rate, "null-signal control",
           fmt("F1=%.2f (limit 30), flagged fraction %.4f (limit %.2f)", m.f1, fraction, 2.0 * spec.poison_rate));
}

void gmm_recovery() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> mu(0.1, 0.4), sd(0.01, 0.03), gap(6.0, 10.0), w(0.2, 0.8);
    int picked = 0, recovered = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const double s1 = sd(rng), s2 = sd(rng), w1 = w(rng);
        const double m1 = mu(rng);
        const double m2 = m1 + gap(rng) * std::max(s1, s2);
        const auto x = testing::sample_mixture({{w1, m1, s1}, {1.0 - w1, m2, s2}}, 2000, 500 + trial);
        const auto model = gmm::select_model_order(x, 900 + trial, gmm::EmConfig{});
        monotone.add(model);
        if (model.k_star != 2) continue;
        ++picked;
        const double err = std::max(std::abs(model.components[0].mean - m1), std::abs(model.components[1].mean - m2));
        worst = std::max(worst, err);
        recovered += err <= 0.01 ? 1 : 0;
    }
    report(picked >= 48 && recovered == picked, "GMM order selection and recovery",
           fmt("K*=2 in %d/50 (need 48), means within 0.01 in %d/%d (worst %.2e)", picked, recovered, picked,
               worst));
}

void overlap_accuracy() {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> mu(0.0, 1.0), sd(0.02, 0.2), w(0.05, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + trial % 3;
        gmm::GmmModel m;
        double total = 0.0;
        for (int j = 0; j < k; ++j) {
            const double s = sd(rng);
            m.components.push_back({w(rng), mu(rng), s * s});
            total += m.components.back().weight;
        }
        for (auto& c : m.components) c.weight /= total;
        std::sort(m.components.begin(), m.components.end(),
                  [](const auto& a, const auto& b) { return a.mean < b.mean; });
        m.k_star = k;
        const auto part = profiler::partition_components(m, 0.35);
        auto parts = [&](const std::vector<int>& idx) {
            std::vector<NormalPart> out;
            for (int j : idx) {
                const auto& c = m.components[static_cast<std::size_t>(j)];
                out.push_back({c.weight, c.mean, std::sqrt(c.variance)});
            }
            return out;
        };
        const double ref = testing::reference_overlap(parts(part.target), parts(part.background));
        worst = std::max(worst, std::abs(profiler::overlap_area(m, part.target, part.background, 4096) - ref));
    }

    double worst_identical = 0.0;
    for (double pt : {0.05, 0.2, 0.35, 0.5}) {
        gmm::GmmModel m;
        m.components = {{pt, 0.5, 0.01}, {1.0 - pt, 0.5, 0.01}};
        m.k_star = 2;
        const std::vector<int> t{0}, b{1};
        worst_identical =
            std::max(worst_identical, std::abs(profiler::overlap_area(m, t, b, 4096) - std::min(pt, 1.0 - pt)));
    }
    report(worst <= 1e-6 && worst_identical <= 1e-9, "overlap integral accuracy",
           fmt("max error %.2e on 50 mixtures (limit 1e-6), identical densities %.2e (limit 1e-9)", worst,
               worst_identical));
}

std::vector<std::vector<int>> random_votes(std::uint64_t seed, std::size_t samples, std::size_t heads) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> hit(heads), false_alarm(heads);
    for (std::size_t j = 0; j < heads; ++j) {
        hit[j] = 0.5 + 0.5 * u(rng);
        false_alarm[j] = 0.4 * u(rng);
    }
    const double poison = 0.05 + 0.3 * u(rng);
    std::vector<std::vector<int>> rows(samples, std::vector<int>(heads));
    for (auto& row : rows) {
        const bool bad = u(rng) < poison;
        for (std::size_t j = 0; j < heads; ++j) row[j] = u(rng) < (bad ? hit[j] : false_alarm[j]) ? 1 : 0;
    }
    return rows;
}

void dawid_skene_oracle() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto rows = random_votes(3000 + seed, 50, 5);
        const auto st = vote::dawid_skene_aggregate(vote::VoteMatrix::from_rows(rows));
        monotone.add(st);
        const auto ref = testing::oracle_dawid_skene(rows);
        for (std::size_t i = 0; i < rows.size(); ++i) worst = std::max(worst, std::abs(st.posterior[i] - ref.posterior[i]));
    }
    report(worst <= 1e-9, "Dawid-Skene oracle equivalence",
           fmt("max posterior difference %.2e on 20 matrices of 50x5 (limit 1e-9)", worst));
}

void em_monotonicity() {
    const bool gmm_ok = monotone.gmm <= kMonotoneSlack;
    const bool ds_ok = monotone.ds_ll <= kMonotoneSlack;
    report(gmm_ok && ds_ok, "EM monotonicity",
           fmt("GMM max decrease %.2e over %zu models; Dawid-Skene log-likelihood max decrease %.2e, "
               "smoothed objective %.2e over %zu runs (slack 1e-8)",
               monotone.gmm, monotone.gmm_models, monotone.ds_ll, monotone.ds_objective, monotone.ds_runs));
}

void entropy_bounds() {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> alpha_dist(1e-4, 1.0), u(0.0, 1.0);
    std::uniform_int_distribution<int> tokens(1, 1024);
    std::exponential_distribution<double> e(1.0);

    auto fill = [&](std::vector<double>& w, double alpha) {
        // Mix flat, spiky and sparse shapes.
        const double power = 1.0 + 6.0 * u(rng);
        double s = 0.0;
        for (auto& x : w) {
            x = u(rng) < 0.2 ? 0.0 : std::pow(e(rng), power);
            s += x;
        }
        if (s == 0.0) {
            w[0] = 1.0;
            s = 1.0;
        }
        for (auto& x : w) x *= alpha / s;
    };

    double global_margin = -1e300;
    for (int trial = 0; trial < 1000; ++trial) {
        const int t = tokens(rng);
        const double alpha = alpha_dist(rng);
        std::vector<double> row(static_cast<std::size_t>(t));
        fill(row, alpha);
        global_margin = std::max(global_margin, entropy::attention_entropy(row) - entropy::global_entropy_bound(alpha, t));
    }

    double patch_margin = -1e300;
    for (int trial = 0; trial < 1000; ++trial) {
        const int t = tokens(rng);
        const int s = 1 + static_cast<int>(u(rng) * std::min(t, 32));
        const double alpha = alpha_dist(rng);
        std::vector<double> on(static_cast<std::size_t>(s));
        fill(on, alpha);
        std::vector<std::size_t> pos(static_cast<std::size_t>(t));
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        std::shuffle(pos.begin(), pos.end(), rng);
        std::vector<double> row(static_cast<std::size_t>(t), 0.0);
        for (int k = 0; k < s; ++k) row[pos[static_cast<std::size_t>(k)]] = on[static_cast<std::size_t>(k)];
        patch_margin = std::max(patch_margin, entropy::attention_entropy(row) - entropy::patch_entropy_bound(alpha, s));
    }
    report(global_margin <= 1e-9 && patch_margin <= 1e-9, "entropy bounds",
           fmt("max H - bound: %.2e over 1000 rows, %.2e over 1000 masked rows (slack 1e-9)", global_margin,
               patch_margin));
}

}  // namespace

int main() {
    gmm_recovery();
    overlap_accuracy();
    dawid_skene_oracle();
    entropy_bounds();
    end_to_end_and_determinism();
    poison_rate_sweep();
    null_control();
    em_monotonicity();
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}
