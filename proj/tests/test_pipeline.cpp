#include <doctest.h>

#include <fstream>

#include "support/oracles.hpp"
#include "tcap/error.hpp"
#include "tcap/pipeline.hpp"
#include "tcap/sweep.hpp"
#include "tcap/synth.hpp"

using namespace tcap;

namespace {

synth::SynthSpec small_spec() {
    synth::SynthSpec s;
    s.num_samples = 400;
    s.num_layers = 6;
    s.num_heads = 4;
    s.num_responsive = 4;
    s.responsive_window = 3;
    s.seed = 21;
    return s;
}

RunConfig small_config() {
    RunConfig c;
    c.profiler.l_sens = 3;
    c.profiler.h_sens = 4;
    return c;
}

}  // namespace

TEST_CASE("config defaults and json") {
    const RunConfig c;
    CHECK(c.profiler.l_sens == 8);
    CHECK(c.profiler.h_sens == 10);
    CHECK(c.tau_vote == 1e-4);
    CHECK(c.em.criterion == gmm::Criterion::bic);
    CHECK(c.profiler.epsilon == 1e-10);
    CHECK(c.profiler.minority_weight_threshold == 0.35);
    CHECK(c.profiler.n_grid == 4096);
    CHECK(c.em.ll_tol == 1e-7);
    CHECK(c.em.max_iters == 200);
    CHECK(c.em.n_init == 4);
    CHECK(c.em.variance_floor == 1e-6);
    CHECK(c.ds.max_iters == 100);
    CHECK(c.ds.tol == 1e-6);
    CHECK(c.ds.smoothing == 1.0);
    CHECK(c.mass_tolerance == 1e-3);

    RunConfig d = small_config();
    d.em.criterion = gmm::Criterion::aic;
    d.seed = 77;
    const auto back = config_from_json(nlohmann::json::parse(to_json(d).dump()));
    CHECK(to_json(back) == to_json(d));

    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"lsens": 3})")), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"l_sens": 0})")).validate(), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"criterion": "hqc"})")), ConfigError);
}

TEST_CASE("detection on a small planted dataset") {
    const auto data = synth::generate_synthetic_dataset(small_spec());
    const auto result = detect(data.store, small_config());
    const auto& r = result.report;
    CHECK(r.heads.size() == 4);
    for (const auto& h : r.heads) CHECK(h.layer >= 3);
    for (const auto& s : r.samples) CHECK(s.flagged == (s.posterior > 0.5));
    CHECK(r.summary.num_flagged + r.summary.num_kept == 400);
    CHECK(r.summary.num_profiled_heads == 12);
    const auto m = evaluate_report(r, data.labels);
    CHECK(m.f1 >= 95.0);
    REQUIRE(result.aggregation.has_value());
    for (std::size_t i = 1; i < result.aggregation->objective_trace.size(); ++i) {
        CHECK(result.aggregation->objective_trace[i] >= result.aggregation->objective_trace[i - 1] - 1e-8);
    }
    for (const auto& p : result.profiles) CHECK(p.model.max_ll_decrease <= 1e-8);
}

TEST_CASE("reports are reproducible and round trip") {
    const auto data = synth::generate_synthetic_dataset(small_spec());
    const auto a = serialize_report(detect(data.store, small_config()).report);
    const auto b = serialize_report(detect(data.store, small_config()).report);
    CHECK(a == b);
    const auto parsed = parse_report(nlohmann::json::parse(a));
    CHECK(serialize_report(parsed) == a);

    auto j = nlohmann::json::parse(a);
    j["samples"][0]["flagged"] = !j["samples"][0]["flagged"].get<bool>();
    CHECK_THROWS_AS(parse_report(j), ValidationError);
}

TEST_CASE("report files") {
    testing::TempDir dir("report");
    const auto data = synth::generate_synthetic_dataset(small_spec());
    const auto report = detect(data.store, small_config()).report;
    write_report(report, dir / "report.json", dir / "clean.txt");
    CHECK(serialize_report(read_report(dir / "report.json")) == serialize_report(report));
    std::ifstream in(dir / "clean.txt");
    std::vector<std::string> ids;
    for (std::string l; std::getline(in, l);) ids.push_back(l);
    CHECK(ids == report.clean_ids());
}

TEST_CASE("no usable head means nothing is flagged") {
    store::DumpManifest m{20, 2, 2, store::kFormatVersion, "flat", std::nullopt};
    store::StoreBuilder b(m);
    for (int s = 0; s < 20; ++s) {
        for (int l = 0; l < 2; ++l) {
            for (int h = 0; h < 2; ++h) b.add({"s" + std::to_string(10 + s), l, h, 0.3, 0.3, 0.3});
        }
    }
    const auto store = std::move(b).finish();
    const auto result = detect(store, RunConfig{});
    CHECK(result.report.summary.empty_candidate_set);
    CHECK(result.report.summary.num_flagged == 0);
    CHECK(result.report.summary.num_degenerate_heads == 4);
    CHECK_FALSE(result.report.summary.warnings.empty());
    CHECK(result.report.clean_ids().size() == 20);
}

TEST_CASE("profiles can be reused across configs") {
    const auto data = synth::generate_synthetic_dataset(small_spec());
    RunConfig wide = small_config();
    wide.profiler.l_sens = 6;
    const auto profiles = profile_heads(data.store, 0, wide);
    for (int l_sens : {1, 2, 3, 6}) {
        RunConfig c = small_config();
        c.profiler.l_sens = l_sens;
        const auto direct = detect(data.store, c).report;
        const auto reused = detect_from_profiles(data.store, profiles, c).report;
        CHECK(serialize_report(direct) == serialize_report(reused));
    }
}

TEST_CASE("a singleton sweep equals one detect and evaluate") {
    const auto spec = small_spec();
    const auto cfg = small_config();
    const auto data = synth::generate_synthetic_dataset(spec);
    const auto direct = evaluate_report(detect(data.store, cfg).report, data.labels);
    for (auto axis : {synth::SweepAxis::poison_rate, synth::SweepAxis::h_sens}) {
        const std::vector<std::string> values{axis == synth::SweepAxis::poison_rate ? "0.1" : "4"};
        const auto rows = synth::run_sweep(spec, cfg, axis, values);
        REQUIRE(rows.size() == 1);
        REQUIRE(rows[0].ok);
        CHECK(to_json(rows[0].metrics) == to_json(direct));
    }
}

TEST_CASE("sweep records failed cells") {
    const std::vector<std::string> values{"0.1", "1.5", "abc"};
    const auto rows = synth::run_sweep(small_spec(), small_config(), synth::SweepAxis::poison_rate, values);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].ok);
    CHECK_FALSE(rows[1].ok);
    CHECK_FALSE(rows[2].ok);
    const auto table = synth::format_sweep_table(synth::SweepAxis::poison_rate, rows);
    CHECK(table.find("failed") != std::string::npos);

    const std::vector<std::string> layers{"1", "all"};
    const auto lrows = synth::run_sweep(small_spec(), small_config(), synth::SweepAxis::l_sens, layers);
    CHECK(lrows[0].ok);
    CHECK(lrows[1].ok);
}
