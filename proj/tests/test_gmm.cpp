#include <doctest.h>

#include <cmath>
#include <numeric>

#include "support/oracles.hpp"
#include "tcap/error.hpp"
#include "tcap/gmm.hpp"

using namespace tcap;
using namespace tcap::gmm;
using tcap::testing::NormalPart;
using tcap::testing::sample_mixture;

namespace {

std::vector<double> bimodal_sample() {
    return sample_mixture({{0.5, 0.1, 0.02}, {0.5, 0.9, 0.02}}, 2000, 7);
}

void check_model_invariants(const GmmModel& m, const EmConfig& cfg) {
    double w = 0.0;
    for (std::size_t k = 0; k < m.components.size(); ++k) {
        w += m.components[k].weight;
        CHECK(m.components[k].variance >= cfg.variance_floor);
        if (k > 0) CHECK(m.components[k - 1].mean <= m.components[k].mean);
    }
    CHECK(w == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(m.k_star == m.k());
}

}  // namespace

TEST_CASE("min-max normalisation") {
    const std::vector<double> a{0.2, 0.4, 0.6};
    const auto na = normalize_minmax(a);
    CHECK_FALSE(na.degenerate);
    CHECK(na.values[0] == 0.0);
    CHECK(na.values[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(na.values[2] == 1.0);

    const std::vector<double> b{0.3, 0.3, 0.3};
    const auto nb = normalize_minmax(b);
    CHECK(nb.degenerate);
    CHECK(nb.values == std::vector<double>{0.0, 0.0, 0.0});

    const std::vector<double> c{1.0, 0.0};
    CHECK(normalize_minmax(c).values == std::vector<double>{1.0, 0.0});

    const std::vector<double> bad{0.1, std::nan("")};
    CHECK_THROWS_AS(normalize_minmax(bad), NonFiniteInput);
    const std::vector<double> inf{0.1, INFINITY};
    CHECK_THROWS_AS(normalize_minmax(inf), NonFiniteInput);
}

TEST_CASE("two well separated modes are recovered") {
    const auto v = bimodal_sample();
    const EmConfig cfg;
    const auto fit = fit_gmm_em(v, 2, 7, cfg);
    REQUIRE(fit.model.k() == 2);
    CHECK(std::abs(fit.model.components[0].mean - 0.1) < 0.01);
    CHECK(std::abs(fit.model.components[1].mean - 0.9) < 0.01);
    CHECK(std::abs(fit.model.components[0].weight - 0.5) < 0.05);
    CHECK(std::abs(fit.model.components[1].weight - 0.5) < 0.05);
    check_model_invariants(fit.model, cfg);
    CHECK(select_model_order(v, 7, cfg).k_star == 2);
}

TEST_CASE("constant series") {
    const std::vector<double> zeros(50, 0.0);
    const EmConfig cfg;
    const auto fit = fit_gmm_em(zeros, 1, 1, cfg);
    REQUIRE(fit.model.k() == 1);
    CHECK(fit.model.components[0].mean == 0.0);
    CHECK(fit.model.components[0].variance == cfg.variance_floor);
    CHECK(fit.model.components[0].weight == 1.0);
    const auto sel = select_model_order(zeros, 1, cfg);
    CHECK(sel.k_star == 1);
    CHECK(sel.components[0].variance == cfg.variance_floor);
}

TEST_CASE("k = 1 is the closed-form fixed point") {
    const auto v = sample_mixture({{1.0, 0.4, 0.1}}, 100, 5);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 100.0;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= 100.0;
    const auto fit = fit_gmm_em(v, 1, 0, EmConfig{});
    CHECK(fit.model.components[0].mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(fit.model.components[0].variance == doctest::Approx(var).epsilon(1e-12));
    CHECK(fit.model.components[0].weight == doctest::Approx(1.0).epsilon(1e-15));

    const std::vector<double> tight{0.5, 0.5 + 1e-5, 0.5 - 1e-5, 0.5};
    const auto floored = fit_gmm_em(tight, 1, 0, EmConfig{});
    CHECK(floored.model.components[0].variance == EmConfig{}.variance_floor);
}

TEST_CASE("single gaussian picks one component under BIC") {
    const auto v = sample_mixture({{1.0, 0.5, 0.05}}, 2000, 11);
    CHECK(select_model_order(v, 11, EmConfig{}).k_star == 1);
}

TEST_CASE("BIC prefers k = 1 on unimodal data") {
    int failures = 0;
    const EmConfig cfg;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const auto v = sample_mixture({{1.0, 0.5, 0.05}}, 2000, 1000 + trial);
        const double b1 = fit_gmm_em(v, 1, trial, cfg).model.criterion_value;
        const double b2 = fit_gmm_em(v, 2, trial, cfg).model.criterion_value;
        if (!(b1 < b2)) ++failures;
    }
    CHECK(failures <= 1);
}

TEST_CASE("criterion formulas") {
    CHECK(free_parameters(1) == 2);
    CHECK(free_parameters(5) == 14);
    CHECK(criterion_value(Criterion::bic, -10.0, 2, 100) == doctest::Approx(20.0 + 5.0 * std::log(100.0)));
    CHECK(criterion_value(Criterion::aic, -10.0, 2, 100) == doctest::Approx(30.0));
    CHECK(parse_criterion("aic") == Criterion::aic);
    CHECK_THROWS_AS(parse_criterion("mdl"), ConfigError);
}

TEST_CASE("EM log-likelihood never decreases") {
    const EmConfig cfg;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto v = sample_mixture({{0.7, 0.3, 0.05}, {0.2, 0.6, 0.08}, {0.1, 0.8, 0.02}}, 800, seed);
        for (int k = 1; k <= kMaxComponents; ++k) {
            const auto fit = fit_gmm_em(v, k, seed, cfg);
            for (std::size_t i = 1; i < fit.ll_trace.size(); ++i) {
                CHECK(fit.ll_trace[i] >= fit.ll_trace[i - 1] - 1e-8);
            }
            CHECK(fit.model.max_ll_decrease <= 1e-8);
            check_model_invariants(fit.model, cfg);
        }
    }
}

TEST_CASE("responsibility rows sum to one") {
    const auto v = bimodal_sample();
    for (int k = 1; k <= kMaxComponents; ++k) {
        const auto fit = fit_gmm_em(v, k, 3, EmConfig{});
        for (std::size_t i = 0; i < v.size(); ++i) {
            double s = 0.0;
            for (double g : fit.responsibilities.row(i)) {
                CHECK(g >= 0.0);
                CHECK(g <= 1.0);
                s += g;
            }
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
        CHECK(fit.responsibilities == posterior(fit.model, v));
    }
}

TEST_CASE("fit is covariant under affine maps") {
    const auto v = bimodal_sample();
    std::vector<double> w(v.size());
    const double a = 2.0, b = 0.1;
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = a * v[i] + b;
    const auto fv = fit_gmm_em(v, 2, 7, EmConfig{}).model;
    const auto fw = fit_gmm_em(w, 2, 7, EmConfig{}).model;
    for (int k = 0; k < 2; ++k) {
        CHECK(fw.components[k].mean == doctest::Approx(a * fv.components[k].mean + b).epsilon(1e-6));
        CHECK(fw.components[k].variance == doctest::Approx(a * a * fv.components[k].variance).epsilon(1e-5));
        CHECK(fw.components[k].weight == doctest::Approx(fv.components[k].weight).epsilon(1e-6));
    }
}

TEST_CASE("fits are deterministic") {
    const auto v = sample_mixture({{0.8, 0.3, 0.05}, {0.2, 0.7, 0.05}}, 1000, 4);
    const EmConfig cfg;
    for (int k = 1; k <= kMaxComponents; ++k) {
        const auto a = fit_gmm_em(v, k, 99, cfg);
        const auto b = fit_gmm_em(v, k, 99, cfg);
        CHECK(a.model == b.model);
        CHECK(a.responsibilities == b.responsibilities);
    }
    CHECK(select_model_order(v, 5, cfg) == select_model_order(v, 5, cfg));
}

TEST_CASE("posterior examples") {
    const std::vector<double> pts{0.0, 0.25, 0.5, 1.0};
    GmmModel one;
    one.components = {{1.0, 0.3, 0.01}};
    one.k_star = 1;
    const auto r1 = posterior(one, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(r1(i, 0) == 1.0);

    GmmModel sym;
    sym.components = {{0.5, 0.0, 0.04}, {0.5, 1.0, 0.04}};
    sym.k_star = 2;
    const std::vector<double> mid{0.5};
    const auto r2 = posterior(sym, mid);
    CHECK(r2(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r2(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

    // Direct density ratio at the first mean.
    GmmModel sep;
    sep.components = {{0.3, 0.2, 0.0025}, {0.7, 0.8, 0.0025}};
    sep.k_star = 2;
    const std::vector<double> at{0.2};
    const double d0 = 0.3 * normal_pdf(0.2, 0.2, 0.0025);
    const double d1 = 0.7 * normal_pdf(0.2, 0.8, 0.0025);
    const auto r3 = posterior(sep, at);
    CHECK(r3(0, 0) > 0.999);
    CHECK(r3(0, 0) == doctest::Approx(d0 / (d0 + d1)).epsilon(1e-12));

    GmmModel too_many;
    too_many.components.assign(6, {1.0 / 6, 0.5, 0.01});
    CHECK_THROWS(posterior(too_many, pts));
}

TEST_CASE("argument checks") {
    const std::vector<double> v{0.1, 0.2, 0.3};
    CHECK_THROWS_AS(fit_gmm_em(v, 0, 0, EmConfig{}), std::invalid_argument);
    CHECK_THROWS_AS(fit_gmm_em(v, 6, 0, EmConfig{}), std::invalid_argument);
    CHECK_THROWS_AS(fit_gmm_em(v, 4, 0, EmConfig{}), std::invalid_argument);
    CHECK_THROWS_AS(select_model_order(v, 0, EmConfig{}), std::invalid_argument);
}
