#include "tcap/gmm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

#include "tcap/error.hpp"
#include "tcap/rng.hpp"
#include "vexp.hpp"

namespace tcap::gmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kMinWeight = 1e-12;

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double variance_of(std::span<const double> v, double mean) {
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size());
}

// Linear-interpolated quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// Per-component terms of the log density: log(pi) - 0.5 log(2 pi var) and 1 / (2 var).
struct LogTerms {
    std::array<double, kMaxComponents> offset{};
    std::array<double, kMaxComponents> inv2var{};
    std::array<double, kMaxComponents> mean{};
};

LogTerms log_terms(const std::vector<Component>& comps) {
    LogTerms t;
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const auto& c = comps[k];
        t.offset[k] = std::log(c.weight) - 0.5 * (kLog2Pi + std::log(c.variance));
        t.inv2var[k] = 0.5 / c.variance;
        t.mean[k] = c.mean;
    }
    return t;
}

// Sufficient statistics of one E-step pass. Second moments are taken about
// the current means so the variance update stays well conditioned.
struct Stats {
    std::array<double, kMaxComponents> nk{};
    std::array<double, kMaxComponents> sx{};   // sum g (x - mean)
    std::array<double, kMaxComponents> sxx{};  // sum g (x - mean)^2
};

constexpr std::size_t kBlock = 256;

// One E-step pass over `x` in blocks of kBlock points, component-major within
// a block so the exponentials run over contiguous buffers. Returns the data
// log-likelihood; fills `resp` and/or `st` when given.
template <std::size_t K>
double e_pass(const std::vector<Component>& comps, std::span<const double> x, Responsibilities* resp, Stats* st) {
    const LogTerms t = log_terms(comps);
    std::array<double, K * kBlock> lp;
    std::array<double, kBlock> mx;
    std::array<double, kBlock> inv;
    std::array<double, K> nk{}, sx{}, sxx{};
    double ll_max = 0.0;
    double ll_log = 0.0;
    double prod = 1.0;  // product of per-point normalisers, each in [1, K]
    int in_prod = 0;

    for (std::size_t i0 = 0; i0 < x.size(); i0 += kBlock) {
        const std::size_t n = std::min(kBlock, x.size() - i0);
        const double* xb = x.data() + i0;
        for (std::size_t j = 0; j < K; ++j) {
            double* row = lp.data() + j * kBlock;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = xb[i] - t.mean[j];
                row[i] = t.offset[j] - d * d * t.inv2var[j];
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            double m = lp[i];
            for (std::size_t j = 1; j < K; ++j) m = std::max(m, lp[j * kBlock + i]);
            mx[i] = m;
        }
        for (std::size_t j = 0; j < K; ++j) {
            double* row = lp.data() + j * kBlock;
            for (std::size_t i = 0; i < n; ++i) row[i] -= mx[i];
            detail::exp_inplace(row, n);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < K; ++j) s += lp[j * kBlock + i];
            inv[i] = 1.0 / s;
            ll_max += mx[i];
            prod *= s;
            if (++in_prod == 64) {
                ll_log += std::log(prod);
                prod = 1.0;
                in_prod = 0;
            }
        }
        if (resp) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < K; ++j) (*resp)(i0 + i, j) = lp[j * kBlock + i] * inv[i];
            }
        }
        if (st) {
            for (std::size_t j = 0; j < K; ++j) {
                const double* row = lp.data() + j * kBlock;
                for (std::size_t i = 0; i < n; ++i) {
                    const double g = row[i] * inv[i];
                    const double d = xb[i] - t.mean[j];
                    nk[j] += g;
                    sx[j] += g * d;
                    sxx[j] += g * d * d;
                }
            }
        }
    }
    ll_log += std::log(prod);
    if (st) {
        for (std::size_t j = 0; j < K; ++j) {
            st->nk[j] = nk[j];
            st->sx[j] = sx[j];
            st->sxx[j] = sxx[j];
        }
    }
    return ll_max + ll_log;
}

double e_step(const std::vector<Component>& comps, std::span<const double> x, Responsibilities* resp,
              Stats* st = nullptr) {
    switch (comps.size()) {
        case 1: return e_pass<1>(comps, x, resp, st);
        case 2: return e_pass<2>(comps, x, resp, st);
        case 3: return e_pass<3>(comps, x, resp, st);
        case 4: return e_pass<4>(comps, x, resp, st);
        case 5: return e_pass<5>(comps, x, resp, st);
        default: throw std::invalid_argument("mixtures must have 1 to 5 components");
    }
}

void m_step(std::vector<Component>& comps, const Stats& st, std::size_t n, double variance_floor) {
    double wsum = 0.0;
    for (std::size_t j = 0; j < comps.size(); ++j) {
        auto& c = comps[j];
        const double nk = st.nk[j];
        c.weight = std::max(nk / static_cast<double>(n), kMinWeight);
        wsum += c.weight;
        if (nk > 0.0) {
            const double shift = st.sx[j] / nk;
            c.mean += shift;
            c.variance = std::max(st.sxx[j] / nk - shift * shift, variance_floor);
        } else {
            c.variance = variance_floor;
        }
    }
    for (auto& c : comps) c.weight /= wsum;
}

struct RunResult {
    std::vector<Component> comps;
    std::vector<double> trace;
    double ll = -std::numeric_limits<double>::infinity();
    bool converged = false;
    int iterations = 0;
    double max_decrease = 0.0;
};

RunResult run_em(std::vector<Component> comps, std::span<const double> x, const EmConfig& cfg) {
    RunResult r;
    Stats st;
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 0; it <= cfg.max_iters; ++it) {
        const double ll = e_step(comps, x, nullptr, &st);
        r.trace.push_back(ll);
        r.iterations = it;
        if (!std::isfinite(ll)) {
            r.ll = ll;
            r.comps = std::move(comps);
            return r;
        }
        if (it > 0) {
            const double gain = ll - prev;
            r.max_decrease = std::max(r.max_decrease, -gain);
            if (gain < cfg.ll_tol * std::max(1.0, std::abs(ll))) {
                r.converged = true;
                prev = ll;
                break;
            }
        }
        prev = ll;
        if (it == cfg.max_iters) break;
        m_step(comps, st, x.size(), cfg.variance_floor);
    }
    r.ll = prev;
    r.comps = std::move(comps);
    return r;
}

void check_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NonFiniteInput("series contains a non-finite value");
    }
}

}  // namespace

std::string_view to_string(Criterion c) noexcept {
    return c == Criterion::bic ? "bic" : "aic";
}

Criterion parse_criterion(std::string_view name) {
    if (name == "bic" || name == "BIC") return Criterion::bic;
    if (name == "aic" || name == "AIC") return Criterion::aic;
    throw ConfigError("unknown criterion '" + std::string(name) + "' (expected bic or aic)");
}

double log_normal_pdf(double x, double mean, double variance) noexcept {
    const double d = x - mean;
    return -0.5 * (kLog2Pi + std::log(variance) + d * d / variance);
}

double normal_pdf(double x, double mean, double variance) noexcept {
    return std::exp(log_normal_pdf(x, mean, variance));
}

double criterion_value(Criterion criterion, double ll, int k, std::size_t n) {
    const auto p = static_cast<double>(free_parameters(k));
    if (criterion == Criterion::bic) return -2.0 * ll + p * std::log(static_cast<double>(n));
    return -2.0 * ll + 2.0 * p;
}

NormalizedSeries normalize_minmax(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("normalize_minmax: empty series");
    check_finite(values);
    NormalizedSeries out;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    out.min = *lo;
    out.max = *hi;
    out.values.resize(values.size(), 0.0);
    if (out.max == out.min) {
        out.degenerate = true;
        return out;
    }
    const double range = out.max - out.min;
    for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = (values[i] - out.min) / range;
    return out;
}

GmmFit fit_gmm_em(std::span<const double> values, int k, std::uint64_t seed, const EmConfig& cfg) {
    if (k < 1 || k > kMaxComponents) throw std::invalid_argument("fit_gmm_em: k must be in [1, 5]");
    if (values.size() < static_cast<std::size_t>(k)) throw std::invalid_argument("fit_gmm_em: fewer values than components");
    check_finite(values);

    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double mu = mean_of(values);
    const double var = variance_of(values, mu);
    const double init_var = std::max(var / k, cfg.variance_floor);

    std::vector<Component> base(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        base[j] = {1.0 / k, quantile(sorted, (j + 0.5) / k), init_var};
    }

    RunResult best;
    bool have_best = false;
    double max_decrease = 0.0;
    const int restarts = std::max(1, cfg.n_init);
    for (int r = 0; r < restarts; ++r) {
        std::vector<Component> init = base;
        if (r > 0) {
            std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(r)}));
            std::normal_distribution<double> jitter(0.0, std::sqrt(init_var));
            for (auto& c : init) c.mean = std::clamp(c.mean + jitter(rng), sorted.front(), sorted.back());
        }
        RunResult run = run_em(std::move(init), values, cfg);
        max_decrease = std::max(max_decrease, run.max_decrease);
        if (!std::isfinite(run.ll)) continue;
        if (!have_best || run.ll > best.ll) {
            best = std::move(run);
            have_best = true;
        }
    }
    if (!have_best) throw FitFailure("all " + std::to_string(restarts) + " EM restarts diverged for k=" + std::to_string(k));

    // Canonical order: ascending mean, then ascending variance.
    std::vector<std::size_t> order(best.comps.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ca = best.comps[a];
        const auto& cb = best.comps[b];
        return ca.mean != cb.mean ? ca.mean < cb.mean : ca.variance < cb.variance;
    });

    GmmFit fit;
    fit.model.components.reserve(order.size());
    for (std::size_t j : order) fit.model.components.push_back(best.comps[j]);
    fit.model.k_star = k;
    fit.model.log_likelihood = best.ll;
    fit.model.criterion_value = criterion_value(cfg.criterion, best.ll, k, values.size());
    fit.model.converged = best.converged;
    fit.model.iterations = best.iterations;
    fit.model.max_ll_decrease = max_decrease;
    fit.responsibilities = posterior(fit.model, values);
    fit.ll_trace = std::move(best.trace);
    return fit;
}

GmmModel select_model_order(std::span<const double> values, std::uint64_t seed, const EmConfig& cfg) {
    if (values.size() < static_cast<std::size_t>(kMaxComponents)) {
        throw std::invalid_argument("select_model_order: need at least 5 values");
    }
    check_finite(values);

    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (*lo == *hi) {
        GmmModel m;
        m.components = {{1.0, *lo, cfg.variance_floor}};
        m.k_star = 1;
        m.log_likelihood = log_likelihood(m, values);
        m.criterion_value = criterion_value(cfg.criterion, m.log_likelihood, 1, values.size());
        m.converged = true;
        return m;
    }

    const int k_max = std::clamp(cfg.max_components, 1, kMaxComponents);
    GmmModel best;
    bool have_best = false;
    double max_decrease = 0.0;
    std::string last_error;
    for (int k = 1; k <= k_max; ++k) {
        try {
            GmmFit fit = fit_gmm_em(values, k, seed, cfg);
            max_decrease = std::max(max_decrease, fit.model.max_ll_decrease);
            if (!have_best || fit.model.criterion_value < best.criterion_value) {
                best = std::move(fit.model);
                have_best = true;
            }
        } catch (const FitFailure& e) {
            last_error = e.what();
        }
    }
    if (!have_best) throw FitFailure("model order selection failed for every k: " + last_error);
    best.max_ll_decrease = max_decrease;
    return best;
}

Responsibilities posterior(const GmmModel& model, std::span<const double> values) {
    if (model.components.empty() || model.components.size() > static_cast<std::size_t>(kMaxComponents)) {
        throw std::invalid_argument("posterior: model must have 1 to 5 components");
    }
    Responsibilities resp(values.size(), model.components.size());
    e_step(model.components, values, &resp);
    return resp;
}

double log_likelihood(const GmmModel& model, std::span<const double> values) {
    if (model.components.empty() || model.components.size() > static_cast<std::size_t>(kMaxComponents)) {
        throw std::invalid_argument("log_likelihood: model must have 1 to 5 components");
    }
    return e_step(model.components, values, nullptr);
}

}  // namespace tcap::gmm
