#pragma once
// Independent reference implementations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace tcap::testing {

struct NormalPart {
    double weight;
    double mean;
    double sd;
};

inline double density(const std::vector<NormalPart>& parts, double x) {
    double s = 0.0;
    for (const auto& p : parts) {
        const double z = (x - p.mean) / p.sd;
        s += p.weight * std::exp(-0.5 * z * z) / (p.sd * std::sqrt(2.0 * std::numbers::pi));
    }
    return s;
}

// Composite Simpson integral of min(f_t, f_b) on `points` nodes over
// [min(mu - 10 sd), max(mu + 10 sd)].
inline double reference_overlap(const std::vector<NormalPart>& target, const std::vector<NormalPart>& background,
                                long points = 1'000'001) {
    if (points % 2 == 0) ++points;
    double lo = 1e300, hi = -1e300;
    for (const auto* g : {&target, &background}) {
        for (const auto& p : *g) {
            lo = std::min(lo, p.mean - 10.0 * p.sd);
            hi = std::max(hi, p.mean + 10.0 * p.sd);
        }
    }
    const double h = (hi - lo) / static_cast<double>(points - 1);
    double sum = 0.0;
    for (long i = 0; i < points; ++i) {
        const double x = lo + h * static_cast<double>(i);
        const double f = std::min(density(target, x), density(background, x));
        const double w = (i == 0 || i == points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        sum += w * f;
    }
    return sum * h / 3.0;
}

struct OracleDs {
    std::vector<double> posterior;
    double prior_poisoned = 0.0;
    int iterations = 0;
};

// Dawid-Skene for two classes written directly in probability space:
// majority-fraction start, Laplace-smoothed confusion counts, stop when no
// posterior moves by `tol`, minority class reported as poisoned.
inline OracleDs oracle_dawid_skene(const std::vector<std::vector<int>>& votes, int max_iters = 100,
                                   double tol = 1e-6, double lambda = 1.0) {
    const std::size_t m = votes.size();
    const std::size_t h = votes.front().size();
    std::vector<double> q(m);  // P(class 1)
    for (std::size_t i = 0; i < m; ++i) {
        int yes = 0;
        for (int v : votes[i]) yes += v;
        q[i] = static_cast<double>(yes) / static_cast<double>(h);
    }
    double pi1 = 0.0;
    std::vector<double> a0(h), a1(h);  // P(vote = 1 | class 0), P(vote = 1 | class 1)
    int it = 0;
    for (it = 1; it <= max_iters; ++it) {
        double mass1 = 0.0;
        for (double v : q) mass1 += v;
        pi1 = mass1 / static_cast<double>(m);
        for (std::size_t j = 0; j < h; ++j) {
            double yes0 = 0.0, yes1 = 0.0, w0 = 0.0, w1 = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                w0 += 1.0 - q[i];
                w1 += q[i];
                if (votes[i][j] == 1) {
                    yes0 += 1.0 - q[i];
                    yes1 += q[i];
                }
            }
            a0[j] = (yes0 + lambda) / (w0 + 2.0 * lambda);
            a1[j] = (yes1 + lambda) / (w1 + 2.0 * lambda);
        }
        double worst = 0.0;
        std::vector<double> fresh(m);
        for (std::size_t i = 0; i < m; ++i) {
            double lik0 = 1.0 - pi1, lik1 = pi1;
            for (std::size_t j = 0; j < h; ++j) {
                lik0 *= votes[i][j] == 1 ? a0[j] : 1.0 - a0[j];
                lik1 *= votes[i][j] == 1 ? a1[j] : 1.0 - a1[j];
            }
            fresh[i] = lik1 / (lik0 + lik1);
            worst = std::max(worst, std::abs(fresh[i] - q[i]));
        }
        q = fresh;
        if (worst < tol) break;
    }
    OracleDs out;
    out.iterations = std::min(it, max_iters);
    bool flip = pi1 > 0.5;
    if (pi1 == 0.5) {
        double s0 = 0.0, s1 = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            s0 += a0[j];
            s1 += a1[j];
        }
        flip = s0 > s1;
    }
    out.prior_poisoned = flip ? 1.0 - pi1 : pi1;
    out.posterior = q;
    if (flip) {
        for (auto& v : out.posterior) v = 1.0 - v;
    }
    return out;
}

// Seeded 2-component mixture sample.
inline std::vector<double> sample_mixture(const std::vector<NormalPart>& parts, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<double> w;
    for (const auto& p : parts) w.push_back(p.weight);
    std::discrete_distribution<int> pick(w.begin(), w.end());
    std::vector<double> out(n);
    for (auto& x : out) {
        const auto& p = parts[static_cast<std::size_t>(pick(rng))];
        x = std::normal_distribution<double>(p.mean, p.sd)(rng);
    }
    return out;
}

// Per-test scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("tcap-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace tcap::testing
