#pragma once
// One-dimensional Gaussian mixtures fitted by EM, with the component count
// chosen by an information criterion.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tcap::gmm {

inline constexpr int kMaxComponents = 5;

enum class Criterion { bic, aic };

std::string_view to_string(Criterion c) noexcept;
Criterion parse_criterion(std::string_view name);  // throws ConfigError

struct EmConfig {
    Criterion criterion = Criterion::bic;
    double ll_tol = 1e-7;  // relative log-likelihood improvement
    int max_iters = 200;
    int n_init = 4;
    double variance_floor = 1e-6;
    int max_components = kMaxComponents;
};

struct Component {
    double weight = 0.0;
    double mean = 0.0;
    double variance = 0.0;

    bool operator==(const Component&) const = default;
};

struct GmmModel {
    std::vector<Component> components;  // ascending mean
    int k_star = 0;
    double log_likelihood = 0.0;
    double criterion_value = 0.0;
    bool converged = false;
    int iterations = 0;
    // Largest per-iteration log-likelihood decrease seen over every EM run that
    // contributed to this model (restarts and, after selection, every k).
    double max_ll_decrease = 0.0;

    int k() const noexcept { return static_cast<int>(components.size()); }

    bool operator==(const GmmModel&) const = default;
};

// Row-major M x K matrix of posterior component probabilities.
class Responsibilities {
public:
    Responsibilities() = default;
    Responsibilities(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t i, std::size_t k) noexcept { return data_[i * cols_ + k]; }
    double operator()(std::size_t i, std::size_t k) const noexcept { return data_[i * cols_ + k]; }

    std::span<const double> row(std::size_t i) const noexcept {
        return std::span<const double>(data_).subspan(i * cols_, cols_);
    }

    bool operator==(const Responsibilities&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct NormalizedSeries {
    std::vector<double> values;
    bool degenerate = false;  // max == min; values are all zero
    double min = 0.0;
    double max = 0.0;
};

// (v - min) / (max - min). Throws NonFiniteInput.
NormalizedSeries normalize_minmax(std::span<const double> values);

struct GmmFit {
    GmmModel model;
    Responsibilities responsibilities;
    std::vector<double> ll_trace;  // per-iteration log-likelihood of the kept restart
};

// EM with a fixed component count. Throws FitFailure when every restart ends
// with a non-finite likelihood.
GmmFit fit_gmm_em(std::span<const double> values, int k, std::uint64_t seed, const EmConfig& config);

// Fits k = 1..max_components and keeps the model minimising the criterion
// (ties go to the smaller k). A constant series yields a single
// floor-variance component without running EM.
GmmModel select_model_order(std::span<const double> values, std::uint64_t seed, const EmConfig& config);

Responsibilities posterior(const GmmModel& model, std::span<const double> values);

double log_likelihood(const GmmModel& model, std::span<const double> values);

constexpr int free_parameters(int k) noexcept { return 3 * k - 1; }

double criterion_value(Criterion criterion, double log_likelihood, int k, std::size_t n);

double log_normal_pdf(double x, double mean, double variance) noexcept;

double normal_pdf(double x, double mean, double variance) noexcept;

}  // namespace tcap::gmm
