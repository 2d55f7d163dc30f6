#include "vexp.hpp"

#include <cmath>

namespace tcap::detail {

__attribute__((target_clones("avx2", "default")))
void exp_inplace(double* values, std::size_t n) noexcept {
    for (std::size_t i = 0; i < n; ++i) values[i] = std::exp(values[i]);
}

}  // namespace tcap::detail
