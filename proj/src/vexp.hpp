#pragma once

#include <cstddef>

namespace tcap::detail {

// In-place exp over a contiguous buffer. Built in its own translation unit
// with vectorised libm calls; inputs must be finite.
void exp_inplace(double* values, std::size_t n) noexcept;

}  // namespace tcap::detail
