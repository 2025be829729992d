#pragma once

#include <functional>
#include <vector>

#include "priormoe/ops.hpp"

namespace priormoe::ad {

// Compares reverse-mode gradients of a scalar-valued closure against central
// differences. Returns the maximum over checked coordinates of
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
//
// `max_coords_per_input` limits the finite-difference sweep per input tensor
// (0 = all coordinates); selected coordinates are drawn deterministically
// from `seed`.
double grad_check(const std::function<Var(const std::vector<Var>&)>& closure,
                  const std::vector<Tensor>& inputs, double h = 1e-5,
                  int64_t max_coords_per_input = 0, uint64_t seed = 0);

}  // namespace priormoe::ad
