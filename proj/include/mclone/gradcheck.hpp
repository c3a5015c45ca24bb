#pragma once

#include <functional>

#include "mclone/tensor.hpp"

namespace mclone {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

enum class Stencil {
  kCentral,    // (f(x+h) - f(x-h)) / 2h
  kFivePoint,  // fourth-order central stencil; tolerates larger h under float rounding
  kSevenPoint, // sixth-order; larger h again, for float forwards with small gradients
};

/// Compares the taped gradient of scalar `fn` at `x` with finite differences
/// of step `eps`. Per coordinate: |analytic - numeric| / (|numeric| + 1e-8).
GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, float eps,
                                  Stencil stencil = Stencil::kCentral);

}  // namespace mclone
