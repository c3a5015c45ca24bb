#include "mclone/gradcheck.hpp"

#include <cmath>

namespace mclone {

GradCheckResult finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x, float eps,
                                  Stencil stencil) {
  Tape tape;
  Tensor leaf = tape.watch(x);
  Tensor y = fn(leaf);
  tape.backward(y);
  const Tensor analytic = tape.grad(leaf);

  GradCheckResult result;
  std::vector<float> probe(x.vec());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const float orig = probe[i];
    auto eval_at = [&](float step) {
      probe[i] = orig + step;
      const double v = fn(Tensor(x.dims(), probe)).scalar_value();
      probe[i] = orig;
      return v;
    };
    double numeric = 0.0;
    // Steps are measured as actually representable in float.
    const double h = (static_cast<double>(orig + eps) - static_cast<double>(orig - eps)) / 2.0;
    if (stencil == Stencil::kCentral) {
      numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * h);
    } else if (stencil == Stencil::kFivePoint) {
      numeric = (-eval_at(2 * eps) + 8 * eval_at(eps) - 8 * eval_at(-eps) + eval_at(-2 * eps)) / (12.0 * h);
    } else {
      numeric = (eval_at(3 * eps) - 9 * eval_at(2 * eps) + 45 * eval_at(eps) - 45 * eval_at(-eps) + 9 * eval_at(-2 * eps) -
                 eval_at(-3 * eps)) /
                (60.0 * h);
    }
    const double err = std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8);
    if (i == 0 || err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = i;
      result.analytic_at_worst = analytic[i];
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

}  // namespace mclone
