#pragma once

#include <vector>

#include "mclone/tensor.hpp"

namespace mclone {

/// Discrete-time variance schedule on the grid t = 0..T. Index 0 is the clean
/// signal (alpha_bar = 1); betas are defined for t = 1..T.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int total_steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);

  int total_steps() const { return total_steps_; }
  double beta(int t) const;
  double alpha_bar(int t) const;

  /// sqrt(ab_t) * z0 + sqrt(1 - ab_t) * eps, for 1 <= t <= T.
  Tensor add_noise(const Tensor& z0, int t, const Tensor& eps) const;

  /// Deterministic (eta = 0) DDIM move from t to t_prev given a noise estimate.
  Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev) const;
  /// x0 estimate (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t).
  Tensor predict_x0(const Tensor& z_t, const Tensor& eps_hat, int t) const;

  /// n timesteps evenly spread over the training grid, descending from T.
  std::vector<int> inference_grid(int steps) const;

 private:
  int total_steps_ = 0;
  std::vector<double> betas_;       // index t, betas_[0] = 0
  std::vector<double> alpha_bars_;  // index t, alpha_bars_[0] = 1
};

}  // namespace mclone
