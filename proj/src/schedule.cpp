#include "mclone/schedule.hpp"

#include <cmath>
#include <string>

namespace mclone {

NoiseSchedule NoiseSchedule::linear(int total_steps, double beta_start, double beta_end) {
  if (total_steps < 1) throw ConfigError("schedule needs at least one step, got " + std::to_string(total_steps));
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ConfigError("schedule betas must satisfy 0 < start <= end < 1");
  }
  NoiseSchedule s;
  s.total_steps_ = total_steps;
  s.betas_.assign(static_cast<std::size_t>(total_steps) + 1, 0.0);
  s.alpha_bars_.assign(static_cast<std::size_t>(total_steps) + 1, 1.0);
  for (int t = 1; t <= total_steps; ++t) {
    const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t - 1) / (total_steps - 1);
    s.betas_[t] = beta_start + frac * (beta_end - beta_start);
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - s.betas_[t]);
  }
  return s;
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > total_steps_) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " +
                                                   std::to_string(total_steps_) + "]");
  return betas_[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > total_steps_) throw ConfigError("timestep " + std::to_string(t) + " outside [0, " +
                                                   std::to_string(total_steps_) + "]");
  return alpha_bars_[static_cast<std::size_t>(t)];
}

Tensor NoiseSchedule::add_noise(const Tensor& z0, int t, const Tensor& eps) const {
  if (t < 1 || t > total_steps_) {
    throw ConfigError("add_noise: timestep " + std::to_string(t) + " outside [1, " + std::to_string(total_steps_) + "]");
  }
  if (z0.dims() != eps.dims()) {
    throw ShapeError("add_noise: dims " + dims_to_string(z0.dims()) + " vs " + dims_to_string(eps.dims()));
  }
  const double ab = alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<float> out(z0.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * z0[i] + b * eps[i]);
  return Tensor(z0.dims(), std::move(out));
}

Tensor NoiseSchedule::predict_x0(const Tensor& z_t, const Tensor& eps_hat, int t) const {
  const double ab = alpha_bar(t);
  const double inv_a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<float> out(z_t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((z_t[i] - b * eps_hat[i]) * inv_a);
  return Tensor(z_t.dims(), std::move(out));
}

Tensor NoiseSchedule::ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev) const {
  if (z_t.dims() != eps_hat.dims()) {
    throw ShapeError("ddim_step: dims " + dims_to_string(z_t.dims()) + " vs " + dims_to_string(eps_hat.dims()));
  }
  if (t_prev < 0 || t_prev > total_steps_ || t < 0 || t > total_steps_) {
    throw ConfigError("ddim_step: timesteps " + std::to_string(t) + " -> " + std::to_string(t_prev) + " out of range");
  }
  const double ab = alpha_bar(t), ab_prev = alpha_bar(t_prev);
  const double inv_a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  const double a_prev = std::sqrt(ab_prev), b_prev = std::sqrt(1.0 - ab_prev);
  std::vector<float> out(z_t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (z_t[i] - b * eps_hat[i]) * inv_a;
    out[i] = static_cast<float>(a_prev * x0 + b_prev * eps_hat[i]);
  }
  return Tensor(z_t.dims(), std::move(out));
}

std::vector<int> NoiseSchedule::inference_grid(int steps) const {
  if (steps < 1 || steps > total_steps_) {
    throw ConfigError("inference step count " + std::to_string(steps) + " outside [1, " + std::to_string(total_steps_) +
                      "]");
  }
  // t_i = floor(i * T / n) for i = n..1: evenly spread, ends at T, distinct.
  std::vector<int> grid;
  for (int i = steps; i >= 1; --i) {
    grid.push_back(static_cast<int>((static_cast<std::int64_t>(i) * total_steps_) / steps));
  }
  return grid;
}

}  // namespace mclone
