#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mclone/denoiser.hpp"
#include "mclone/guidance.hpp"
#include "mclone/schedule.hpp"

namespace mclone {

enum class GuidanceMode { kOff, kPlain, kPrimary, kInversion1 };

GuidanceMode guidance_mode_from_name(const std::string& name);
std::string guidance_mode_name(GuidanceMode m);

struct SamplerConfig {
  int steps = 100;
  int guided_steps = 50;
  double cfg_scale = 7.5;
  double lambda = 200.0;
  GuidanceMode mode = GuidanceMode::kOff;
  std::uint64_t seed = 0;
  /// Optional per-step factor on lambda (argument: step index in the grid).
  std::function<double(int)> lambda_multiplier;

  void validate() const;
};

struct SampleResult {
  Tensor latent;                // z_0 as produced by the last DDIM step, (f, c, h, w)
  Tensor clip;                  // latent clamped to [-1, 1]
  std::vector<double> energies; // g at each guided step
  int tapes_built = 0;
};

/// Guided DDIM sampling. Every step predicts conditional and null noise and
/// mixes them with cfg_scale; during the first guided_steps steps the energy
/// of the recorded block is differentiated w.r.t. z_t on the conditional pass
/// and lambda * sqrt(1 - ab_t) * grad shifts the noise estimate so that the
/// DDIM step descends the energy.
/// `rep` is required for plain/primary, `traj` for inversion_1. `start`
/// replaces the seeded Gaussian z_T (f, c, h, w).
SampleResult sample(const Denoiser& model, const NoiseSchedule& schedule, const SamplerConfig& config, int condition,
                    const MotionRepresentation* rep = nullptr, const GuidanceTrajectory* traj = nullptr,
                    const Tensor* start = nullptr);

struct InversionResult {
  std::vector<int> timesteps;         // ascending: 0, t_1, ..., t_n
  std::vector<Tensor> latents;        // one per timestep, (f, c, h, w)
  std::vector<AttentionRecord> records;  // per step (timesteps[1..]) when a block was requested
};

/// Deterministic DDIM inversion of z_0 (f, c, h, w) over the sampler grid of
/// `steps`. The move t_prev -> t uses the model's noise estimate at (z_prev, t).
InversionResult ddim_invert(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& z0, int condition,
                            int steps, const std::string& record_block = "");
/// Same over an explicit ascending grid of positive timesteps.
InversionResult ddim_invert_grid(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& z0, int condition,
                                 const std::vector<int>& ascending, const std::string& record_block = "");

/// Writes frame_000.pgm ... for a clip (f, c, h, w), first channel, [-1, 1].
void write_frames(const std::filesystem::path& dir, const Tensor& clip);

}  // namespace mclone
