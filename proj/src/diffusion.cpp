#include "mclone/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "mclone/ops.hpp"

namespace mclone {
namespace {

Tensor batch_of_one(const Tensor& clip) {
  Shape d{1};
  d.insert(d.end(), clip.dims().begin(), clip.dims().end());
  return Tensor(d, clip.vec());
}

Tensor drop_batch(const Tensor& z) {
  Shape d(z.dims().begin() + 1, z.dims().end());
  return Tensor(d, z.vec());
}

}  // namespace

GuidanceMode guidance_mode_from_name(const std::string& name) {
  if (name == "off") return GuidanceMode::kOff;
  if (name == "plain") return GuidanceMode::kPlain;
  if (name == "primary") return GuidanceMode::kPrimary;
  if (name == "inversion_1") return GuidanceMode::kInversion1;
  throw ConfigError("unknown guidance mode '" + name + "'; expected off|plain|primary|inversion_1");
}

std::string guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::kOff: return "off";
    case GuidanceMode::kPlain: return "plain";
    case GuidanceMode::kPrimary: return "primary";
    case GuidanceMode::kInversion1: return "inversion_1";
  }
  return "off";
}

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler steps must be >= 1");
  if (guided_steps < 0 || guided_steps > steps) {
    throw ConfigError("guided steps " + std::to_string(guided_steps) + " must lie in [0, " + std::to_string(steps) + "]");
  }
  if (!(cfg_scale >= 0.0)) throw ConfigError("cfg scale must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
}

SampleResult sample(const Denoiser& model, const NoiseSchedule& schedule, const SamplerConfig& config, int condition,
                    const MotionRepresentation* rep, const GuidanceTrajectory* traj, const Tensor* start) {
  config.validate();
  const auto& mc = model.config();
  const std::vector<int> grid = schedule.inference_grid(config.steps);

  std::string block;
  if (config.mode == GuidanceMode::kPlain || config.mode == GuidanceMode::kPrimary) {
    if (!rep) throw ConfigError("guidance mode " + guidance_mode_name(config.mode) + " needs a motion representation");
    check_representation(*rep, mc);
    if (config.mode == GuidanceMode::kPlain && rep->k != rep->frames()) {
      throw ConfigError("plain guidance needs an all-ones mask (k = f); representation has k = " + std::to_string(rep->k));
    }
    block = rep->block;
  } else if (config.mode == GuidanceMode::kInversion1) {
    if (!traj || traj->steps.empty()) throw ConfigError("inversion_1 guidance needs a guidance trajectory");
    if (static_cast<int>(traj->steps.size()) < config.guided_steps) {
      throw ConfigError("guidance trajectory has " + std::to_string(traj->steps.size()) + " steps, window needs " +
                        std::to_string(config.guided_steps));
    }
    for (int i = 0; i < config.guided_steps; ++i) {
      if (traj->timesteps[static_cast<std::size_t>(i)] != grid[static_cast<std::size_t>(i)]) {
        throw ConfigError("guidance trajectory timestep " + std::to_string(traj->timesteps[static_cast<std::size_t>(i)]) +
                          " does not match sampler step " + std::to_string(grid[static_cast<std::size_t>(i)]));
      }
      check_representation(traj->steps[static_cast<std::size_t>(i)], mc);
    }
    block = traj->steps.front().block;
  }

  Tensor z;
  const Shape clip_dims{mc.frames, mc.channels, mc.height, mc.width};
  if (start) {
    if (start->dims() != clip_dims) throw ShapeError("start latent dims " + dims_to_string(start->dims()));
    z = batch_of_one(*start);
  } else {
    std::mt19937_64 rng(config.seed);
    z = batch_of_one(Tensor::randn(clip_dims, rng));
  }

  SampleResult result;
  const float s = static_cast<float>(config.cfg_scale);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const int t = grid[i];
    const int t_prev = i + 1 < grid.size() ? grid[i + 1] : 0;
    const bool guided = config.mode != GuidanceMode::kOff && static_cast<int>(i) < config.guided_steps;

    Tensor eps_c, grad;
    if (guided) {
      Tape tape;
      ++result.tapes_built;
      const Tensor zw = tape.watch(z);
      ForwardOptions opt;
      opt.record = {block};
      auto out = model.forward(model.params().values, zw, {condition}, {t}, opt);
      const MotionRepresentation& target = config.mode == GuidanceMode::kInversion1 ? traj->steps[i] : *rep;
      const Tensor g = guidance_energy(target, out.records.front().map);
      result.energies.push_back(g.scalar_value());
      tape.backward(g);
      grad = tape.grad(zw);
      for (float v : grad.data()) {
        if (!std::isfinite(v)) throw NumericError("non-finite guidance gradient at step " + std::to_string(i) + " (t=" + std::to_string(t) + ")");
      }
      eps_c = out.eps.detach();
    } else {
      eps_c = model.predict_noise(z, condition, t).eps;
    }

    std::vector<float> eps(eps_c.vec());
    if (s != 0.0f) {
      const Tensor eps_u = model.predict_noise(z, kNullCondition, t).eps;
      for (std::size_t k = 0; k < eps.size(); ++k) eps[k] = eps[k] + s * (eps[k] - eps_u[k]);
    }
    if (guided) {
      const double mult = config.lambda_multiplier ? config.lambda_multiplier(static_cast<int>(i)) : 1.0;
      const float w = static_cast<float>(config.lambda * mult * std::sqrt(1.0 - schedule.alpha_bar(t)));
      // The DDIM update moves z against eps, so adding the scaled gradient to
      // the noise estimate steps z_t down the energy.
      if (w != 0.0f)
        for (std::size_t k = 0; k < eps.size(); ++k) eps[k] += w * grad[k];
    }
    z = schedule.ddim_step(z, Tensor(z.dims(), std::move(eps)), t, t_prev);
  }

  result.latent = drop_batch(z);
  std::vector<float> clipped(result.latent.vec());
  for (auto& v : clipped) v = std::clamp(v, -1.0f, 1.0f);
  result.clip = Tensor(clip_dims, std::move(clipped));
  return result;
}

InversionResult ddim_invert_grid(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& z0, int condition,
                                 const std::vector<int>& ascending, const std::string& record_block) {
  const auto& mc = model.config();
  const Shape clip_dims{mc.frames, mc.channels, mc.height, mc.width};
  if (z0.dims() != clip_dims) {
    throw ShapeError("clip dims " + dims_to_string(z0.dims()) + " do not match model " + dims_to_string(clip_dims));
  }
  if (!record_block.empty()) mc.block_level(record_block);
  InversionResult res;
  res.timesteps.push_back(0);
  res.latents.push_back(z0);
  Tensor z = batch_of_one(z0);
  int prev = 0;
  for (int t : ascending) {
    if (t <= prev || t > schedule.total_steps()) throw ConfigError("inversion grid must be ascending within (0, T]");
    std::set<std::string> rec;
    if (!record_block.empty()) rec.insert(record_block);
    auto out = model.predict_noise(z, condition, t, rec);
    if (!record_block.empty()) res.records.push_back(out.records.front());
    z = schedule.ddim_step(z, out.eps, prev, t);
    res.timesteps.push_back(t);
    res.latents.push_back(drop_batch(z));
    prev = t;
  }
  return res;
}

InversionResult ddim_invert(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& z0, int condition,
                            int steps, const std::string& record_block) {
  std::vector<int> grid = schedule.inference_grid(steps);
  std::reverse(grid.begin(), grid.end());
  return ddim_invert_grid(model, schedule, z0, condition, grid, record_block);
}

void write_frames(const std::filesystem::path& dir, const Tensor& clip) {
  if (clip.rank() != 4) throw ShapeError("write_frames: expected (f, c, h, w), got " + dims_to_string(clip.dims()));
  std::filesystem::create_directories(dir);
  const int f = static_cast<int>(clip.dims()[0]), c = static_cast<int>(clip.dims()[1]);
  const int h = static_cast<int>(clip.dims()[2]), w = static_cast<int>(clip.dims()[3]);
  for (int t = 0; t < f; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03d.pgm", t);
    write_pgm(dir / name, clip.data().data() + static_cast<std::size_t>(t) * c * h * w, h, w, -1.0f, 1.0f);
  }
}

}  // namespace mclone
