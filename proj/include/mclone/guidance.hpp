#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mclone/denoiser.hpp"
#include "mclone/schedule.hpp"
#include "mclone/tensor.hpp"

namespace mclone {

enum class ExtractionMode { kSingleStep, kInversion };

/// Sparse motion clone of a reference clip at one attention block:
/// M is the top-k mask of the reference attention, L = M * A_ref.
struct MotionRepresentation {
  Tensor L;  // (h*w, f, f)
  Tensor M;  // (h*w, f, f), binary
  int t_alpha = 400;
  std::string block = "up_block.1";
  int k = 1;
  ExtractionMode mode = ExtractionMode::kSingleStep;
  std::string source_id;
  std::uint64_t noise_seed = 0;
  int condition = kNullCondition;
  int block_height = 0, block_width = 0;

  int frames() const { return static_cast<int>(L.dims()[1]); }
};

/// Per-step references for time-dependent guidance, ordered like the
/// sampler's descending grid (first entry = first guided step).
struct GuidanceTrajectory {
  std::vector<int> timesteps;
  std::vector<MotionRepresentation> steps;
};

/// M[p,i,j] = 1 for the k largest entries of each row (p,i); ties go to the
/// lower j. Exactly k ones per row.
Tensor topk_mask(const Tensor& attention, int k);

struct ExtractOptions {
  int t_alpha = 400;
  int k = 1;
  std::string block = "up_block.1";
  int condition = kNullCondition;
  std::uint64_t noise_seed = 0;
};

/// Noise the clip (f, c, h, w) to t_alpha with seeded Gaussian noise, run one
/// noise prediction recording `block`, and keep the top-k of its attention.
MotionRepresentation extract_representation(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& clip,
                                            const ExtractOptions& opt, const std::string& source_id = "");
/// Same with caller-supplied noise (f, c, h, w).
MotionRepresentation extract_representation(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& clip,
                                            const Tensor& noise, const ExtractOptions& opt,
                                            const std::string& source_id = "");
/// Single-step representation taken from a DDIM-inverted latent at t_alpha
/// (inversion over `inversion_steps` uniform steps on [0, t_alpha]).
MotionRepresentation extract_representation_inverted(const Denoiser& model, const NoiseSchedule& schedule,
                                                     const Tensor& clip, const ExtractOptions& opt,
                                                     int inversion_steps, const std::string& source_id = "");

/// Inverts the clip over the sampler grid of `steps` and keeps per-step
/// attention and top-k masks for the first `guided_steps` sampler steps.
GuidanceTrajectory extract_trajectory(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& clip,
                                      int steps, int guided_steps, int k, const std::string& block,
                                      int condition = kNullCondition);

/// Representation from an arbitrary attention map (used by the trajectory
/// and by tests).
MotionRepresentation make_representation(const Tensor& attention, int k);

/// g = || L - M * A_gen ||^2, differentiable through A_gen.
Tensor guidance_energy(const MotionRepresentation& rep, const Tensor& attention_gen);

/// Per-pixel mean of L over (i, j), shaped (h, w). By default the mean runs
/// over selected entries only; `include_unselected` averages all f*f entries.
Tensor motion_intensity_map(const MotionRepresentation& rep, bool include_unselected = false);

/// Representation directory: manifest.txt + representation.mclt holding the
/// selected L values (h*w, f, k) and the packed index list of M.
void save_representation(const MotionRepresentation& rep, const std::filesystem::path& dir);
MotionRepresentation load_representation(const std::filesystem::path& dir);

/// Throws ShapeError when the representation cannot guide `model` at its block.
void check_representation(const MotionRepresentation& rep, const DenoiserConfig& config);

/// 8-bit PGM, values linearly mapped from [lo, hi] to [0, 255].
void write_pgm(const std::filesystem::path& path, const float* data, int h, int w, float lo, float hi);

std::string extraction_mode_name(ExtractionMode m);

}  // namespace mclone
