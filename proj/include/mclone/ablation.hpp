#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mclone/diffusion.hpp"
#include "mclone/eval.hpp"
#include "mclone/guidance.hpp"
#include "mclone/synthgen.hpp"

namespace mclone {

/// A reference clip with its ground-truth motion and the class used to
/// condition the generated clips.
struct Reference {
  VideoClip clip;
  MotionTruth truth;
  int condition = kNullCondition;
};

/// Fixed settings shared by every grid point of a sweep.
struct SweepConfig {
  ExtractOptions extract;
  SamplerConfig sampler;  // sampler.mode is the guidance mode unless the axis is "mode"
  std::vector<std::uint64_t> seeds{0};
  int threads = 1;
};

struct RunResult {
  std::string reference_id;
  std::uint64_t seed = 0;
  MotionScore score;
  double temporal_consistency = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepRow {
  std::string axis;
  std::string value;
  double fidelity = 0.0;        // mean correlation over successful runs
  double mean_abs_error = 0.0;  // mean displacement error
  double temporal_consistency = 0.0;
  double wall_seconds = 0.0;
  int runs = 0;
  int failed = 0;
  std::vector<RunResult> details;
};

/// Extracts a representation for `ref` (k = f for plain guidance) and samples
/// one clip per seed. Errors are caught per run and reported in the result.
std::vector<RunResult> guided_runs(const Denoiser& model, const NoiseSchedule& schedule, const Reference& ref,
                                   const ExtractOptions& extract, const SamplerConfig& sampler,
                                   const std::vector<std::uint64_t>& seeds);

/// Sweeps one axis (k | t_alpha | block | mode) over `grid` with every other
/// setting fixed; one row per grid value averaged over references and seeds.
std::vector<SweepRow> ablation_sweep(const Denoiser& model, const NoiseSchedule& schedule, const std::string& axis,
                                     const std::vector<std::string>& grid, const SweepConfig& config,
                                     const std::vector<Reference>& references);

/// Tab-separated table with a header row. Rows with failed runs are marked partial.
void write_sweep_table(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

/// One line per (grid value, reference, seed) with that run's scores.
void write_run_table(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

}  // namespace mclone
