#pragma once

#include <vector>

#include "mclone/synthgen.hpp"
#include "mclone/tensor.hpp"

namespace mclone {

struct ShiftEstimate {
  std::vector<int> dx, dy;          // per frame; index 0 is (0, 0)
  std::vector<double> score;        // NCC at the chosen shift (1.0 for frame 0)
  std::vector<bool> low_confidence; // constant frame in the pair
};

/// Integer shift between consecutive frames by exhaustive search over
/// |dx|, |dy| <= h/4 maximising zero-mean NCC on the overlap. Frame t is
/// modelled as frame t-1 moved by (dx, dy). Channels are averaged.
ShiftEstimate estimate_displacements(const Tensor& clip);

/// Zero-mean NCC of `b` against `a` moved by (dx, dy), on the overlap.
/// Returns 0 when either side has no variance there (flagged via `degenerate`).
double shifted_ncc(const float* a, const float* b, int h, int w, int dx, int dy, bool* degenerate = nullptr);

struct MotionScore {
  double correlation = 0.0;
  double mean_abs_error = 0.0;
  ShiftEstimate estimate;
};

/// Pearson correlation between [dx_1..dx_{f-1}, dy_1..dy_{f-1}] of the truth
/// and of the estimate from `generated`, plus mean absolute displacement error.
/// Throws ConfigError when the truth sequence has zero variance.
MotionScore motion_fidelity(const MotionTruth& reference, const Tensor& generated);

/// Mean NCC between consecutive frames at the estimated shift; pairs of
/// constant frames count as 1.0.
double temporal_consistency(const Tensor& clip);

/// Pearson correlation; 0 when either side is constant.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace mclone
