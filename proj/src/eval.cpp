#include "mclone/eval.hpp"

#include <cmath>
#include <cstdlib>
#include <tuple>

namespace mclone {
namespace {

struct Frames {
  int f, h, w;
  std::vector<float> data;  // channel-averaged, (f, h, w)
  const float* frame(int t) const { return data.data() + static_cast<std::size_t>(t) * h * w; }
};

Frames channel_mean(const Tensor& clip) {
  if (clip.rank() != 4) throw ShapeError("expected clip dims (f, c, h, w), got " + dims_to_string(clip.dims()));
  Frames fr{static_cast<int>(clip.dims()[0]), static_cast<int>(clip.dims()[2]), static_cast<int>(clip.dims()[3]), {}};
  if (fr.f < 2) throw ShapeError("motion estimation needs at least 2 frames, got " + dims_to_string(clip.dims()));
  const int c = static_cast<int>(clip.dims()[1]);
  const std::size_t plane = static_cast<std::size_t>(fr.h) * fr.w;
  fr.data.assign(static_cast<std::size_t>(fr.f) * plane, 0.0f);
  for (int t = 0; t < fr.f; ++t)
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < plane; ++i)
        fr.data[t * plane + i] += clip[(static_cast<std::size_t>(t) * c + ch) * plane + i] / static_cast<float>(c);
  return fr;
}

bool constant_frame(const float* p, std::size_t n) {
  for (std::size_t i = 1; i < n; ++i)
    if (p[i] != p[0]) return false;
  return true;
}

}  // namespace

double shifted_ncc(const float* a, const float* b, int h, int w, int dx, int dy, bool* degenerate) {
  // b(x, y) compared with a(x - dx, y - dy) where both are inside the frame.
  const int x0 = std::max(0, dx), x1 = std::min(w, w + dx);
  const int y0 = std::max(0, dy), y1 = std::min(h, h + dy);
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  const double n = static_cast<double>(x1 - x0) * (y1 - y0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double va = a[(y - dy) * w + (x - dx)], vb = b[y * w + x];
      sa += va;
      sb += vb;
      saa += va * va;
      sbb += vb * vb;
      sab += va * vb;
    }
  const double cov = sab - sa * sb / n;
  const double va = saa - sa * sa / n, vb = sbb - sb * sb / n;
  const double tiny = 1e-9 * n;
  if (va <= tiny || vb <= tiny) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  if (degenerate) *degenerate = false;
  return cov / std::sqrt(va * vb);
}

ShiftEstimate estimate_displacements(const Tensor& clip) {
  const Frames fr = channel_mean(clip);
  const int r = fr.h / 4;
  const std::size_t plane = static_cast<std::size_t>(fr.h) * fr.w;
  ShiftEstimate est;
  est.dx.push_back(0);
  est.dy.push_back(0);
  est.score.push_back(1.0);
  est.low_confidence.push_back(false);
  for (int t = 1; t < fr.f; ++t) {
    const float* a = fr.frame(t - 1);
    const float* b = fr.frame(t);
    if (constant_frame(a, plane) || constant_frame(b, plane)) {
      est.dx.push_back(0);
      est.dy.push_back(0);
      est.score.push_back(0.0);
      est.low_confidence.push_back(true);
      continue;
    }
    // Order key: higher NCC, then smaller |dx| + |dy|, then (dx, dy) lexicographic.
    double best = -2.0;
    int bx = 0, by = 0;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const double s = shifted_ncc(a, b, fr.h, fr.w, dx, dy);
        const auto key = std::make_tuple(std::abs(dx) + std::abs(dy), dx, dy);
        const auto best_key = std::make_tuple(std::abs(bx) + std::abs(by), bx, by);
        if (s > best || (s == best && key < best_key)) {
          best = s;
          bx = dx;
          by = dy;
        }
      }
    }
    est.dx.push_back(bx);
    est.dy.push_back(by);
    est.score.push_back(best);
    est.low_confidence.push_back(false);
  }
  return est;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: sequences differ in length or are empty");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

MotionScore motion_fidelity(const MotionTruth& reference, const Tensor& generated) {
  MotionScore out;
  out.estimate = estimate_displacements(generated);
  const std::size_t f = out.estimate.dx.size();
  if (reference.dx.size() != f || reference.dy.size() != f) {
    throw ShapeError("motion_fidelity: reference has " + std::to_string(reference.dx.size()) +
                     " frames, generated clip has " + std::to_string(f));
  }
  std::vector<double> ref, gen;
  for (std::size_t t = 1; t < f; ++t) {
    ref.push_back(reference.dx[t]);
    gen.push_back(out.estimate.dx[t]);
  }
  for (std::size_t t = 1; t < f; ++t) {
    ref.push_back(reference.dy[t]);
    gen.push_back(out.estimate.dy[t]);
  }
  double mean = 0;
  for (double v : ref) mean += v;
  mean /= static_cast<double>(ref.size());
  double var = 0;
  for (double v : ref) var += (v - mean) * (v - mean);
  if (var <= 0) {
    throw ConfigError("motion_fidelity: reference displacement sequence has zero variance; use the static-case check");
  }
  out.correlation = pearson(ref, gen);
  double err = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) err += std::abs(ref[i] - gen[i]);
  out.mean_abs_error = err / static_cast<double>(ref.size());
  return out;
}

double temporal_consistency(const Tensor& clip) {
  const ShiftEstimate est = estimate_displacements(clip);
  const Frames fr = channel_mean(clip);
  double total = 0;
  for (int t = 1; t < fr.f; ++t) {
    if (est.low_confidence[static_cast<std::size_t>(t)]) {
      const std::size_t plane = static_cast<std::size_t>(fr.h) * fr.w;
      // Constant pair counts as fully consistent; constant vs textured as 0.
      const bool both = constant_frame(fr.frame(t - 1), plane) && constant_frame(fr.frame(t), plane);
      total += both ? 1.0 : 0.0;
      continue;
    }
    total += est.score[static_cast<std::size_t>(t)];
  }
  return total / (fr.f - 1);
}

}  // namespace mclone
