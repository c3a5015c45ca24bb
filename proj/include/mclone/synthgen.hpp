#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mclone/tensor.hpp"

namespace mclone {

enum class MotionKind { kTranslate = 1, kPan = 2, kRotate = 3, kStatic = 4 };

/// Class id used as the model condition (0 is reserved for the null condition).
inline int class_id(MotionKind k) { return static_cast<int>(k); }
MotionKind kind_from_class(int id);
MotionKind kind_from_name(const std::string& name);
std::string kind_name(MotionKind k);

struct ClipGeometry {
  int frames = 8;
  int channels = 1;
  int height = 32;
  int width = 32;
};

struct MotionParams {
  int vx = 1, vy = 0;        // px/frame (translate, pan)
  double omega = 0.3;        // rad/frame (rotate)
  int size = 9;              // square side (translate)
  int x0 = -1, y0 = -1;      // square top-left at frame 0; -1 centres the path
  double background = 0.25;  // background texture amplitude
};

struct MotionTruth {
  MotionKind kind = MotionKind::kStatic;
  std::vector<int> dx, dy;           // per frame, displacement from the previous frame; index 0 is (0, 0)
  std::vector<double> cx, cy;        // object centre track (square/disc centre; frame centre for pan/static)
  double omega = 0.0;
};

struct VideoClip {
  Tensor data;  // (f, c, h, w) in [-1, 1]
  std::string id;
  MotionKind kind = MotionKind::kStatic;
};

struct GeneratedClip {
  VideoClip clip;
  MotionTruth truth;
};

/// Deterministic render. Textures are periodic sums of integer-frequency
/// sinusoids drawn from `seed`, so pans wrap exactly.
GeneratedClip gen_clip(MotionKind kind, const MotionParams& params, std::uint64_t seed, const ClipGeometry& geo = {});

/// Random admissible parameters for a kind (integer speeds up to 2 px/frame,
/// |vx| != |vy| for pans so x and y tracks stay distinguishable).
MotionParams random_params(MotionKind kind, std::uint64_t seed, const ClipGeometry& geo = {});

struct DatasetEntry {
  std::string id;
  int class_id = 0;
  std::string clip_file;
  std::string truth_file;
};

/// Balanced in-memory corpus: `count` clips of every motion kind.
std::vector<GeneratedClip> gen_corpus(int count_per_class, std::uint64_t seed, const ClipGeometry& geo = {});

/// Writes the corpus under `dir`: clips/<id>.mclt, truth/<id>.txt and
/// manifest.txt ("id class clip truth" per line). count 0 writes an empty manifest.
std::vector<DatasetEntry> gen_dataset(const std::filesystem::path& dir, int count_per_class, std::uint64_t seed,
                                      const ClipGeometry& geo = {});
std::vector<DatasetEntry> read_dataset_manifest(const std::filesystem::path& dir);

void write_truth(const std::filesystem::path& path, const MotionTruth& truth);
MotionTruth read_truth(const std::filesystem::path& path);

/// Stacks clips into a batch [b, f, c, h, w].
Tensor stack_clips(const std::vector<const VideoClip*>& clips);

}  // namespace mclone
