#include "mclone/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mclone/diffusion.hpp"
#include "mclone/mclt.hpp"
#include "mclone/ops.hpp"

namespace mclone {
namespace {

void require_attention_dims(const Tensor& a, const char* what) {
  if (a.rank() != 3 || a.dims()[1] != a.dims()[2]) {
    throw ShapeError(std::string(what) + ": expected attention dims (h*w, f, f), got " + dims_to_string(a.dims()));
  }
}

Tensor batch_of_one(const Tensor& clip) {
  Shape d{1};
  d.insert(d.end(), clip.dims().begin(), clip.dims().end());
  return Tensor(d, clip.vec());
}

void check_clip(const Tensor& clip, const DenoiserConfig& mc) {
  const Shape want{mc.frames, mc.channels, mc.height, mc.width};
  if (clip.dims() != want) {
    throw ShapeError("clip dims " + dims_to_string(clip.dims()) + " do not match model " + dims_to_string(want));
  }
}

// Base-f digits packed into floats; 24 bits keep every packed value exact.
int digits_per_float(int f) {
  int bits = 1;
  while ((1 << bits) < f) ++bits;
  return std::max(1, 24 / bits);
}

}  // namespace

std::string extraction_mode_name(ExtractionMode m) { return m == ExtractionMode::kSingleStep ? "single_step" : "inversion"; }

Tensor topk_mask(const Tensor& attention, int k) {
  if (attention.rank() < 1) throw ShapeError("topk_mask: scalar input");
  const int f = static_cast<int>(attention.dims().back());
  if (k < 1 || k > f) throw ConfigError("top-k: k = " + std::to_string(k) + " outside [1, " + std::to_string(f) + "]");
  const std::size_t rows = attention.numel() / static_cast<std::size_t>(f);
  std::vector<float> m(attention.numel(), 0.0f);
  std::vector<int> order(static_cast<std::size_t>(f));
  for (std::size_t r = 0; r < rows; ++r) {
    const float* a = attention.data().data() + r * f;
    std::iota(order.begin(), order.end(), 0);
    // Larger value first; equal values keep the lower index first.
    std::stable_sort(order.begin(), order.end(), [a](int x, int y) { return a[x] > a[y]; });
    for (int i = 0; i < k; ++i) m[r * f + static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1.0f;
  }
  return Tensor(attention.dims(), std::move(m));
}

MotionRepresentation make_representation(const Tensor& attention, int k) {
  require_attention_dims(attention, "make_representation");
  MotionRepresentation rep;
  rep.M = topk_mask(attention, k);
  std::vector<float> l(attention.numel());
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = rep.M[i] * attention[i];
  rep.L = Tensor(attention.dims(), std::move(l));
  rep.k = k;
  return rep;
}

MotionRepresentation extract_representation(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& clip,
                                            const Tensor& noise, const ExtractOptions& opt,
                                            const std::string& source_id) {
  const auto& mc = model.config();
  check_clip(clip, mc);
  const int level = mc.block_level(opt.block);
  const Tensor z = schedule.add_noise(clip, opt.t_alpha, noise);
  auto out = model.predict_noise(batch_of_one(z), opt.condition, opt.t_alpha, {opt.block});
  MotionRepresentation rep = make_representation(out.records.front().map, opt.k);
  rep.t_alpha = opt.t_alpha;
  rep.block = opt.block;
  rep.mode = ExtractionMode::kSingleStep;
  rep.source_id = source_id;
  rep.noise_seed = opt.noise_seed;
  rep.condition = opt.condition;
  rep.block_height = mc.height_at(level);
  rep.block_width = mc.width_px_at(level);
  return rep;
}

MotionRepresentation extract_representation(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& clip,
                                            const ExtractOptions& opt, const std::string& source_id) {
  std::mt19937_64 rng(opt.noise_seed);
  const Tensor noise = Tensor::randn(clip.dims(), rng);
  return extract_representation(model, schedule, clip, noise, opt, source_id);
}

MotionRepresentation extract_representation_inverted(const Denoiser& model, const NoiseSchedule& schedule,
                                                     const Tensor& clip, const ExtractOptions& opt,
                                                     int inversion_steps, const std::string& source_id) {
  const auto& mc = model.config();
  check_clip(clip, mc);
  const int level = mc.block_level(opt.block);
  if (inversion_steps < 1 || inversion_steps > opt.t_alpha) {
    throw ConfigError("inversion steps must lie in [1, t_alpha]");
  }
  std::vector<int> grid;
  for (int i = 1; i <= inversion_steps; ++i) grid.push_back(opt.t_alpha * i / inversion_steps);
  const auto inv = ddim_invert_grid(model, schedule, clip, opt.condition, grid);
  auto out = model.predict_noise(batch_of_one(inv.latents.back()), opt.condition, opt.t_alpha, {opt.block});
  MotionRepresentation rep = make_representation(out.records.front().map, opt.k);
  rep.t_alpha = opt.t_alpha;
  rep.block = opt.block;
  rep.mode = ExtractionMode::kInversion;
  rep.source_id = source_id;
  rep.condition = opt.condition;
  rep.block_height = mc.height_at(level);
  rep.block_width = mc.width_px_at(level);
  return rep;
}

GuidanceTrajectory extract_trajectory(const Denoiser& model, const NoiseSchedule& schedule, const Tensor& clip,
                                      int steps, int guided_steps, int k, const std::string& block, int condition) {
  const auto& mc = model.config();
  check_clip(clip, mc);
  const int level = mc.block_level(block);
  if (guided_steps < 0 || guided_steps > steps) throw ConfigError("guided steps must lie in [0, steps]");
  const auto inv = ddim_invert(model, schedule, clip, condition, steps, block);
  // inv.records[j] belongs to timestep inv.timesteps[j + 1] (ascending); the
  // sampler walks the grid descending, so its step i is record steps - 1 - i.
  GuidanceTrajectory traj;
  for (int i = 0; i < guided_steps; ++i) {
    const std::size_t j = static_cast<std::size_t>(steps - 1 - i);
    MotionRepresentation rep = make_representation(inv.records[j].map, k);
    rep.t_alpha = inv.timesteps[j + 1];
    rep.block = block;
    rep.mode = ExtractionMode::kInversion;
    rep.condition = condition;
    rep.block_height = mc.height_at(level);
    rep.block_width = mc.width_px_at(level);
    traj.timesteps.push_back(rep.t_alpha);
    traj.steps.push_back(std::move(rep));
  }
  return traj;
}

Tensor guidance_energy(const MotionRepresentation& rep, const Tensor& attention_gen) {
  if (attention_gen.dims() != rep.L.dims()) {
    throw ShapeError("guidance energy: representation dims " + dims_to_string(rep.L.dims()) +
                     " do not match generated attention " + dims_to_string(attention_gen.dims()));
  }
  return sum_squares(sub(rep.L, mul(rep.M, attention_gen)));
}

Tensor motion_intensity_map(const MotionRepresentation& rep, bool include_unselected) {
  require_attention_dims(rep.L, "motion_intensity_map");
  const std::size_t hw = static_cast<std::size_t>(rep.L.dims()[0]);
  const std::size_t ff = static_cast<std::size_t>(rep.L.dims()[1] * rep.L.dims()[2]);
  if (static_cast<std::size_t>(rep.block_height) * static_cast<std::size_t>(rep.block_width) != hw) {
    throw ShapeError("motion_intensity_map: block size " + std::to_string(rep.block_height) + "x" +
                     std::to_string(rep.block_width) + " does not cover " + std::to_string(hw) + " positions");
  }
  std::vector<float> out(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    double total = 0.0, count = 0.0;
    for (std::size_t e = 0; e < ff; ++e) {
      const float m = rep.M[p * ff + e];
      if (!include_unselected && m == 0.0f) continue;
      total += rep.L[p * ff + e];
      count += 1.0;
    }
    out[p] = count > 0 ? static_cast<float>(total / count) : 0.0f;
  }
  return Tensor({rep.block_height, rep.block_width}, std::move(out));
}

void check_representation(const MotionRepresentation& rep, const DenoiserConfig& config) {
  const int level = config.block_level(rep.block);
  const std::int64_t hw = static_cast<std::int64_t>(config.height_at(level)) * config.width_px_at(level);
  const Shape want{hw, config.frames, config.frames};
  if (rep.L.dims() != want || rep.M.dims() != want) {
    throw ShapeError("representation dims " + dims_to_string(rep.L.dims()) + " (frames " +
                     std::to_string(rep.L.rank() == 3 ? rep.L.dims()[1] : 0) + ") do not match model block " +
                     rep.block + " " + dims_to_string(want) + " (frames " + std::to_string(config.frames) + ")");
  }
}

void save_representation(const MotionRepresentation& rep, const std::filesystem::path& dir) {
  require_attention_dims(rep.L, "save_representation");
  std::filesystem::create_directories(dir);
  const int f = rep.frames();
  const std::size_t rows = rep.L.numel() / static_cast<std::size_t>(f);
  std::vector<float> values;
  std::vector<int> indices;
  values.reserve(rows * static_cast<std::size_t>(rep.k));
  for (std::size_t r = 0; r < rows; ++r) {
    int ones = 0;
    for (int j = 0; j < f; ++j) {
      if (rep.M[r * f + j] == 0.0f) continue;
      values.push_back(rep.L[r * f + j]);
      indices.push_back(j);
      ++ones;
    }
    if (ones != rep.k) throw ShapeError("save_representation: mask row " + std::to_string(r) + " has " + std::to_string(ones) + " ones, k = " + std::to_string(rep.k));
  }
  const int per = digits_per_float(f);
  std::vector<float> packed((indices.size() + static_cast<std::size_t>(per) - 1) / static_cast<std::size_t>(per), 0.0f);
  for (std::size_t i = 0; i < packed.size(); ++i) {
    std::int64_t acc = 0;
    for (int d = per - 1; d >= 0; --d) {
      const std::size_t idx = i * static_cast<std::size_t>(per) + static_cast<std::size_t>(d);
      acc = acc * f + (idx < indices.size() ? indices[idx] : 0);
    }
    packed[i] = static_cast<float>(acc);
  }
  const std::int64_t hw = rep.L.dims()[0];
  const Shape packed_dims{static_cast<std::int64_t>(packed.size())};
  mclt::save_all(dir / "representation.mclt",
                 {Tensor({hw, f, rep.k}, std::move(values)), Tensor(packed_dims, std::move(packed))});
  write_manifest((dir / "manifest.txt").string(),
                 {{"format", "mclone-representation"},
                  {"t_alpha", std::to_string(rep.t_alpha)},
                  {"k", std::to_string(rep.k)},
                  {"block", rep.block},
                  {"mode", extraction_mode_name(rep.mode)},
                  {"source_id", rep.source_id},
                  {"noise_seed", std::to_string(rep.noise_seed)},
                  {"condition", std::to_string(rep.condition)},
                  {"frames", std::to_string(f)},
                  {"positions", std::to_string(hw)},
                  {"block_height", std::to_string(rep.block_height)},
                  {"block_width", std::to_string(rep.block_width)}});
}

MotionRepresentation load_representation(const std::filesystem::path& dir) {
  const auto man = read_manifest((dir / "manifest.txt").string());
  auto get = [&](const std::string& key) {
    auto it = man.find(key);
    if (it == man.end()) throw FormatError("representation manifest missing '" + key + "'");
    return it->second;
  };
  auto get_int = [&](const std::string& key) {
    try {
      return std::stoll(get(key));
    } catch (const std::logic_error&) {
      throw FormatError("representation manifest key '" + key + "' is not an integer");
    }
  };
  MotionRepresentation rep;
  rep.t_alpha = static_cast<int>(get_int("t_alpha"));
  rep.k = static_cast<int>(get_int("k"));
  rep.block = get("block");
  const std::string mode = get("mode");
  if (mode != "single_step" && mode != "inversion") throw FormatError("unknown extraction mode '" + mode + "'");
  rep.mode = mode == "single_step" ? ExtractionMode::kSingleStep : ExtractionMode::kInversion;
  rep.source_id = get("source_id");
  rep.noise_seed = std::stoull(get("noise_seed"));
  rep.condition = static_cast<int>(get_int("condition"));
  rep.block_height = static_cast<int>(get_int("block_height"));
  rep.block_width = static_cast<int>(get_int("block_width"));
  const int f = static_cast<int>(get_int("frames"));
  const std::int64_t hw = get_int("positions");

  const auto tensors = mclt::load_all(dir / "representation.mclt");
  if (tensors.size() != 2) throw FormatError("representation file must hold 2 tensors, found " + std::to_string(tensors.size()));
  const Tensor& values = tensors[0];
  const Tensor& packed = tensors[1];
  if (values.dims() != Shape{hw, f, rep.k}) {
    throw FormatError("representation values " + dims_to_string(values.dims()) + " disagree with manifest (positions " +
                      std::to_string(hw) + ", frames " + std::to_string(f) + ", k " + std::to_string(rep.k) + ")");
  }
  const int per = digits_per_float(f);
  const std::size_t n_idx = values.numel();
  if (packed.numel() != (n_idx + static_cast<std::size_t>(per) - 1) / static_cast<std::size_t>(per)) {
    throw FormatError("representation index list has " + std::to_string(packed.numel()) + " entries, manifest implies " +
                      std::to_string((n_idx + per - 1) / per));
  }
  std::vector<float> L(static_cast<std::size_t>(hw) * f * f, 0.0f), M(L.size(), 0.0f);
  for (std::size_t i = 0; i < n_idx; ++i) {
    std::int64_t acc = static_cast<std::int64_t>(packed[i / static_cast<std::size_t>(per)]);
    for (std::size_t d = 0; d < i % static_cast<std::size_t>(per); ++d) acc /= f;
    const int j = static_cast<int>(acc % f);
    const std::size_t row = i / static_cast<std::size_t>(rep.k);
    if (M[row * f + j] != 0.0f) throw FormatError("representation index list repeats an entry in row " + std::to_string(row));
    M[row * f + j] = 1.0f;
    L[row * f + j] = values[i];
  }
  rep.L = Tensor({hw, f, f}, std::move(L));
  rep.M = Tensor({hw, f, f}, std::move(M));
  return rep;
}

void write_pgm(const std::filesystem::path& path, const float* data, int h, int w, float lo, float hi) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  const float span = hi > lo ? hi - lo : 1.0f;
  for (int i = 0; i < h * w; ++i) {
    const float v = std::clamp((data[i] - lo) / span, 0.0f, 1.0f);
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
  }
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace mclone
