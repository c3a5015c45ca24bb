#include "mclone/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mclone/mclt.hpp"

namespace mclone {
namespace {

struct Wave {
  int u, v;
  double amp, phase;
};

// Periodic texture on an n x m torus, scaled to unit peak.
std::vector<float> periodic_texture(std::mt19937_64& rng, int h, int w, int components, int max_freq) {
  std::uniform_int_distribution<int> freq(-max_freq, max_freq);
  std::uniform_real_distribution<double> amp(0.5, 1.0), phase(0.0, 2.0 * std::numbers::pi);
  std::vector<Wave> waves;
  while (static_cast<int>(waves.size()) < components) {
    Wave wv{freq(rng), freq(rng), amp(rng), phase(rng)};
    if (wv.u == 0 && wv.v == 0) continue;
    waves.push_back(wv);
  }
  std::vector<float> tex(static_cast<std::size_t>(h) * w);
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (const auto& wv : waves) {
        s += wv.amp * std::cos(2.0 * std::numbers::pi * (static_cast<double>(wv.u) * x / w +
                                                          static_cast<double>(wv.v) * y / h) + wv.phase);
      }
      tex[static_cast<std::size_t>(y) * w + x] = static_cast<float>(s);
      peak = std::max(peak, std::abs(s));
    }
  }
  for (auto& t : tex) t = static_cast<float>(t / peak);
  return tex;
}

int wrap(int v, int n) { return ((v % n) + n) % n; }

}  // namespace

MotionKind kind_from_class(int id) {
  if (id < 1 || id > 4) throw ConfigError("no motion kind for class id " + std::to_string(id));
  return static_cast<MotionKind>(id);
}

MotionKind kind_from_name(const std::string& name) {
  if (name == "translate") return MotionKind::kTranslate;
  if (name == "pan") return MotionKind::kPan;
  if (name == "rotate") return MotionKind::kRotate;
  if (name == "static") return MotionKind::kStatic;
  throw ConfigError("unknown motion kind '" + name + "'; expected translate|pan|rotate|static");
}

std::string kind_name(MotionKind k) {
  switch (k) {
    case MotionKind::kTranslate: return "translate";
    case MotionKind::kPan: return "pan";
    case MotionKind::kRotate: return "rotate";
    case MotionKind::kStatic: return "static";
  }
  return "unknown";
}

GeneratedClip gen_clip(MotionKind kind, const MotionParams& p, std::uint64_t seed, const ClipGeometry& geo) {
  const int F = geo.frames, C = geo.channels, H = geo.height, W = geo.width;
  if (F < 1 || C < 1 || H < 4 || W < 4) throw ConfigError("clip geometry too small");
  std::mt19937_64 rng(seed);
  const auto bg = periodic_texture(rng, H, W, 6, 3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<float> data(static_cast<std::size_t>(F) * C * plane, 0.0f);

  GeneratedClip out;
  MotionTruth& truth = out.truth;
  truth.kind = kind;
  truth.dx.assign(static_cast<std::size_t>(F), 0);
  truth.dy.assign(static_cast<std::size_t>(F), 0);
  truth.cx.assign(static_cast<std::size_t>(F), (W - 1) / 2.0);
  truth.cy.assign(static_cast<std::size_t>(F), (H - 1) / 2.0);

  auto put = [&](int f, int y, int x, float v) {
    for (int c = 0; c < C; ++c) data[(static_cast<std::size_t>(f) * C + c) * plane + static_cast<std::size_t>(y) * W + x] = v;
  };

  switch (kind) {
    case MotionKind::kStatic:
      for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) put(f, y, x, 0.8f * bg[static_cast<std::size_t>(y) * W + x]);
      break;

    case MotionKind::kPan:
      for (int f = 0; f < F; ++f) {
        if (f > 0) {
          truth.dx[static_cast<std::size_t>(f)] = p.vx;
          truth.dy[static_cast<std::size_t>(f)] = p.vy;
        }
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            put(f, y, x, 0.8f * bg[static_cast<std::size_t>(wrap(y - f * p.vy, H)) * W + wrap(x - f * p.vx, W)]);
      }
      break;

    case MotionKind::kTranslate: {
      const int s = p.size;
      if (s < 2 || s > std::min(H, W)) throw ConfigError("square size " + std::to_string(s) + " does not fit the frame");
      const auto obj = periodic_texture(rng, s, s, 4, 2);
      std::uniform_int_distribution<int> sign(0, 1);
      const float base = sign(rng) ? 0.55f : -0.55f;
      // Default start centres the whole path in the frame.
      int x0 = p.x0 >= 0 ? p.x0 : (W - s - (F - 1) * p.vx) / 2;
      int y0 = p.y0 >= 0 ? p.y0 : (H - s - (F - 1) * p.vy) / 2;
      for (int f = 0; f < F; ++f) {
        const int ox = x0 + f * p.vx, oy = y0 + f * p.vy;
        if (ox < 0 || oy < 0 || ox + s > W || oy + s > H) {
          throw ConfigError("translate path leaves the frame at frame " + std::to_string(f) + " (square at " +
                            std::to_string(ox) + "," + std::to_string(oy) + ")");
        }
      }
      for (int f = 0; f < F; ++f) {
        const int ox = x0 + f * p.vx, oy = y0 + f * p.vy;
        if (f > 0) {
          truth.dx[static_cast<std::size_t>(f)] = p.vx;
          truth.dy[static_cast<std::size_t>(f)] = p.vy;
        }
        truth.cx[static_cast<std::size_t>(f)] = ox + (s - 1) / 2.0;
        truth.cy[static_cast<std::size_t>(f)] = oy + (s - 1) / 2.0;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            float v = static_cast<float>(p.background) * bg[static_cast<std::size_t>(y) * W + x];
            if (x >= ox && x < ox + s && y >= oy && y < oy + s) {
              v = base + 0.4f * obj[static_cast<std::size_t>(y - oy) * s + (x - ox)];
            }
            put(f, y, x, v);
          }
      }
      break;
    }

    case MotionKind::kRotate: {
      truth.omega = p.omega;
      const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
      const double radius = 0.35 * std::min(H, W);
      std::uniform_int_distribution<int> lobes(2, 4);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
      const int m = lobes(rng);
      const double ph = phase(rng);
      for (int f = 0; f < F; ++f) {
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const double rx = x - cx, ry = y - cy;
            const double r = std::hypot(rx, ry);
            float v = static_cast<float>(p.background) * bg[static_cast<std::size_t>(y) * W + x];
            if (r <= radius) {
              const double th = std::atan2(ry, rx) - p.omega * f;
              v = static_cast<float>(0.8 * std::cos(m * th + ph) * (0.6 + 0.4 * std::cos(std::numbers::pi * r / radius)));
            }
            put(f, y, x, v);
          }
      }
      break;
    }
  }

  for (auto& v : data) v = std::clamp(v, -1.0f, 1.0f);
  out.clip.data = Tensor({F, C, H, W}, std::move(data));
  out.clip.kind = kind;
  std::ostringstream id;
  id << kind_name(kind) << '_' << seed;
  out.clip.id = id.str();
  return out;
}

MotionParams random_params(MotionKind kind, std::uint64_t seed, const ClipGeometry& geo) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> vel(-2, 2);
  MotionParams p;
  switch (kind) {
    case MotionKind::kPan:
      do {
        p.vx = vel(rng);
        p.vy = vel(rng);
      } while (std::abs(p.vx) == std::abs(p.vy));
      break;
    case MotionKind::kTranslate: {
      // 8..10 px at 32x32; smaller frames shrink the square so a one-pixel-per-frame path still fits.
      const int side = std::min(geo.width, geo.height);
      const int lo = std::max(2, std::min(8, side / 4));
      const int hi = std::min(lo + 2, side - (geo.frames - 1));
      if (hi < lo) throw ConfigError("frame too small for a translating square over " + std::to_string(geo.frames) + " frames");
      std::uniform_int_distribution<int> size(lo, hi);
      p.size = size(rng);
      // Keep the path inside the frame.
      const int room_x = geo.width - p.size, room_y = geo.height - p.size;
      do {
        p.vx = vel(rng);
        p.vy = vel(rng);
      } while (p.vx == p.vy || std::abs(p.vx) * (geo.frames - 1) > room_x || std::abs(p.vy) * (geo.frames - 1) > room_y);
      const int span_x = room_x - std::abs(p.vx) * (geo.frames - 1);
      const int span_y = room_y - std::abs(p.vy) * (geo.frames - 1);
      std::uniform_int_distribution<int> ox(0, span_x), oy(0, span_y);
      p.x0 = ox(rng) + (p.vx < 0 ? -p.vx * (geo.frames - 1) : 0);
      p.y0 = oy(rng) + (p.vy < 0 ? -p.vy * (geo.frames - 1) : 0);
      break;
    }
    case MotionKind::kRotate: {
      std::uniform_real_distribution<double> om(0.15, 0.4);
      std::uniform_int_distribution<int> dir(0, 1);
      p.omega = om(rng) * (dir(rng) ? 1.0 : -1.0);
      break;
    }
    case MotionKind::kStatic:
      p.vx = p.vy = 0;
      break;
  }
  return p;
}

std::vector<GeneratedClip> gen_corpus(int count_per_class, std::uint64_t seed, const ClipGeometry& geo) {
  if (count_per_class < 0) throw ConfigError("count per class must be >= 0");
  std::vector<GeneratedClip> out;
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count_per_class; ++i) {
    for (int k = 1; k <= 4; ++k) {
      const auto kind = kind_from_class(k);
      const std::uint64_t s = rng();
      out.push_back(gen_clip(kind, random_params(kind, s, geo), s, geo));
    }
  }
  return out;
}

void write_truth(const std::filesystem::path& path, const MotionTruth& truth) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "# kind " << kind_name(truth.kind) << " omega " << truth.omega << '\n';
  for (std::size_t t = 0; t < truth.dx.size(); ++t) os << t << ' ' << truth.dx[t] << ' ' << truth.dy[t] << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

MotionTruth read_truth(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  MotionTruth truth;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key, kind, okey;
      ls >> hash >> key >> kind >> okey >> truth.omega;
      truth.kind = kind_from_name(kind);
      continue;
    }
    int t = 0, dx = 0, dy = 0;
    if (!(ls >> t >> dx >> dy) || t != static_cast<int>(truth.dx.size())) {
      throw FormatError(path.string() + ": malformed truth line '" + line + "'");
    }
    truth.dx.push_back(dx);
    truth.dy.push_back(dy);
  }
  return truth;
}

std::vector<DatasetEntry> gen_dataset(const std::filesystem::path& dir, int count_per_class, std::uint64_t seed,
                                      const ClipGeometry& geo) {
  std::filesystem::create_directories(dir);
  const auto corpus = gen_corpus(count_per_class, seed, geo);
  std::vector<DatasetEntry> entries;
  if (!corpus.empty()) {
    std::filesystem::create_directories(dir / "clips");
    std::filesystem::create_directories(dir / "truth");
  }
  for (const auto& g : corpus) {
    DatasetEntry e{g.clip.id, class_id(g.clip.kind), "clips/" + g.clip.id + ".mclt", "truth/" + g.clip.id + ".txt"};
    mclt::save(dir / e.clip_file, g.clip.data);
    write_truth(dir / e.truth_file, g.truth);
    entries.push_back(e);
  }
  std::ofstream os(dir / "manifest.txt");
  if (!os) throw IoError("cannot write " + (dir / "manifest.txt").string());
  for (const auto& e : entries) os << e.id << ' ' << e.class_id << ' ' << e.clip_file << ' ' << e.truth_file << '\n';
  return entries;
}

std::vector<DatasetEntry> read_dataset_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw IoError("cannot open " + (dir / "manifest.txt").string());
  std::vector<DatasetEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    DatasetEntry e;
    if (!(ls >> e.id >> e.class_id >> e.clip_file >> e.truth_file)) throw FormatError("malformed manifest line: " + line);
    out.push_back(e);
  }
  return out;
}

Tensor stack_clips(const std::vector<const VideoClip*>& clips) {
  if (clips.empty()) throw ShapeError("stack_clips: no clips");
  const Shape& d = clips.front()->data.dims();
  std::vector<float> v;
  v.reserve(clips.size() * clips.front()->data.numel());
  for (const auto* c : clips) {
    if (c->data.dims() != d) throw ShapeError("stack_clips: mixed dims " + dims_to_string(c->data.dims()));
    v.insert(v.end(), c->data.vec().begin(), c->data.vec().end());
  }
  Shape out{static_cast<std::int64_t>(clips.size())};
  out.insert(out.end(), d.begin(), d.end());
  return Tensor(out, std::move(v));
}

}  // namespace mclone
