#include "mclone/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mclone/mclt.hpp"
#include "mclone/ops.hpp"

namespace mclone {
namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int groups_for(int channels, int wanted) {
  int g = std::min(wanted, channels);
  while (g > 1 && channels % g != 0) --g;
  return std::max(g, 1);
}

std::int64_t i64(int v) { return static_cast<std::int64_t>(v); }

Tensor sinusoid(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  std::vector<float> v(t.size() * static_cast<std::size_t>(dim), 0.0f);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      v[b * dim + k] = static_cast<float>(std::sin(t[b] * freq));
      v[b * dim + half + k] = static_cast<float>(std::cos(t[b] * freq));
    }
  }
  return Tensor({i64(static_cast<int>(t.size())), i64(dim)}, std::move(v));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_channel_bias(matmul(x, w), b, -1);
}

}  // namespace

// ---------------------------------------------------------------- config

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("denoiser config: " + m); };
  if (frames < 2) fail("frames must be >= 2, got " + std::to_string(frames));
  if (channels < 1) fail("channels must be >= 1");
  if (!(data_std >= 0.0) || !std::isfinite(data_std)) fail("data_std must be finite and >= 0");
  if (levels < 1) fail("levels must be >= 1");
  if (base_width < 1 || time_embed_dim < 2 || time_embed_dim % 2 != 0) fail("widths must be positive, embed dim even");
  if (vocab < 2) fail("vocab must include the null condition and at least one class");
  if (norm_groups < 1) fail("norm_groups must be >= 1");
  for (int l = 0; l <= levels; ++l) {
    const int h = height >> l, w = width >> l;
    if (!is_pow2(height) || !is_pow2(width) || h < 2 || w < 2) {
      fail("spatial size at level " + std::to_string(l) + " is " + std::to_string(h) + "x" + std::to_string(w) +
           "; every level needs a power of two >= 2");
    }
  }
}

int DenoiserConfig::width_at(int level) const { return level == 0 ? base_width : 2 * base_width; }

std::vector<std::string> DenoiserConfig::attention_blocks() const {
  std::vector<std::string> names;
  for (int j = 0; j < levels; ++j) names.push_back("up_block." + std::to_string(j));
  return names;
}

int DenoiserConfig::block_level(const std::string& block) const {
  const auto names = attention_blocks();
  for (int j = 0; j < levels; ++j) {
    if (names[static_cast<std::size_t>(j)] == block) return levels - j;
  }
  std::string valid;
  for (const auto& n : names) valid += (valid.empty() ? "" : ",") + n;
  throw ConfigError("unknown attention block '" + block + "'; valid blocks: " + valid);
}

std::map<std::string, std::string> DenoiserConfig::to_fields() const {
  return {{"frames", std::to_string(frames)},
          {"channels", std::to_string(channels)},
          {"height", std::to_string(height)},
          {"width", std::to_string(width)},
          {"base_width", std::to_string(base_width)},
          {"levels", std::to_string(levels)},
          {"time_embed_dim", std::to_string(time_embed_dim)},
          {"vocab", std::to_string(vocab)},
          {"norm_groups", std::to_string(norm_groups)},
          {"frame_pe", frame_pe ? "1" : "0"},
          {"data_std", [this] {
             std::ostringstream os;
             os << std::setprecision(9) << data_std;
             return os.str();
           }()}};
}

DenoiserConfig DenoiserConfig::from_fields(const std::map<std::string, std::string>& fields) {
  DenoiserConfig c;
  auto get = [&](const char* key, int& dst) {
    auto it = fields.find(key);
    if (it == fields.end()) throw FormatError(std::string("manifest missing key '") + key + "'");
    try {
      std::size_t used = 0;
      dst = std::stoi(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(std::string("manifest key '") + key + "' is not an integer: " + it->second);
    }
  };
  int pe = 0;
  get("frames", c.frames);
  get("channels", c.channels);
  get("height", c.height);
  get("width", c.width);
  get("base_width", c.base_width);
  get("levels", c.levels);
  get("time_embed_dim", c.time_embed_dim);
  get("vocab", c.vocab);
  get("norm_groups", c.norm_groups);
  get("frame_pe", pe);
  c.frame_pe = pe != 0;
  {
    auto it = fields.find("data_std");
    if (it == fields.end()) throw FormatError("manifest missing key 'data_std'");
    try {
      std::size_t used = 0;
      c.data_std = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("manifest key 'data_std' is not a number: " + it->second);
    }
  }
  c.validate();
  return c;
}

// ------------------------------------------------------------ attention

Tensor frame_encoding(int frames, int channels) {
  std::vector<float> v(static_cast<std::size_t>(frames) * channels);
  for (int f = 0; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      const double freq = std::exp(-std::log(10000.0) * (c / 2 * 2) / channels);
      v[static_cast<std::size_t>(f) * channels + c] =
          static_cast<float>(c % 2 == 0 ? std::sin(f * freq) : std::cos(f * freq));
    }
  }
  return Tensor({i64(frames), i64(channels)}, std::move(v));
}

TemporalAttentionResult temporal_attention(const Tensor& x, const TemporalAttentionWeights& w) {
  if (x.rank() != 5) throw ShapeError("temporal_attention: expected [b,f,c,h,w], got " + dims_to_string(x.dims()));
  const auto b = x.dims()[0], f = x.dims()[1], c = x.dims()[2], h = x.dims()[3], wd = x.dims()[4];
  if (f < 2) throw ShapeError("temporal_attention: needs at least 2 frames, got " + dims_to_string(x.dims()));
  const auto d = w.wq.dims().back();

  Tensor n = group_norm(reshape(x, {b * f, c, h, wd}), w.groups, w.norm_gamma, w.norm_beta);
  if (w.frame_pe) {
    const Tensor pe = frame_encoding(static_cast<int>(f), static_cast<int>(c));
    std::vector<float> tiled;
    tiled.reserve(static_cast<std::size_t>(b * f * c));
    for (std::int64_t i = 0; i < b; ++i) tiled.insert(tiled.end(), pe.vec().begin(), pe.vec().end());
    n = add_channel_bias(n, Tensor({b * f, c}, std::move(tiled)), 1);
  }
  // [b*f, c, h, w] -> [b, h*w, f, c] -> [b*h*w, f, c]
  Tensor seq = reshape(permute(reshape(n, {b, f, c, h * wd}), {0, 3, 1, 2}), {b * h * wd, f, c});
  Tensor q = matmul(seq, w.wq), k = matmul(seq, w.wk), v = matmul(seq, w.wv);
  Tensor logits = scale(matmul(q, transpose_last2(k)), static_cast<float>(1.0 / std::sqrt(static_cast<double>(d))));
  Tensor attn = softmax_last(logits);
  Tensor o = linear(matmul(attn, v), w.wo, w.bo);
  Tensor back = reshape(permute(reshape(o, {b, h * wd, f, c}), {0, 2, 3, 1}), x.dims());
  return {add(x, back), attn};
}

// ------------------------------------------------------------ params

const Tensor& ParamSet::at(const std::string& name) const { return values[index_of(name)]; }

std::size_t ParamSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return it->second;
}

void ParamSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_[name] = names.size();
  names.push_back(std::move(name));
  values.push_back(std::move(value));
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& v : values) n += v.numel();
  return n;
}

// ------------------------------------------------------------ model

namespace {

struct Builder {
  ParamSet& ps;
  std::mt19937_64& rng;
  int embed;
  int groups;

  void conv(const std::string& name, int cin, int cout, int k, float gain = 1.0f) {
    ps.add(name + ".w", Tensor::randn({i64(cout), i64(cin), i64(k), i64(k)}, rng,
                                      gain / std::sqrt(static_cast<float>(cin * k * k))));
    ps.add(name + ".b", Tensor::zeros({i64(cout)}));
  }
  void dense(const std::string& name, int in, int out, float gain = 1.0f) {
    ps.add(name + ".w", Tensor::randn({i64(in), i64(out)}, rng, gain / std::sqrt(static_cast<float>(in))));
    ps.add(name + ".b", Tensor::zeros({i64(out)}));
  }
  void norm(const std::string& name, int c) {
    ps.add(name + ".g", Tensor::ones({i64(c)}));
    ps.add(name + ".b", Tensor::zeros({i64(c)}));
  }
  void resblock(const std::string& name, int cin, int cout) {
    norm(name + ".n1", cin);
    conv(name + ".c1", cin, cout, 3);
    dense(name + ".emb", embed, cout);
    norm(name + ".n2", cout);
    conv(name + ".c2", cout, cout, 3, 0.1f);
    if (cin != cout) conv(name + ".skip", cin, cout, 1);
  }
  void attention(const std::string& name, int c) {
    norm(name + ".n", c);
    const float s = 1.0f / std::sqrt(static_cast<float>(c));
    ps.add(name + ".q", Tensor::randn({i64(c), i64(c)}, rng, s));
    ps.add(name + ".k", Tensor::randn({i64(c), i64(c)}, rng, s));
    ps.add(name + ".v", Tensor::randn({i64(c), i64(c)}, rng, s));
    ps.add(name + ".o.w", Tensor::randn({i64(c), i64(c)}, rng, 0.1f * s));
    ps.add(name + ".o.b", Tensor::zeros({i64(c)}));
  }
};

class Pass {
 public:
  Pass(const DenoiserConfig& cfg, const ParamSet& ps, const std::vector<Tensor>& w, std::size_t batch)
      : cfg_(cfg), ps_(ps), w_(w), batch_(static_cast<std::int64_t>(batch)) {}

  const Tensor& P(const std::string& name) const { return w_[ps_.index_of(name)]; }

  Tensor norm(const std::string& name, const Tensor& x) const {
    return group_norm(x, groups_for(static_cast<int>(x.dims()[1]), cfg_.norm_groups), P(name + ".g"), P(name + ".b"));
  }
  Tensor conv(const std::string& name, const Tensor& x) const { return conv2d(x, P(name + ".w"), P(name + ".b")); }

  // x [B*F, C, H, W]; emb [B, E] already passed through SiLU.
  Tensor resblock(const std::string& name, const Tensor& x, const Tensor& emb) const {
    Tensor h = conv(name + ".c1", silu(norm(name + ".n1", x)));
    h = add_channel_bias(h, linear(emb, P(name + ".emb.w"), P(name + ".emb.b")), 1);
    h = conv(name + ".c2", silu(norm(name + ".n2", h)));
    Tensor skip = x.dims()[1] == h.dims()[1] ? x : conv(name + ".skip", x);
    return add(skip, h);
  }

  TemporalAttentionResult attention(const std::string& name, const Tensor& x) const {
    const auto& d = x.dims();
    TemporalAttentionWeights tw{P(name + ".n.g"), P(name + ".n.b"), P(name + ".q"), P(name + ".k"), P(name + ".v"),
                                P(name + ".o.w"), P(name + ".o.b"), groups_for(static_cast<int>(d[1]), cfg_.norm_groups),
                                cfg_.frame_pe};
    auto r = temporal_attention(reshape(x, {batch_, d[0] / batch_, d[1], d[2], d[3]}), tw);
    r.out = reshape(r.out, d);
    return r;
  }

 private:
  const DenoiserConfig& cfg_;
  const ParamSet& ps_;
  const std::vector<Tensor>& w_;
  std::int64_t batch_;
};

}  // namespace

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const int E = config_.time_embed_dim, L = config_.levels;
  Builder b{params_, rng, E, config_.norm_groups};
  b.dense("time.l1", E, E);
  b.dense("time.l2", E, E);
  params_.add("class_embed", Tensor::randn({i64(config_.vocab), i64(E)}, rng, 1.0f));
  b.conv("conv_in", config_.channels, config_.width_at(0), 3);
  for (int l = 0; l < L; ++l) {
    b.resblock("down." + std::to_string(l), config_.width_at(l == 0 ? 0 : l - 1), config_.width_at(l));
  }
  b.resblock("mid", config_.width_at(L - 1), config_.width_at(L));
  for (int j = 0; j < L; ++j) {
    const int lv = L - j;
    const int cin = j == 0 ? config_.width_at(L) : config_.width_at(lv + 1) + config_.width_at(lv);
    const std::string name = "up_block." + std::to_string(j);
    b.resblock(name + ".res", cin, config_.width_at(lv));
    b.attention(name + ".attn", config_.width_at(lv));
  }
  b.resblock("out.res", config_.width_at(1) + config_.width_at(0), config_.width_at(0));
  b.norm("out.n", config_.width_at(0));
  b.conv("conv_out", config_.width_at(0), config_.channels, 3, 0.1f);
}

void Denoiser::check_input(const Tensor& z) const {
  const Shape want{-1, config_.frames, config_.channels, config_.height, config_.width};
  bool ok = z.rank() == 5;
  for (std::size_t i = 1; ok && i < 5; ++i) ok = z.dims()[i] == want[i];
  if (!ok) {
    throw ShapeError("input dims " + dims_to_string(z.dims()) + " do not match model [b," +
                     std::to_string(config_.frames) + "," + std::to_string(config_.channels) + "," +
                     std::to_string(config_.height) + "," + std::to_string(config_.width) + "]");
  }
}

ForwardResult Denoiser::forward(const std::vector<Tensor>& weights, const Tensor& z, const std::vector<int>& cond,
                                const std::vector<int>& t, const ForwardOptions& options) const {
  check_input(z);
  const std::size_t B = static_cast<std::size_t>(z.dims()[0]);
  if (cond.size() != B || t.size() != B) throw ShapeError("forward: need one condition and timestep per batch item");
  if (weights.size() != params_.values.size()) throw ConfigError("forward: weight list does not match parameters");
  for (int c : cond) {
    if (c < 0 || c >= config_.vocab) {
      throw ConfigError("condition id " + std::to_string(c) + " outside vocabulary of " + std::to_string(config_.vocab));
    }
  }
  for (const auto& name : options.record) config_.block_level(name);
  if (!options.stop_after.empty()) config_.block_level(options.stop_after);

  const int L = config_.levels;
  const auto F = i64(config_.frames);
  Pass p(config_, params_, weights, B);

  Tensor temb = sinusoid(t, config_.time_embed_dim);
  temb = linear(silu(linear(temb, p.P("time.l1.w"), p.P("time.l1.b"))), p.P("time.l2.w"), p.P("time.l2.b"));
  const Tensor emb = silu(add(temb, gather_rows(p.P("class_embed"), cond)));

  ForwardResult result;
  Tensor h = conv2d(reshape(z, {i64(static_cast<int>(B)) * F, config_.channels, config_.height, config_.width}),
                    p.P("conv_in.w"), p.P("conv_in.b"));
  std::vector<Tensor> skips;
  for (int l = 0; l < L; ++l) {
    h = p.resblock("down." + std::to_string(l), h, emb);
    skips.push_back(h);
    h = avg_pool2(h);
  }
  h = p.resblock("mid", h, emb);
  for (int j = 0; j < L; ++j) {
    const std::string name = "up_block." + std::to_string(j);
    if (j > 0) h = concat(h, skips[static_cast<std::size_t>(L - j)], 1);
    h = p.resblock(name + ".res", h, emb);
    auto att = p.attention(name + ".attn", h);
    h = att.out;
    if (options.record.count(name)) result.records.push_back({name, t.front(), att.attention});
    if (options.stop_after == name) return result;
    h = upsample_nearest2(h);
  }
  h = concat(h, skips[0], 1);
  h = p.resblock("out.res", h, emb);
  h = conv2d(silu(p.norm("out.n", h)), p.P("conv_out.w"), p.P("conv_out.b"));
  h = reshape(h, z.dims());
  if (config_.data_std > 0.0) {
    static const NoiseSchedule sched = NoiseSchedule::linear();
    const double d2 = config_.data_std * config_.data_std;
    const std::size_t per = z.numel() / B;
    std::vector<float> cs(z.numel()), co(z.numel());
    for (std::size_t b = 0; b < B; ++b) {
      const double ab = sched.alpha_bar(t[b]), denom = ab * d2 + (1.0 - ab);
      std::fill_n(cs.begin() + static_cast<std::ptrdiff_t>(b * per), per, static_cast<float>(std::sqrt(1.0 - ab) / denom));
      std::fill_n(co.begin() + static_cast<std::ptrdiff_t>(b * per), per, static_cast<float>(std::sqrt(ab * d2 / denom)));
    }
    h = add(mul(z, Tensor(z.dims(), std::move(cs))), mul(h, Tensor(z.dims(), std::move(co))));
  }
  result.eps = h;
  return result;
}

ForwardResult Denoiser::predict_noise(const Tensor& z, int cond, int t, const std::set<std::string>& record) const {
  check_input(z);
  const auto B = static_cast<std::size_t>(z.dims()[0]);
  ForwardOptions opt;
  opt.record = record;
  return forward(params_.values, z, std::vector<int>(B, cond), std::vector<int>(B, t), opt);
}

// ------------------------------------------------------------ training

Trainer::Trainer(Denoiser& model, const NoiseSchedule& schedule, TrainConfig config, std::uint64_t seed)
    : model_(model), schedule_(schedule), config_(config), rng_(seed) {
  if (config_.p_uncond < 0.0 || config_.p_uncond > 1.0) throw ConfigError("p_uncond must lie in [0, 1]");
  if (config_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  for (const auto& v : model_.params().values) {
    m_.emplace_back(v.numel(), 0.0f);
    v_.emplace_back(v.numel(), 0.0f);
  }
}

TrainStepInfo Trainer::step(const Tensor& clips, const std::vector<int>& classes) {
  model_.check_input(clips);
  const std::size_t B = static_cast<std::size_t>(clips.dims()[0]);
  if (classes.size() != B) throw ShapeError("train step: one class id per clip required");

  TrainStepInfo info;
  std::uniform_int_distribution<int> tdist(1, schedule_.total_steps());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t per = clips.numel() / B;
  std::vector<float> zt(clips.numel()), eps(clips.numel());
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t b = 0; b < B; ++b) {
    const int t = tdist(rng_);
    const bool drop = u01(rng_) < config_.p_uncond;
    info.timesteps.push_back(t);
    info.conditions.push_back(drop ? kNullCondition : classes[b]);
    const double ab = schedule_.alpha_bar(t);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      eps[i] = normal(rng_);
      zt[i] = static_cast<float>(a * clips[i] + s * eps[i]);
    }
  }

  auto& params = model_.params().values;
  Tape tape;
  std::vector<Tensor> watched;
  watched.reserve(params.size());
  for (const auto& p : params) watched.push_back(tape.watch(p));
  const Tensor eps_t(clips.dims(), std::move(eps));
  auto out = model_.forward(watched, Tensor(clips.dims(), std::move(zt)), info.conditions, info.timesteps);
  Tensor loss = mse(out.eps, eps_t);
  info.loss = loss.scalar_value();
  if (!std::isfinite(info.loss)) {
    std::ostringstream os;
    os << "non-finite training loss at step " << step_ << " (timesteps";
    for (int t : info.timesteps) os << ' ' << t;
    os << ")";
    throw NumericError(os.str());
  }
  tape.backward(loss);

  std::vector<Tensor> grads;
  double sq = 0.0;
  for (const auto& w : watched) {
    grads.push_back(tape.grad(w));
    for (float g : grads.back().data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at step " + std::to_string(step_));
  const double clip = (config_.grad_clip > 0.0 && norm > config_.grad_clip) ? config_.grad_clip / norm : 1.0;

  ++step_;
  const double warm = config_.warmup_steps > 0 ? std::min(1.0, static_cast<double>(step_) / config_.warmup_steps) : 1.0;
  const double lr = config_.learning_rate * warm;
  const double bc1 = 1.0 - std::pow(config_.beta1, step_), bc2 = 1.0 - std::pow(config_.beta2, step_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::vector<float> w = params[k].vec();
    auto& m = m_[k];
    auto& v = v_[k];
    const auto g = grads[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = static_cast<float>(config_.beta1 * m[i] + (1.0 - config_.beta1) * gi);
      v[i] = static_cast<float>(config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi);
      w[i] -= static_cast<float>(lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.adam_eps));
    }
    params[k] = Tensor(params[k].dims(), std::move(w));
  }
  return info;
}

std::vector<double> train_loop(Trainer& trainer, const std::vector<Tensor>& clips, const std::vector<int>& classes,
                               int batch_size, long long steps, std::uint64_t pick_seed,
                               const std::function<void(long long, double)>& on_step) {
  if (clips.empty()) throw ConfigError("training corpus is empty");
  if (classes.size() != clips.size()) throw ShapeError("train_loop: one class id per clip required");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::mt19937_64 rng(pick_seed);
  std::uniform_int_distribution<std::size_t> pick(0, clips.size() - 1);
  const std::size_t per = clips.front().numel();
  Shape dims{batch_size};
  for (auto d : clips.front().dims()) dims.push_back(d);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max(0LL, steps)));
  std::vector<float> batch(per * static_cast<std::size_t>(batch_size));
  std::vector<int> cls(static_cast<std::size_t>(batch_size));
  for (long long s = 1; s <= steps; ++s) {
    for (int b = 0; b < batch_size; ++b) {
      const std::size_t i = pick(rng);
      if (clips[i].numel() != per) throw ShapeError("train_loop: clips differ in size");
      std::copy(clips[i].data().begin(), clips[i].data().end(), batch.begin() + static_cast<std::ptrdiff_t>(b * per));
      cls[static_cast<std::size_t>(b)] = classes[i];
    }
    losses.push_back(trainer.step(Tensor(dims, batch), cls).loss);
    if (on_step) on_step(s, losses.back());
  }
  return losses;
}

// ------------------------------------------------------------ checkpoints

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ":" + std::to_string(lineno) + ": expected key=value");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void write_manifest(const std::string& path, const std::map<std::string, std::string>& fields) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  for (const auto& [k, v] : fields) out << k << '=' << v << '\n';
  if (!out) throw IoError("failed writing manifest " + path);
}

void save_checkpoint(const Denoiser& model, const std::string& dir, const std::map<std::string, std::string>& extra) {
  std::filesystem::create_directories(dir);
  auto fields = model.config().to_fields();
  for (const auto& [k, v] : extra) fields[k] = v;
  fields["format"] = "mclone-checkpoint";
  fields["param_count"] = std::to_string(model.params().values.size());
  // Guidance gradients pass through every op the tape records, including the
  // group-norm statistics inside the attention block.
  fields["guidance_grad_through_norm_stats"] = "1";
  mclt::save_all(std::filesystem::path(dir) / "weights.mclt", model.params().values);
  write_manifest((std::filesystem::path(dir) / "manifest.txt").string(), fields);
}

Denoiser load_checkpoint(const std::string& dir, const DenoiserConfig* expected,
                         std::map<std::string, std::string>* manifest_out) {
  const auto manifest = read_manifest((std::filesystem::path(dir) / "manifest.txt").string());
  const DenoiserConfig stored = DenoiserConfig::from_fields(manifest);
  if (expected) {
    const auto want = expected->to_fields(), have = stored.to_fields();
    std::string diff;
    for (const auto& [k, v] : want) {
      if (have.at(k) != v) diff += (diff.empty() ? "" : ", ") + k + " expected " + v + " found " + have.at(k);
    }
    if (!diff.empty()) throw ConfigError("checkpoint config mismatch: " + diff);
  }
  auto tensors = mclt::load_all(std::filesystem::path(dir) / "weights.mclt");
  Denoiser model(stored, 0);
  auto& values = model.params().values;
  if (tensors.size() != values.size()) {
    throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model needs " +
                      std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (tensors[i].dims() != values[i].dims()) {
      throw FormatError("checkpoint tensor '" + model.params().names[i] + "' has dims " +
                        dims_to_string(tensors[i].dims()) + ", expected " + dims_to_string(values[i].dims()));
    }
  }
  values = std::move(tensors);
  if (manifest_out) *manifest_out = manifest;
  return model;
}

}  // namespace mclone
