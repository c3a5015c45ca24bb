#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mclone/schedule.hpp"
#include "mclone/tensor.hpp"

namespace mclone {

/// Class ids. 0 is the null condition used for unconditional prediction.
inline constexpr int kNullCondition = 0;

struct DenoiserConfig {
  int frames = 8;
  int channels = 1;
  int height = 32;
  int width = 32;
  int base_width = 16;
  int levels = 2;  // down/up block count; one temporal-attention block per up level
  int time_embed_dim = 64;
  int vocab = 5;  // includes the null condition
  int norm_groups = 4;
  bool frame_pe = true;  // sinusoidal frame-index encoding added before temporal attention
  // Output preconditioning: eps = c_skip(t) z + c_out(t) net(z), where c_skip is the
  // best linear noise estimate for data of this std under the linear schedule and
  // c_out the std of what it misses. 0 leaves the network output as eps.
  double data_std = 0.25;

  void validate() const;
  /// Channel width at a resolution level (0 = full resolution).
  int width_at(int level) const;
  int height_at(int level) const { return height >> level; }
  int width_px_at(int level) const { return width >> level; }
  /// Names of the temporal-attention blocks, coarsest first: up_block.0, up_block.1, ...
  std::vector<std::string> attention_blocks() const;
  /// Resolution level of a named block; throws ConfigError listing valid names.
  int block_level(const std::string& block) const;

  std::map<std::string, std::string> to_fields() const;
  static DenoiserConfig from_fields(const std::map<std::string, std::string>& fields);
};

struct AttentionRecord {
  std::string block;
  int t = 0;
  Tensor map;  // (b*h*w, f, f); rows sum to 1
};

struct TemporalAttentionWeights {
  Tensor norm_gamma, norm_beta;  // [C]
  Tensor wq, wk, wv;             // [C, C]
  Tensor wo;                     // [C, C]
  Tensor bo;                     // [C]
  int groups = 1;
  bool frame_pe = true;
};

struct TemporalAttentionResult {
  Tensor out;        // same dims as the input
  Tensor attention;  // (b*h*w, f, f)
};

/// Self-attention along the frame axis of x [b, f, c, h, w] with spatial
/// positions merged into the batch, added back onto x as a residual.
TemporalAttentionResult temporal_attention(const Tensor& x, const TemporalAttentionWeights& w);

/// Sinusoidal frame-index table [f, c].
Tensor frame_encoding(int frames, int channels);

/// Named, ordered parameter list. Order is fixed by the config, so two models
/// built from the same config line up index by index.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  const Tensor& at(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  void add(std::string name, Tensor value);
  std::size_t total_size() const;

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

struct ForwardOptions {
  std::set<std::string> record;
  /// Stop right after this attention block; the result then has no eps.
  std::string stop_after;
};

struct ForwardResult {
  Tensor eps;
  std::vector<AttentionRecord> records;
};

/// Small video UNet: conv + ResBlock levels with average-pool downsampling,
/// a ResBlock plus temporal attention per up level, nearest upsampling and skip
/// concatenation. Time and class embeddings are summed and injected as a
/// per-channel bias in every ResBlock.
class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t seed);

  const DenoiserConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

  /// z [b, f, c, h, w]; one condition and timestep per batch item. `weights`
  /// must line up with params() (it may hold watched copies for training).
  ForwardResult forward(const std::vector<Tensor>& weights, const Tensor& z, const std::vector<int>& cond,
                        const std::vector<int>& t, const ForwardOptions& options = {}) const;

  /// Noise prediction with the model's own weights and a shared condition/step.
  ForwardResult predict_noise(const Tensor& z, int cond, int t, const std::set<std::string>& record = {}) const;

  void check_input(const Tensor& z) const;

 private:
  DenoiserConfig config_;
  ParamSet params_;
};

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 2e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  double p_uncond = 0.1;
  int warmup_steps = 50;
};

struct TrainStepInfo {
  double loss = 0.0;
  std::vector<int> conditions;  // after null dropping
  std::vector<int> timesteps;
};

/// Adam on the noise-prediction loss. All randomness (t, eps, condition
/// dropping) comes from the trainer's own generator.
class Trainer {
 public:
  Trainer(Denoiser& model, const NoiseSchedule& schedule, TrainConfig config, std::uint64_t seed);

  /// One step on clips [b, f, c, h, w] with class ids. Throws NumericError
  /// (with step number and timesteps) on a non-finite loss.
  TrainStepInfo step(const Tensor& clips, const std::vector<int>& classes);

  int steps_taken() const { return step_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  Denoiser& model_;
  const NoiseSchedule& schedule_;
  TrainConfig config_;
  std::mt19937_64 rng_;
  std::vector<std::vector<float>> m_, v_;
  int step_ = 0;
};

/// Runs `steps` trainer steps on batches drawn uniformly (with replacement) from
/// `clips` [f, c, h, w] using a generator seeded with `pick_seed`. Returns the
/// per-step losses; `on_step(step, loss)` is called after each step when set.
std::vector<double> train_loop(Trainer& trainer, const std::vector<Tensor>& clips, const std::vector<int>& classes,
                               int batch_size, long long steps, std::uint64_t pick_seed,
                               const std::function<void(long long, double)>& on_step = {});

/// Checkpoint directory layout: manifest.txt (key=value) + weights.mclt
/// (parameters concatenated in ParamSet order).
void save_checkpoint(const Denoiser& model, const std::string& dir, const std::map<std::string, std::string>& extra = {});
/// Loads into a model built from `expected`; config mismatches, missing or
/// corrupt files throw before any weight is replaced.
Denoiser load_checkpoint(const std::string& dir, const DenoiserConfig* expected = nullptr,
                         std::map<std::string, std::string>* manifest_out = nullptr);

std::map<std::string, std::string> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::map<std::string, std::string>& fields);

}  // namespace mclone
