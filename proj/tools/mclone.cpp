// Command-line driver: data generation, training, extraction, guided
// sampling, evaluation, ablations and the side-by-side demo.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "mclone/ablation.hpp"
#include "mclone/denoiser.hpp"
#include "mclone/diffusion.hpp"
#include "mclone/eval.hpp"
#include "mclone/guidance.hpp"
#include "mclone/mclt.hpp"
#include "mclone/runtime.hpp"
#include "mclone/synthgen.hpp"

namespace fs = std::filesystem;
using namespace mclone;

namespace {

// Every accepted key with its default. Anything else in a config file is an error.
const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "0"},
      {"out", "runs"},
      // data
      {"data_dir", ""},
      {"clips_per_class", "64"},
      {"data_seed", "11"},
      // model
      {"frames", "8"},
      {"channels", "1"},
      {"height", "32"},
      {"width", "32"},
      {"base_width", "16"},
      {"levels", "2"},
      {"time_embed_dim", "64"},
      {"norm_groups", "4"},
      {"frame_pe", "1"},
      {"data_std", "0.25"},
      // training
      {"train_steps", "2000"},
      {"batch_size", "8"},
      {"learning_rate", "0.002"},
      {"grad_clip", "1.0"},
      {"p_uncond", "0.1"},
      {"warmup_steps", "50"},
      {"log_every", "100"},
      // extraction
      {"checkpoint", ""},
      {"reference", "pan:1000"},
      {"truth", ""},
      {"t_alpha", "400"},
      {"k", "1"},
      {"block", "up_block.1"},
      {"extract_condition", "0"},
      {"noise_seed", "0"},
      {"representation", ""},
      // sampling
      {"schedule", "camera"},
      {"cfg_scale", "7.5"},
      {"lambda", "200"},
      {"mode", "off"},
      {"condition", "reference"},
      // evaluation
      {"clip", ""},
      // ablation
      {"axis", "k"},
      {"grid", "1,4,8"},
      {"references", "pan:1000,pan:1001,translate:1000,translate:1001"},
      {"seeds", "4"},
  };
  return d;
}

class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  void set(const std::string& key, const std::string& value, const std::string& origin) {
    if (!values_.count(key)) throw ConfigError(origin + ": unknown key '" + key + "'");
    values_[key] = value;
  }

  void load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      ++n;
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key=value");
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        return s;
      };
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), path.string() + ":" + std::to_string(n));
    }
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  long long integer(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t used = 0;
      const long long out = std::stoll(v, &used);
      if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError("key " + key + ": '" + v + "' is not an integer");
  }

  double real(const std::string& key) const {
    const auto& v = str(key);
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError("key " + key + ": '" + v + "' is not a number");
  }

  void write(const fs::path& path) const { write_manifest(path.string(), values_); }

 private:
  std::map<std::string, std::string> values_;
};

// Type-check every key before anything touches the disk.
void validate_types(const RunConfig& rc) {
  for (const char* key : {"seed", "clips_per_class", "data_seed", "frames", "channels", "height", "width", "base_width",
                          "levels", "time_embed_dim", "norm_groups", "frame_pe", "train_steps", "batch_size",
                          "warmup_steps", "log_every", "t_alpha", "k", "extract_condition", "noise_seed", "seeds"})
    rc.integer(key);
  for (const char* key : {"learning_rate", "grad_clip", "p_uncond", "cfg_scale", "lambda", "data_std"}) rc.real(key);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

DenoiserConfig model_config(const RunConfig& rc) {
  DenoiserConfig c;
  c.frames = static_cast<int>(rc.integer("frames"));
  c.channels = static_cast<int>(rc.integer("channels"));
  c.height = static_cast<int>(rc.integer("height"));
  c.width = static_cast<int>(rc.integer("width"));
  c.base_width = static_cast<int>(rc.integer("base_width"));
  c.levels = static_cast<int>(rc.integer("levels"));
  c.time_embed_dim = static_cast<int>(rc.integer("time_embed_dim"));
  c.norm_groups = static_cast<int>(rc.integer("norm_groups"));
  c.frame_pe = rc.integer("frame_pe") != 0;
  c.data_std = rc.real("data_std");
  c.validate();
  return c;
}

ClipGeometry geometry(const DenoiserConfig& c) { return {c.frames, c.channels, c.height, c.width}; }

std::pair<int, int> schedule_steps(const std::string& s) {
  if (s == "camera") return {100, 50};
  if (s == "object") return {300, 180};
  const auto parts = split(s, ',');
  if (parts.size() == 2) {
    try {
      return {std::stoi(parts[0]), std::stoi(parts[1])};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("schedule '" + s + "': expected camera, object or N,M");
}

SamplerConfig sampler_config(const RunConfig& rc) {
  SamplerConfig sc;
  std::tie(sc.steps, sc.guided_steps) = schedule_steps(rc.str("schedule"));
  sc.cfg_scale = rc.real("cfg_scale");
  sc.lambda = rc.real("lambda");
  sc.mode = guidance_mode_from_name(rc.str("mode"));
  sc.seed = static_cast<std::uint64_t>(rc.integer("seed"));
  sc.validate();
  return sc;
}

ExtractOptions extract_options(const RunConfig& rc) {
  ExtractOptions eo;
  eo.t_alpha = static_cast<int>(rc.integer("t_alpha"));
  eo.k = static_cast<int>(rc.integer("k"));
  eo.block = rc.str("block");
  eo.condition = static_cast<int>(rc.integer("extract_condition"));
  eo.noise_seed = static_cast<std::uint64_t>(rc.integer("noise_seed"));
  return eo;
}

// "kind:seed" renders a synthetic clip; anything else is a clip file whose
// truth comes from the `truth` key.
Reference load_reference(const std::string& spec, const std::string& truth_path, const ClipGeometry& geo) {
  const auto colon = spec.find(':');
  if (colon != std::string::npos && !fs::exists(spec)) {
    const MotionKind kind = kind_from_name(spec.substr(0, colon));
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("reference '" + spec + "': expected kind:seed");
    }
    auto g = gen_clip(kind, random_params(kind, seed, geo), seed, geo);
    return {g.clip, g.truth, class_id(kind)};
  }
  if (!fs::exists(spec)) throw IoError("reference clip not found: " + spec);
  Reference r;
  r.clip.data = mclt::load(spec);
  r.clip.id = fs::path(spec).stem().string();
  if (!truth_path.empty()) {
    r.truth = read_truth(truth_path);
    r.clip.kind = r.truth.kind;
    r.condition = class_id(r.truth.kind);
  }
  return r;
}

int sampling_condition(const RunConfig& rc, const Reference* ref) {
  const auto& c = rc.str("condition");
  if (c == "reference") return ref ? ref->condition : kNullCondition;
  if (c == "null") return kNullCondition;
  try {
    return class_id(kind_from_name(c));
  } catch (const ConfigError&) {
  }
  try {
    return std::stoi(c);
  } catch (const std::exception&) {
    throw ConfigError("condition '" + c + "': expected reference, null, a kind name or a class id");
  }
}

Denoiser load_model(const RunConfig& rc) {
  const auto& path = rc.str("checkpoint");
  if (path.empty()) throw ConfigError("this command needs checkpoint=<dir>");
  if (!fs::exists(fs::path(path) / "manifest.txt")) throw IoError("no checkpoint at " + path);
  return load_checkpoint(path);
}

fs::path make_run_dir(const RunConfig& rc, const std::string& command) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S") << "_seed" << rc.str("seed");
  fs::path dir = fs::path(rc.str("out")) / name.str();
  for (int n = 1; fs::exists(dir); ++n) dir = fs::path(rc.str("out")) / (name.str() + "_" + std::to_string(n));
  fs::create_directories(dir);
  rc.write(dir / "config.txt");
  std::ofstream(dir / "command.txt") << command << '\n';
  return dir;
}

void write_strip(const fs::path& path, const Tensor& clip) {
  const int f = static_cast<int>(clip.dims()[0]), c = static_cast<int>(clip.dims()[1]);
  const int h = static_cast<int>(clip.dims()[2]), w = static_cast<int>(clip.dims()[3]);
  std::vector<float> strip(static_cast<std::size_t>(h) * w * f);
  for (int t = 0; t < f; ++t)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        strip[static_cast<std::size_t>(y) * w * f + t * w + x] =
            clip[((static_cast<std::size_t>(t) * c) * h + y) * w + x];
  write_pgm(path, strip.data(), h, w * f, -1.0f, 1.0f);
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const RunConfig& rc, const fs::path& run) {
  const auto geo = geometry(model_config(rc));
  const auto entries = gen_dataset(run / "data", static_cast<int>(rc.integer("clips_per_class")),
                                   static_cast<std::uint64_t>(rc.integer("data_seed")), geo);
  std::cout << "dataset\t" << (run / "data").string() << "\tclips\t" << entries.size() << '\n';
  return 0;
}

int cmd_train(const RunConfig& rc, const fs::path& run) {
  const auto mc = model_config(rc);
  std::vector<VideoClip> clips;
  if (!rc.str("data_dir").empty()) {
    const fs::path dir = rc.str("data_dir");
    for (const auto& e : read_dataset_manifest(dir)) {
      VideoClip v;
      v.data = mclt::load(dir / e.clip_file);
      v.id = e.id;
      v.kind = kind_from_class(e.class_id);
      clips.push_back(std::move(v));
    }
  } else {
    for (auto& g : gen_corpus(static_cast<int>(rc.integer("clips_per_class")),
                              static_cast<std::uint64_t>(rc.integer("data_seed")), geometry(mc)))
      clips.push_back(std::move(g.clip));
  }
  if (clips.empty()) throw ConfigError("training corpus is empty");

  const auto seed = static_cast<std::uint64_t>(rc.integer("seed"));
  Denoiser model(mc, seed);
  const auto sched = NoiseSchedule::linear();
  TrainConfig tc;
  tc.batch_size = static_cast<int>(rc.integer("batch_size"));
  tc.learning_rate = rc.real("learning_rate");
  tc.grad_clip = rc.real("grad_clip");
  tc.p_uncond = rc.real("p_uncond");
  tc.warmup_steps = static_cast<int>(rc.integer("warmup_steps"));
  Trainer trainer(model, sched, tc, seed + 1);
  std::vector<Tensor> data;
  std::vector<int> classes;
  for (const auto& c : clips) {
    data.push_back(c.data);
    classes.push_back(class_id(c.kind));
  }

  const long long steps = rc.integer("train_steps"), every = std::max(1LL, rc.integer("log_every"));
  std::ofstream log(run / "train_log.tsv");
  log << "step\tloss\n";
  double window = 0.0;
  train_loop(trainer, data, classes, tc.batch_size, steps, seed + 2, [&](long long s, double loss) {
    log << s << '\t' << loss << '\n';
    window += loss;
    if (s % every == 0) {
      std::cout << "step\t" << s << "\tloss\t" << window / static_cast<double>(every) << std::endl;
      window = 0.0;
    }
  });
  save_checkpoint(model, (run / "checkpoint").string(), {{"train_steps", std::to_string(steps)}});
  std::cout << "checkpoint\t" << (run / "checkpoint").string() << '\n';
  return 0;
}

int cmd_extract(const RunConfig& rc, const fs::path& run) {
  const Denoiser model = load_model(rc);
  const auto sched = NoiseSchedule::linear();
  const auto ref = load_reference(rc.str("reference"), rc.str("truth"), geometry(model.config()));
  const auto rep = extract_representation(model, sched, ref.clip.data, extract_options(rc), ref.clip.id);
  save_representation(rep, run / "representation");
  const Tensor map = motion_intensity_map(rep);
  float lo = map[0], hi = map[0];
  for (float v : map.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  write_pgm(run / "intensity.pgm", map.data().data(), rep.block_height, rep.block_width, lo, hi);
  write_frames(run / "reference", ref.clip.data);
  std::cout << "representation\t" << (run / "representation").string() << '\n';
  return 0;
}

int cmd_sample(const RunConfig& rc, const fs::path& run) {
  const Denoiser model = load_model(rc);
  const auto sched = NoiseSchedule::linear();
  const SamplerConfig sc = sampler_config(rc);
  MotionRepresentation rep;
  GuidanceTrajectory traj;
  Reference ref;
  bool have_ref = false;
  if (sc.mode == GuidanceMode::kPlain || sc.mode == GuidanceMode::kPrimary) {
    if (!rc.str("representation").empty()) {
      rep = load_representation(rc.str("representation"));
    } else {
      ref = load_reference(rc.str("reference"), rc.str("truth"), geometry(model.config()));
      have_ref = true;
      ExtractOptions eo = extract_options(rc);
      if (sc.mode == GuidanceMode::kPlain) eo.k = model.config().frames;
      rep = extract_representation(model, sched, ref.clip.data, eo, ref.clip.id);
    }
  } else if (sc.mode == GuidanceMode::kInversion1) {
    ref = load_reference(rc.str("reference"), rc.str("truth"), geometry(model.config()));
    have_ref = true;
    const auto eo = extract_options(rc);
    traj = extract_trajectory(model, sched, ref.clip.data, sc.steps, sc.guided_steps, eo.k, eo.block, eo.condition);
  } else if (rc.str("condition") == "reference") {
    ref = load_reference(rc.str("reference"), rc.str("truth"), geometry(model.config()));
    have_ref = true;
  }
  const int cond = sampling_condition(rc, have_ref ? &ref : nullptr);
  const auto res = sample(model, sched, sc, cond, &rep, &traj);
  mclt::save(run / "sample.mclt", res.clip);
  write_frames(run / "frames", res.clip);
  std::cout << "sample\t" << (run / "sample.mclt").string() << "\ttemporal_consistency\t"
            << temporal_consistency(res.clip) << '\n';
  return 0;
}

int cmd_eval(const RunConfig& rc, const fs::path& run) {
  if (rc.str("clip").empty()) throw ConfigError("eval needs clip=<file.mclt>");
  const Tensor clip = mclt::load(rc.str("clip"));
  ClipGeometry geo{static_cast<int>(clip.dims()[0]), static_cast<int>(clip.dims()[1]),
                   static_cast<int>(clip.dims()[2]), static_cast<int>(clip.dims()[3])};
  const auto ref = load_reference(rc.str("reference"), rc.str("truth"), geo);
  const auto score = motion_fidelity(ref.truth, clip);
  const double tc = temporal_consistency(clip);
  std::ofstream out(run / "eval.tsv");
  out << "fidelity\tmean_abs_error\ttemporal_consistency\n"
      << score.correlation << '\t' << score.mean_abs_error << '\t' << tc << '\n';
  std::cout << "fidelity\t" << score.correlation << "\tmean_abs_error\t" << score.mean_abs_error
            << "\ttemporal_consistency\t" << tc << '\n';
  return 0;
}

int worker_threads() {
  const char* env = std::getenv("MCL_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  if (n < 1) throw ConfigError(std::string("MCL_THREADS must be a positive integer, got '") + env + "'");
  return n;
}

std::vector<Reference> load_references(const RunConfig& rc, const ClipGeometry& geo) {
  std::vector<Reference> refs;
  for (const auto& spec : split(rc.str("references"), ',')) refs.push_back(load_reference(spec, "", geo));
  return refs;
}

std::vector<std::uint64_t> seed_list(const RunConfig& rc) {
  std::vector<std::uint64_t> seeds;
  const auto base = static_cast<std::uint64_t>(rc.integer("seed"));
  for (long long i = 0; i < rc.integer("seeds"); ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
  return seeds;
}

int cmd_ablate(const RunConfig& rc, const fs::path& run) {
  const Denoiser model = load_model(rc);
  const auto sched = NoiseSchedule::linear();
  SweepConfig sw;
  sw.extract = extract_options(rc);
  sw.sampler = sampler_config(rc);
  if (sw.sampler.mode == GuidanceMode::kOff && rc.str("axis") != "mode") sw.sampler.mode = GuidanceMode::kPrimary;
  sw.seeds = seed_list(rc);
  sw.threads = worker_threads();
  auto axis = rc.str("axis");
  if (axis == "t-alpha") axis = "t_alpha";
  const auto rows =
      ablation_sweep(model, sched, axis, split(rc.str("grid"), ','), sw, load_references(rc, geometry(model.config())));
  write_sweep_table(run / "ablation.tsv", rows);
  write_run_table(run / "runs.tsv", rows);
  for (const auto& r : rows) {
    std::cout << r.axis << '\t' << r.value << "\tfidelity\t" << r.fidelity << "\ttemporal_consistency\t"
              << r.temporal_consistency << "\twall_seconds\t" << r.wall_seconds << (r.failed ? "\tpartial" : "") << '\n';
  }
  return 0;
}

int cmd_demo(const RunConfig& rc, const fs::path& run) {
  const Denoiser model = load_model(rc);
  const auto sched = NoiseSchedule::linear();
  const auto ref = load_reference(rc.str("reference"), rc.str("truth"), geometry(model.config()));
  SamplerConfig sc = sampler_config(rc);
  const ExtractOptions eo = extract_options(rc);
  ExtractOptions plain_eo = eo;
  plain_eo.k = model.config().frames;
  const auto rep_primary = extract_representation(model, sched, ref.clip.data, eo, ref.clip.id);
  const auto rep_plain = extract_representation(model, sched, ref.clip.data, plain_eo, ref.clip.id);
  const int cond = sampling_condition(rc, &ref);

  write_strip(run / "reference.pgm", ref.clip.data);
  std::ostringstream summary;
  summary << "demo";
  const std::pair<const char*, GuidanceMode> modes[] = {
      {"unguided", GuidanceMode::kOff}, {"plain", GuidanceMode::kPlain}, {"primary", GuidanceMode::kPrimary}};
  for (const auto& [name, mode] : modes) {
    sc.mode = mode;
    const auto* rep = mode == GuidanceMode::kPlain ? &rep_plain : &rep_primary;
    const auto res = sample(model, sched, sc, cond, rep);
    write_strip(run / (std::string(name) + ".pgm"), res.clip);
    mclt::save(run / (std::string(name) + ".mclt"), res.clip);
    summary << '\t' << name << '\t' << motion_fidelity(ref.truth, res.clip).correlation;
  }
  std::ofstream(run / "summary.txt") << summary.str() << '\n';
  std::cout << summary.str() << '\n';
  return 0;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\t') ch = ' ';
  return s;
}

int exit_code(const std::string& kind) {
  if (kind == "config") return 2;
  if (kind == "io") return 3;
  if (kind == "format") return 4;
  if (kind == "shape") return 5;
  if (kind == "numeric") return 6;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Training-free motion cloning on a toy video diffusion model"};
  app.require_subcommand(1);

  std::string config_path;
  std::map<std::string, std::string> flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option_function<std::string>("--seed", [&](const std::string& v) { flags["seed"] = v; }, "run seed");
    sub->add_option_function<std::string>("--mode", [&](const std::string& v) { flags["mode"] = v; },
                                          "off|plain|primary|inversion_1");
    sub->add_option_function<std::string>("--k", [&](const std::string& v) { flags["k"] = v; }, "top-k per row");
    sub->add_option_function<std::string>("--t-alpha", [&](const std::string& v) { flags["t_alpha"] = v; },
                                          "extraction timestep");
    sub->add_option_function<std::string>("--block", [&](const std::string& v) { flags["block"] = v; },
                                          "attention block");
    sub->add_option_function<std::string>("--lambda", [&](const std::string& v) { flags["lambda"] = v; },
                                          "guidance weight");
    sub->add_option_function<std::string>("--cfg-scale", [&](const std::string& v) { flags["cfg_scale"] = v; },
                                          "classifier-free guidance weight");
    sub->add_option_function<std::string>("--schedule", [&](const std::string& v) { flags["schedule"] = v; },
                                          "camera|object|N,M");
    sub->add_option_function<std::string>("--out", [&](const std::string& v) { flags["out"] = v; },
                                          "output root");
    sub->add_option_function<std::string>("--axis", [&](const std::string& v) { flags["axis"] = v; },
                                          "ablation axis: k|t_alpha|block|mode");
    sub->add_option_function<std::string>("--grid", [&](const std::string& v) { flags["grid"] = v; },
                                          "comma-separated ablation grid");
    sub->add_option_function<std::vector<std::string>>(
        "--set",
        [&](const std::vector<std::string>& kvs) {
          for (const auto& kv : kvs) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + kv);
            flags[kv.substr(0, eq)] = kv.substr(eq + 1);
          }
        },
        "override any config key (key=value)");
  };

  using Handler = int (*)(const RunConfig&, const fs::path&);
  struct Command {
    const char* name;
    const char* help;
    Handler fn;
  };
  const Command commands[] = {
      {"gen-data", "write the synthetic clip corpus", cmd_gen_data},
      {"train", "train the denoiser and save a checkpoint", cmd_train},
      {"extract", "extract a motion representation from a reference clip", cmd_extract},
      {"sample", "generate one clip, optionally guided by a reference", cmd_sample},
      {"eval", "score a clip against a reference", cmd_eval},
      {"ablate", "sweep one axis over references and seeds", cmd_ablate},
      {"demo", "reference, unguided, plain and primary strips side by side", cmd_demo}};
  std::map<CLI::App*, Handler> handlers;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    handlers[sub] = fn;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error\tusage\t" << one_line(e.what()) << '\n';
    return 64;
  }

  try {
    RunConfig rc;
    if (!config_path.empty()) rc.load(config_path);
    for (const auto& [k, v] : flags) rc.set(k, v, "command line");
    validate_types(rc);
    model_config(rc);
    sampler_config(rc);
    for (auto& [sub, fn] : handlers) {
      if (!sub->parsed()) continue;
      const std::string name = sub->get_name();
      if (name != "gen-data" && name != "train" && name != "eval") {
        const auto& ck = rc.str("checkpoint");
        if (ck.empty()) throw ConfigError(name + " needs checkpoint=<dir>");
        if (!fs::exists(fs::path(ck) / "manifest.txt")) throw IoError("no checkpoint at " + ck);
      }
      const fs::path run = make_run_dir(rc, name);
      std::cout << "run\t" << run.string() << '\n';
      return fn(rc, run);
    }
  } catch (const Error& e) {
    std::cerr << "error\t" << e.kind() << '\t' << one_line(e.what()) << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error\tinternal\t" << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
