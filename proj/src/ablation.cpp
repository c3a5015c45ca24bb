#include "mclone/ablation.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <thread>

namespace mclone {
namespace {

int parse_int(const std::string& axis, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("sweep axis " + axis + ": grid value '" + v + "' is not an integer");
}

}  // namespace

std::vector<RunResult> guided_runs(const Denoiser& model, const NoiseSchedule& schedule, const Reference& ref,
                                   const ExtractOptions& extract, const SamplerConfig& sampler,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<RunResult> out;
  MotionRepresentation rep;
  GuidanceTrajectory traj;
  std::string setup_error;
  try {
    if (sampler.mode == GuidanceMode::kPlain || sampler.mode == GuidanceMode::kPrimary) {
      ExtractOptions eo = extract;
      if (sampler.mode == GuidanceMode::kPlain) eo.k = model.config().frames;
      rep = extract_representation(model, schedule, ref.clip.data, eo, ref.clip.id);
    } else if (sampler.mode == GuidanceMode::kInversion1) {
      traj = extract_trajectory(model, schedule, ref.clip.data, sampler.steps, sampler.guided_steps, extract.k,
                                extract.block, extract.condition);
    }
  } catch (const Error& e) {
    setup_error = e.what();
  }
  for (auto seed : seeds) {
    RunResult r;
    r.reference_id = ref.clip.id;
    r.seed = seed;
    if (!setup_error.empty()) {
      r.failed = true;
      r.error = setup_error;
      out.push_back(r);
      continue;
    }
    try {
      SamplerConfig sc = sampler;
      sc.seed = seed;
      const auto res = sample(model, schedule, sc, ref.condition, &rep, &traj);
      r.score = motion_fidelity(ref.truth, res.clip);
      r.temporal_consistency = temporal_consistency(res.clip);
    } catch (const Error& e) {
      r.failed = true;
      r.error = e.what();
    }
    out.push_back(r);
  }
  return out;
}

std::vector<SweepRow> ablation_sweep(const Denoiser& model, const NoiseSchedule& schedule, const std::string& axis,
                                     const std::vector<std::string>& grid, const SweepConfig& config,
                                     const std::vector<Reference>& references) {
  if (axis != "k" && axis != "t_alpha" && axis != "block" && axis != "mode") {
    throw ConfigError("unknown sweep axis '" + axis + "'; expected k|t_alpha|block|mode");
  }
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  if (references.empty()) throw ConfigError("sweep needs at least one reference clip");

  // Resolve every grid point up front so bad values fail before any sampling.
  struct Point {
    ExtractOptions extract;
    SamplerConfig sampler;
  };
  std::vector<Point> points;
  for (const auto& v : grid) {
    Point p{config.extract, config.sampler};
    if (axis == "k") {
      p.extract.k = parse_int(axis, v);
      if (p.extract.k < 1 || p.extract.k > model.config().frames) {
        throw ConfigError("sweep axis k: " + v + " outside [1, " + std::to_string(model.config().frames) + "]");
      }
    } else if (axis == "t_alpha") {
      p.extract.t_alpha = parse_int(axis, v);
      if (p.extract.t_alpha < 1 || p.extract.t_alpha > schedule.total_steps()) {
        throw ConfigError("sweep axis t_alpha: " + v + " outside [1, " + std::to_string(schedule.total_steps()) + "]");
      }
    } else if (axis == "block") {
      model.config().block_level(v);
      p.extract.block = v;
    } else {
      p.sampler.mode = guidance_mode_from_name(v);
    }
    p.sampler.validate();
    points.push_back(p);
  }

  std::vector<SweepRow> rows;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::vector<RunResult>> per_ref(references.size());
    const int threads = std::max(1, std::min<int>(config.threads, static_cast<int>(references.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < references.size(); i = next++) {
        per_ref[i] = guided_runs(model, schedule, references[i], points[g].extract, points[g].sampler, config.seeds);
      }
    };
    if (threads == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }

    SweepRow row;
    row.axis = axis;
    row.value = grid[g];
    for (auto& runs : per_ref)
      for (auto& r : runs) {
        ++row.runs;
        if (r.failed) {
          ++row.failed;
        } else {
          row.fidelity += r.score.correlation;
          row.mean_abs_error += r.score.mean_abs_error;
          row.temporal_consistency += r.temporal_consistency;
        }
        row.details.push_back(std::move(r));
      }
    const int ok = row.runs - row.failed;
    if (ok > 0) {
      row.fidelity /= ok;
      row.mean_abs_error /= ok;
      row.temporal_consistency /= ok;
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_table(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "axis\tvalue\tfidelity\tmean_abs_error\ttemporal_consistency\twall_seconds\truns\tfailed\tstatus\n";
  for (const auto& r : rows) {
    os << r.axis << '\t' << r.value << '\t' << r.fidelity << '\t' << r.mean_abs_error << '\t' << r.temporal_consistency
       << '\t' << r.wall_seconds << '\t' << r.runs << '\t' << r.failed << '\t' << (r.failed ? "partial" : "complete")
       << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void write_run_table(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "axis\tvalue\treference\tseed\tfidelity\tmean_abs_error\ttemporal_consistency\terror\n";
  for (const auto& r : rows) {
    for (const auto& d : r.details) {
      os << r.axis << '\t' << r.value << '\t' << d.reference_id << '\t' << d.seed << '\t';
      if (d.failed) os << "nan\tnan\tnan\t" << d.error << '\n';
      else os << d.score.correlation << '\t' << d.score.mean_abs_error << '\t' << d.temporal_consistency << "\t-\n";
    }
  }
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace mclone
