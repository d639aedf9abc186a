#include "retarget/cli.h"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "retarget/errors.h"
#include "retarget/refmap.h"
#include "retarget/rotmath.h"
#include "retarget/toy.h"

namespace retarget::cli {

namespace fs = io::fs;

namespace {

fs::path out_dir(const io::ExperimentConfig& cfg) { return cfg.resolve(cfg.output_dir); }

void ensure_files(const io::ExperimentConfig& cfg) {
  cfg.validate();
  cfg.validate_files();
}

}  // namespace

Problem load_problem(const io::ExperimentConfig& cfg) {
  ensure_files(cfg);
  return Problem::build(io::load_morphology(cfg.resolve(cfg.source_morphology)),
                        io::load_morphology(cfg.resolve(cfg.target_morphology)),
                        io::load_pairs(cfg.resolve(cfg.correspondences)),
                        io::load_manifest_clips(cfg.resolve(cfg.clips)));
}

fs::path cmd_calibrate(const io::ExperimentConfig& cfg, std::ostream& log) {
  ensure_files(cfg);
  const Morphology src = io::load_morphology(cfg.resolve(cfg.source_morphology));
  const Morphology tgt = io::load_morphology(cfg.resolve(cfg.target_morphology));
  const CorrespondenceSet pairs = resolve_correspondences(io::load_pairs(cfg.resolve(cfg.correspondences)), src, tgt);
  const Calibration cal = calibrate(src, tgt, pairs);
  const fs::path path = out_dir(cfg) / "calibration.json";
  io::save_calibration(path, cal, pairs, src, tgt);

  log << "scale s = " << std::setprecision(6) << cal.scale << "\n";
  for (int b = 0; b < pairs.size(); ++b) {
    const auto& r = pairs.resolved[b];
    log << "  " << src.bodies()[r.source_body].name << " -> " << tgt.bodies()[r.target_body].name
        << ": |x_nom| = " << cal.x_nom[b].norm() << " m, angle(R_nom) = " << log_map(cal.R_nom[b]).norm()
        << " rad\n";
  }
  for (const auto& w : cal.warnings) log << "warning: " << w << "\n";
  log << "wrote " << path.string() << "\n";
  return path;
}

int cmd_preprocess(const io::ExperimentConfig& cfg, std::ostream& log) {
  ensure_files(cfg);
  const Morphology src = io::load_morphology(cfg.resolve(cfg.source_morphology));
  const Morphology tgt = io::load_morphology(cfg.resolve(cfg.target_morphology));
  const CorrespondenceSet pairs = resolve_correspondences(io::load_pairs(cfg.resolve(cfg.correspondences)), src, tgt);
  const Calibration cal = calibrate(src, tgt, pairs);
  const fs::path manifest = cfg.resolve(cfg.clips);
  const fs::path dir = out_dir(cfg) / "clips";

  std::vector<io::ManifestEntry> done;
  int skipped = 0;
  for (const auto& e : io::load_manifest(manifest)) {
    try {
      MotionClip c = io::load_clip(manifest.parent_path() / e.path);
      if (c.num_frames() < 2) throw ValidationError(c.id + ": needs at least two frames");
      const bool filled = !c.has_velocities;
      if (filled) fill_velocities(c);
      c.z_nom = precompute_z_nom(c, src, cal);
      const std::string file = c.id + ".json";
      io::save_clip(dir / file, c);
      done.push_back({c.id, file, true, c.z_nom});
      log << c.id << ": " << c.num_frames() << " frames, z_nom = " << std::setprecision(6) << c.z_nom
          << (filled ? " m, velocities filled\n" : " m\n");
    } catch (const ValidationError& err) {
      ++skipped;
      log << "skipped: " << err.what() << "\n";
    }
  }
  if (done.empty()) throw ValidationError(manifest.string() + ": no clip could be processed");
  io::save_manifest(dir / "manifest.json", done);
  log << "wrote " << (dir / "manifest.json").string() << "\n";
  return skipped;
}

std::vector<IterationLog> cmd_train(const io::ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint,
                                    std::ostream& log) {
  auto problem = std::make_shared<const Problem>(load_problem(cfg));
  Trainer trainer(problem, cfg.trainer);
  const fs::path dir = out_dir(cfg);
  const fs::path log_path = dir / "train_log.csv";
  bool append = false;
  if (checkpoint) {
    trainer.restore(io::load_checkpoint(*checkpoint));
    append = trainer.iteration() > 0;
    log << "resumed at iteration " << trainer.iteration() << "\n";
  }
  if (!append) io::write_training_log(log_path, {}, false);

  auto save = [&] {
    io::save_checkpoint(dir / "checkpoint.json", trainer.state());
    io::save_params(dir / "params.json", trainer.params(), trainer.iteration());
  };
  std::vector<IterationLog> logs;
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.iteration() < cfg.trainer.ppo.iterations) {
    const IterationLog row = trainer.iterate();
    logs.push_back(row);
    io::write_training_log(log_path, {row}, true);
    if (row.iteration % 10 == 0 || trainer.iteration() == cfg.trainer.ppo.iterations) {
      const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log << "it " << std::setw(5) << row.iteration << "  reward " << std::setw(9) << std::fixed
          << std::setprecision(3) << row.mean_reward << "  upper " << std::setprecision(5) << row.upper_loss
          << "  rate " << std::scientific << std::setprecision(2) << row.update_rate << "  kl " << row.kl
          << std::fixed << "  fail " << std::setprecision(2) << row.failure_rate << "  " << std::setprecision(0)
          << sec << " s" << std::defaultfloat << "\n";
    }
    if (cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0) save();
  }
  save();
  log << "wrote " << (dir / "checkpoint.json").string() << "\n";
  return logs;
}

std::vector<ExportedMotion> cmd_retarget(const io::ExperimentConfig& cfg, const fs::path& checkpoint,
                                         std::ostream& log) {
  if (!fs::exists(checkpoint)) throw ValidationError("checkpoint not found: " + checkpoint.string());
  auto problem = std::make_shared<const Problem>(load_problem(cfg));
  Trainer trainer(problem, cfg.trainer);
  trainer.restore(io::load_checkpoint(checkpoint));

  const fs::path dir = out_dir(cfg) / "retargeted";
  std::vector<ExportedMotion> out;
  std::vector<io::ManifestEntry> entries;
  nlohmann::json summary = nlohmann::json::array();
  for (int m = 0; m < problem->num_motions(); ++m) {
    ExportedMotion e = trainer.retarget(m);
    const std::string file = e.trajectory.id + ".json";
    io::save_clip(dir / file, e.trajectory);
    entries.push_back({e.trajectory.id, file, false, 0.0});
    summary.push_back({{"id", e.trajectory.id},
                       {"success", e.success},
                       {"frames", e.trajectory.num_frames()},
                       {"max_root_force", e.max_root_force}});
    log << e.trajectory.id << ": " << (e.success ? "ok" : "FAILED") << ", " << e.trajectory.num_frames()
        << " frames, max root force " << std::setprecision(4) << e.max_root_force << " N\n";
    out.push_back(std::move(e));
  }
  io::save_manifest(dir / "manifest.json", entries);
  io::write_text(dir / "summary.json", summary.dump(2) + "\n");
  log << "wrote " << (dir / "manifest.json").string() << "\n";
  return out;
}

std::vector<MetricsReport> cmd_eval(const io::ExperimentConfig& cfg, const fs::path& manifest, std::ostream& log) {
  ensure_files(cfg);
  const Morphology src = io::load_morphology(cfg.resolve(cfg.source_morphology));
  const Morphology tgt = io::load_morphology(cfg.resolve(cfg.target_morphology));
  const CorrespondenceSet pairs = resolve_correspondences(io::load_pairs(cfg.resolve(cfg.correspondences)), src, tgt);
  std::map<std::string, MotionClip> sources;
  for (auto& c : io::load_manifest_clips(cfg.resolve(cfg.clips))) {
    if (!c.has_velocities) fill_velocities(c);
    sources.emplace(c.id, std::move(c));
  }

  std::vector<MetricsReport> reports;
  for (const auto& traj : io::load_manifest_clips(manifest)) {
    const auto it = sources.find(traj.id);
    if (it == sources.end()) {
      throw ValidationError("trajectory '" + traj.id + "' has no source clip with the same id");
    }
    reports.push_back(evaluate_motion(traj, tgt, it->second, src, pairs, cfg.metrics.contact,
                                      cfg.metrics.penetration_threshold));
  }
  const AggregateReport agg = aggregate(reports);
  const fs::path path = out_dir(cfg) / "metrics.csv";
  io::write_metrics_csv(path, reports, agg);

  log << std::left << std::setw(12) << "motion" << std::right << std::setw(10) << "gpen_t" << std::setw(10)
      << "gpen_cm" << std::setw(10) << "spen_t" << std::setw(10) << "spen_cm" << std::setw(12) << "slide_cm/s"
      << std::setw(10) << "float_cm\n";
  log << std::fixed << std::setprecision(3);
  for (const auto& r : reports) {
    log << std::left << std::setw(12) << r.motion << std::right << std::setw(10) << r.ground_pen_time
        << std::setw(10) << r.ground_pen_cm << std::setw(10) << r.self_pen_time << std::setw(10) << r.self_pen_cm
        << std::setw(12) << r.foot_slide_cm_s << std::setw(10) << r.foot_float_cm
        << (r.no_contact ? "  (no contact)" : "") << "\n";
  }
  auto row = [&](const char* name, double Summary::*f) {
    log << std::left << std::setw(12) << name << std::right << std::setw(10) << agg.ground_pen_time.*f
        << std::setw(10) << agg.ground_pen_cm.*f << std::setw(10) << agg.self_pen_time.*f << std::setw(10)
        << agg.self_pen_cm.*f << std::setw(12) << agg.foot_slide_cm_s.*f << std::setw(10)
        << agg.foot_float_cm.*f << "\n";
  };
  row("mean", &Summary::mean);
  row("std", &Summary::std);
  row("min", &Summary::min);
  row("max", &Summary::max);
  log << std::defaultfloat << "wrote " << path.string() << "\n";
  return reports;
}

std::string training_plot_svg(const std::vector<IterationLog>& rows) {
  if (rows.empty()) throw ValidationError("plot: training log has no rows");
  struct Series {
    const char* title;
    double IterationLog::*field;
  };
  const Series series[] = {{"mean reward", &IterationLog::mean_reward},
                           {"upper loss", &IterationLog::upper_loss},
                           {"update rate", &IterationLog::update_rate}};
  constexpr double kW = 640, kH = 200, kPad = 50;
  std::ostringstream s;
  s << std::setprecision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << 3 * kH
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  const double x0 = rows.front().iteration, x1 = std::max<double>(rows.back().iteration, x0 + 1);
  for (int k = 0; k < 3; ++k) {
    double lo = rows[0].*series[k].field, hi = lo;
    for (const auto& r : rows) {
      lo = std::min(lo, r.*series[k].field);
      hi = std::max(hi, r.*series[k].field);
    }
    if (hi - lo < 1e-12) hi = lo + 1.0;
    const double top = k * kH + 25, bottom = (k + 1) * kH - 25;
    s << "<rect x=\"" << kPad << "\" y=\"" << top << "\" width=\"" << kW - 1.5 * kPad << "\" height=\""
      << bottom - top << "\" fill=\"none\" stroke=\"#999\"/>\n";
    s << "<text x=\"" << kPad << "\" y=\"" << top - 6 << "\">" << series[k].title << "</text>\n";
    s << "<text x=\"4\" y=\"" << top + 10 << "\">" << hi << "</text>\n";
    s << "<text x=\"4\" y=\"" << bottom << "\">" << lo << "</text>\n";
    s << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.2\" points=\"";
    for (const auto& r : rows) {
      const double x = kPad + (r.iteration - x0) / (x1 - x0) * (kW - 1.5 * kPad);
      const double y = bottom - (r.*series[k].field - lo) / (hi - lo) * (bottom - top);
      s << x << ',' << y << ' ';
    }
    s << "\"/>\n";
  }
  s << "<text x=\"" << kW / 2 << "\" y=\"" << 3 * kH - 6 << "\">iteration</text>\n</svg>\n";
  return s.str();
}

void cmd_plot(const fs::path& log_csv, const fs::path& svg, std::ostream& log) {
  io::write_text(svg, training_plot_svg(io::read_training_log(log_csv)));
  log << "wrote " << svg.string() << "\n";
}

fs::path cmd_example(const fs::path& dir, std::ostream& log) {
  io::save_morphology(dir / "source.json", toy::source_morphology());
  io::save_morphology(dir / "target.json", toy::target_morphology());
  io::save_pairs(dir / "pairs.json", toy::correspondences());
  std::vector<io::ManifestEntry> entries;
  for (const auto& c : toy::source_clips()) {
    io::save_clip(dir / "clips" / (c.id + ".json"), c);
    entries.push_back({c.id, c.id + ".json", false, 0.0});
  }
  io::save_manifest(dir / "clips" / "manifest.json", entries);

  io::ExperimentConfig cfg;
  cfg.source_morphology = "source.json";
  cfg.target_morphology = "target.json";
  cfg.correspondences = "pairs.json";
  cfg.clips = "clips/manifest.json";
  cfg.output_dir = "out";
  cfg.trainer = toy::trainer_config();
  const fs::path path = dir / "config.json";
  io::save_config(path, cfg);
  log << "wrote " << path.string() << "\n";
  return path;
}

int run(int argc, char** argv) {
  CLI::App app{"Bilevel motion retargeting: calibrate, preprocess, train, retarget, eval, plot."};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint, trajectories, log_csv, svg, example_dir = "toy";
  std::optional<std::uint64_t> seed;
  bool no_bilevel = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "override the output directory");
  };
  auto* calibrate = app.add_subcommand("calibrate", "compute scale and nominal transforms");
  common(calibrate);
  auto* preprocess = app.add_subcommand("preprocess", "precompute z_nom and fill velocities");
  common(preprocess);
  auto* train = app.add_subcommand("train", "run bilevel training");
  common(train);
  train->add_flag("--no-bilevel", no_bilevel, "keep retargeting parameters fixed (ablation)");
  train->add_option("--checkpoint", checkpoint, "resume from this checkpoint");
  auto* retarget = app.add_subcommand("retarget", "export retargeted trajectories");
  common(retarget);
  retarget->add_option("--checkpoint", checkpoint, "trained checkpoint (default <out>/checkpoint.json)");
  auto* eval = app.add_subcommand("eval", "kinematic metrics of retargeted trajectories");
  common(eval);
  eval->add_option("--trajectories", trajectories, "trajectory manifest (default <out>/retargeted/manifest.json)");
  auto* plot = app.add_subcommand("plot", "SVG of training curves");
  plot->add_option("--log", log_csv, "training log CSV")->required();
  plot->add_option("--out", svg, "output SVG")->required();
  auto* example = app.add_subcommand("example", "write the toy problem files and config");
  example->add_option("--out", example_dir, "directory to write into");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (example->parsed()) {
      cmd_example(example_dir, std::cout);
      return 0;
    }
    if (plot->parsed()) {
      cmd_plot(log_csv, svg, std::cout);
      return 0;
    }
    io::ExperimentConfig cfg = io::load_config(config_path);
    if (seed) cfg.trainer.seed = *seed;
    if (!out.empty()) cfg.output_dir = fs::absolute(out).string();
    if (no_bilevel) cfg.trainer.bilevel = false;
    cfg.validate();

    if (calibrate->parsed()) {
      cmd_calibrate(cfg, std::cout);
    } else if (preprocess->parsed()) {
      return cmd_preprocess(cfg, std::cout) > 0 ? 1 : 0;
    } else if (train->parsed()) {
      std::optional<fs::path> resume;
      if (!checkpoint.empty()) resume = checkpoint;
      cmd_train(cfg, resume, std::cout);
    } else if (retarget->parsed()) {
      cmd_retarget(cfg, checkpoint.empty() ? out_dir(cfg) / "checkpoint.json" : fs::path(checkpoint), std::cout);
    } else if (eval->parsed()) {
      cmd_eval(cfg, trajectories.empty() ? out_dir(cfg) / "retargeted" / "manifest.json" : fs::path(trajectories),
               std::cout);
    }
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFault& e) {
    std::cerr << "runtime fault: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime fault: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace retarget::cli
