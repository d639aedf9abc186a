#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "retarget/io.h"

// Pipeline commands behind the `retarget` executable. Each command reads an
// ExperimentConfig, writes under its output directory and reports progress to
// `log`. Errors surface as ValidationError (exit 1) or RuntimeFault (exit 2).
namespace retarget::cli {

Problem load_problem(const io::ExperimentConfig& cfg);

// Writes <out>/calibration.json.
io::fs::path cmd_calibrate(const io::ExperimentConfig& cfg, std::ostream& log);

// Writes <out>/clips/<id>.json with z_nom and velocities plus
// <out>/clips/manifest.json. Malformed clips are reported and skipped;
// returns how many were skipped.
int cmd_preprocess(const io::ExperimentConfig& cfg, std::ostream& log);

// Trains to cfg.trainer.ppo.iterations, resuming from `checkpoint` when
// given. Writes <out>/train_log.csv, <out>/checkpoint.json and <out>/params.json.
std::vector<IterationLog> cmd_train(const io::ExperimentConfig& cfg,
                                    const std::optional<io::fs::path>& checkpoint, std::ostream& log);

// Mean-action playback of every clip; writes <out>/retargeted/<id>.json,
// manifest.json and summary.json. Failed clips are flagged and still exported.
std::vector<ExportedMotion> cmd_retarget(const io::ExperimentConfig& cfg, const io::fs::path& checkpoint,
                                         std::ostream& log);

// Metrics of the trajectories listed in `manifest` against the source clips
// with the same ids; writes <out>/metrics.csv.
std::vector<MetricsReport> cmd_eval(const io::ExperimentConfig& cfg, const io::fs::path& manifest,
                                    std::ostream& log);

// SVG of mean reward, upper loss and update rate against iteration.
std::string training_plot_svg(const std::vector<IterationLog>& rows);
void cmd_plot(const io::fs::path& log_csv, const io::fs::path& svg, std::ostream& log);

// Toy problem files and a matching config under `dir`.
io::fs::path cmd_example(const io::fs::path& dir, std::ostream& log);

// Parses argv and dispatches; returns the process exit code.
int run(int argc, char** argv);

}  // namespace retarget::cli
