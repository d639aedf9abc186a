#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "retarget/metrics.h"
#include "retarget/morphology.h"
#include "retarget/motion_clip.h"
#include "retarget/trainer.h"

// JSON file formats for every pipeline artifact. Orientations are stored as
// unit quaternions [w, x, y, z]; doubles are written with round-trip
// precision. Loaders throw ValidationError prefixed with the file path.
namespace retarget::io {

namespace fs = std::filesystem;

Morphology load_morphology(const fs::path& path);
void save_morphology(const fs::path& path, const Morphology& m);

std::vector<CorrespondencePair> load_pairs(const fs::path& path);
void save_pairs(const fs::path& path, const std::vector<CorrespondencePair>& pairs);

// Frames without "linvel"/"angvel" mark the clip as position-only.
MotionClip load_clip(const fs::path& path);
void save_clip(const fs::path& path, const MotionClip& clip);

// A manifest lists clip files relative to its own directory, optionally with
// a precomputed z_nom per clip.
struct ManifestEntry {
  std::string id;
  std::string path;
  bool has_z_nom = false;
  double z_nom = 0.0;
};
std::vector<ManifestEntry> load_manifest(const fs::path& path);
void save_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries);
std::vector<MotionClip> load_manifest_clips(const fs::path& path);

void save_calibration(const fs::path& path, const Calibration& cal, const CorrespondenceSet& pairs,
                      const Morphology& source, const Morphology& target);

struct ParamsFile {
  int iteration = 0;
  RetargetParams params;
};
void save_params(const fs::path& path, const RetargetParams& p, int iteration);
ParamsFile load_params(const fs::path& path);

void save_checkpoint(const fs::path& path, const TrainerState& s);
TrainerState load_checkpoint(const fs::path& path);

struct MetricsConfig {
  ContactThresholds contact;
  double penetration_threshold = 0.01;  // m
};

struct ExperimentConfig {
  std::string source_morphology;
  std::string target_morphology;
  std::string correspondences;
  std::string clips;        // manifest
  std::string output_dir = "out";
  std::string reward_preset = "retargeting";
  TrainerConfig trainer;
  MetricsConfig metrics;
  int checkpoint_every = 50;  // iterations between checkpoints; 0 keeps only the final one

  // Resolved against `base_dir` (the config file's directory).
  fs::path base_dir;
  fs::path resolve(const std::string& p) const;

  // Config values only; the referenced files are checked by validate_files.
  void validate() const;
  void validate_files() const;
};

ExperimentConfig load_config(const fs::path& path);
std::string dump_config(const ExperimentConfig& c);
ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir);
void save_config(const fs::path& path, const ExperimentConfig& c);

// CSV with a header row.
void write_training_log(const fs::path& path, const std::vector<IterationLog>& rows, bool append);
std::vector<IterationLog> read_training_log(const fs::path& path);
void write_metrics_csv(const fs::path& path, const std::vector<MetricsReport>& reports,
                       const AggregateReport& agg);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace retarget::io
