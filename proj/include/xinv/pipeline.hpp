#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xinv/config.hpp"
#include "xinv/explain.hpp"
#include "xinv/surrogate.hpp"
#include "xinv/zoo.hpp"

namespace xinv {

// One experiment = one config file = one output directory. Stages write into
// that directory exactly once; re-running a finished stage is a no-op, so a
// run can be resumed or extended stage by stage.

struct ExperimentConfig {
  DatasetProfile profile;
  uint64_t seed = 1;
  std::string run_id;
  std::string output_dir;
  std::string data_dir;  // empty: synthesize the digit corpus locally

  int64_t image_count = 1500;
  int target_epochs = 6;
  int inversion_epochs = 6;
  double learning_rate = 1e-3;
  int batch_size = 32;

  std::optional<ExplanationKind> explanation;  // absent for prediction-only runs
  InversionArch inversion = InversionArch::flatten_unet;
  std::optional<SurrogateMode> surrogate;

  double ssim_sigma = 1.5;
  int grid_rows = 6;

  std::string config_hash;      // digest of the canonical config text
  std::string canonical_text;   // the text that hash covers, echoed into the run dir
};

// Key set: dataset, output_dir (required); seed, run_id, data_dir,
// image_count, target_epochs, inversion_epochs, learning_rate, batch_size,
// explanation, inversion, surrogate, ssim_sigma, grid_rows, class_count.
// Unknown keys and contradictory combinations are rejected.
ExperimentConfig interpret_config(const Config& raw);
ExperimentConfig load_experiment(const std::string& path);

struct StageRecord {
  bool done = false;
  double seconds = 0;
  std::vector<std::string> artifacts;  // paths relative to output_dir
};

struct RunManifest {
  std::string config_hash;
  std::string run_id;
  std::string split_digest;
  std::map<std::string, StageRecord> stages;

  bool stage_done(const std::string& name) const {
    auto it = stages.find(name);
    return it != stages.end() && it->second.done;
  }
};

// Pipeline order. train-inversion and train-surrogate are alternatives: a
// config attacks either the breached explanations or a surrogate's.
const std::vector<std::string>& stage_names();

RunManifest load_manifest(const std::string& dir);  // missing file -> empty
void save_manifest(const std::string& dir, const RunManifest& m);

// Executes one stage and returns the updated manifest. Completed stages
// return untouched (no artifact bytes change). Missing prerequisites raise
// prerequisite_error naming the stage to run first.
RunManifest run_stage(const ExperimentConfig& cfg, const std::string& stage,
                      std::ostream* log = nullptr);

// Every stage the config needs, in order.
RunManifest run_all(const ExperimentConfig& cfg, std::ostream* log = nullptr);

}  // namespace xinv
