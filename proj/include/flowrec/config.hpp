#pragma once

// RunConfig: the single structured-JSON configuration driving every CLI
// subcommand. Unknown keys are rejected; CLI flags override file values; the
// FNV-1a hash of the canonical dump names run directories and ties artifacts
// together.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "flowrec/dataset.hpp"
#include "flowrec/model.hpp"
#include "flowrec/sampler.hpp"
#include "flowrec/trainer.hpp"

namespace flowrec {

struct RunConfig {
  uint64_t seed = 42;
  std::string out_dir = "runs";
  std::string data_path;
  LogFormat data_format = LogFormat::tsv;
  bool data_strict = true;
  std::string snapshot_path;  // preprocess output / train+eval input
  ModelConfig model;          // n_items filled from the snapshot at run time
  TrainConfig train;
  SamplerConfig sampler;
  int eval_workers = 1;
  std::vector<int> sweep_grid = {1, 5, 10, 15, 20, 25, 30, 35};
};

// Defaults exactly as documented in README.md.
RunConfig default_config();

nlohmann::json config_to_json(const RunConfig& c);

// Throws std::invalid_argument on unknown keys, wrong types, or out-of-range
// values. Missing keys keep their defaults.
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config_file(const std::string& path);

// FNV-1a over the canonical (sorted-key) dump.
std::string config_hash(const RunConfig& c);

}  // namespace flowrec
