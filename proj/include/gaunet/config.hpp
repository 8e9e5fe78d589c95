#pragma once

#include <string>

#include "gaunet/classifier.hpp"
#include "gaunet/critic.hpp"
#include "gaunet/dataset.hpp"
#include "gaunet/generator.hpp"
#include "gaunet/training.hpp"

namespace gau {

// Everything a run needs, grouped the way the config file is sectioned.
// Either `manifest` points at real data or the synthetic spec is used.
struct DataConfig {
  std::string manifest;  // empty -> synthetic
  SyntheticSpec synthetic;
  SplitRatios ratios;
  std::uint64_t split_seed = 0;
  int image_size = 64;  // resize target for manifest data; synthetic render size
};

struct EvalConfig {
  ClassifierConfig classifier;
  int n_generated_per_class = 64;
  int bootstrap_reps = 200;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  DataConfig data;
  GeneratorConfig generator;
  CriticConfig critic;
  TrainConfig training;
  EvalConfig evaluation;
  std::string output_dir = "out";

  void validate() const;
};

// Sectioned key-value text: `[section]` headers, `key = value` lines,
// `#` comments. Unknown sections or keys are rejected by name; serialization
// writes every field back so the resolved file is a complete audit record.
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text);

void write_config(const std::string& path, const ExperimentConfig& cfg);
ExperimentConfig read_config(const std::string& path);

}  // namespace gau
