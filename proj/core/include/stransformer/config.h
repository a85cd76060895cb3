#pragma once

#include "stransformer/adam.h"
#include "stransformer/model.h"
#include "stransformer/toy_corpus.h"

namespace stf {

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule;
};

struct TrainConfig {
  int batch_size = 8;
  int64_t max_steps = 1200;
  int64_t checkpoint_interval = 400;
  double grad_clip = 1.0;
};

// Everything an experiment needs, parsed from a `key = value` text file with
// `#` comments. Unknown keys are errors; every key has a default; the
// canonical form round-trips.
struct RunConfig {
  uint64_t seed = 1234;
  ModelConfig model;
  OptimConfig optim;
  TrainConfig train;
  ToySpec toy;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string canonical_config_text(const RunConfig& cfg);

}  // namespace stf
