#pragma once

#include "twinattn/losses.hpp"
#include "twinattn/optimizer.hpp"
#include "twinattn/scene.hpp"

namespace twinattn {

struct TrainConfig {
  OptimConfig optim;
  int steps = 2000;
  int batch = 1;
  int checkpoint_every = 500;
};

struct EvalConfig {
  int top_k = 16;
};

// One experiment's knobs. Defaults follow the published constants where the
// method defines them; everything else is the desk-scale default.
struct RunConfig {
  uint64_t seed = 0;
  SceneConfig scene;
  double cell_low = 1.0;    // superpoint grid cells, coarse scale
  double cell_high = 0.25;  // fine scale (carries the masks)
  ModelConfig model;
  LossCoeffs loss;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  // Canonical sectioned key=value text; echoed into every output directory
  // and hashed into checkpoints.
  std::string echo() const;
  // Applies one "section.key=value" override.
  void apply_override(const std::string& dotted);
};

// Flat sectioned key=value file ([scene], [model], [loss], [train], [eval];
// seed at top level). Unknown keys are errors. Missing file -> ConfigError.
RunConfig load_run_config(const std::string& path);
// Parses the config echo text (same grammar).
RunConfig parse_run_config(const std::string& text);

// The model geometry line stored in checkpoint headers.
ModelConfig model_config_from_echo(const std::string& echo);

}  // namespace twinattn
