#pragma once

#include <functional>
#include <optional>

#include "twinattn/decoder.hpp"
#include "twinattn/losses.hpp"
#include "twinattn/optimizer.hpp"

namespace twinattn {

// A scene with everything the forward pass and loss need, derived once and
// reused across steps. The "effective" assignments realize the scale mode:
// multi keeps (low, high); the single-scale variants collapse both branches
// and the mask partition onto one scale.
struct ScenePack {
  Scene scene;
  SuperpointPartition part;
  GroundTruth gt;  // masks over the effective mask partition
  FidelityReport fidelity;
  SceneNormalizer norm;
  Tensor2 enc_input;      // N x kEncoderInputDim
  Tensor2 gt_boxes_norm;  // N_I x 6
  std::vector<int> assign_branch_low;
  std::vector<int> assign_mask;
  int n_branch_low = 0;
  int n_mask = 0;
};

ScenePack make_scene_pack(Scene scene, double cell_low, double cell_high, const std::string& scale_mode);

// Encoder -> pooling -> twin decoder for one scene.
std::vector<BlockPrediction> forward_scene(Tape& tape, Model& model, const ScenePack& pack,
                                           std::vector<BlockTrace>* trace = nullptr);

// Each block's predictions matched independently against the ground truth.
std::vector<MatchResult> match_blocks(const Tape& tape, const std::vector<BlockPrediction>& preds,
                                      const GroundTruth& gt, const LossCoeffs& coeffs);

struct TrainStepStats {
  LossBreakdown loss;  // averaged over the batch
  double lr = 0.0;
};

// Forward/backward over the batch with gradients averaged, then one AdamW
// update. Throws NumericError naming the first non-finite loss term.
TrainStepStats train_step(Model& model, AdamW& opt, std::span<const ScenePack* const> batch,
                          const LossCoeffs& coeffs);

struct TrainLoopConfig {
  int steps = 2000;
  int batch_size = 1;
  uint64_t seed = 0;
  int checkpoint_every = 500;  // 0 disables periodic checkpoints
  std::string out_dir;         // empty disables checkpoints and the log file
  std::string config_echo;     // stored in checkpoint headers
};

// Scenes are visited in a seeded shuffle, re-drawn each epoch. The optional
// sink observes every step (for logging).
void train_loop(Model& model, std::vector<ScenePack>& packs, const TrainLoopConfig& cfg,
                const OptimConfig& opt_cfg, const LossCoeffs& coeffs,
                const std::function<void(int step, const TrainStepStats&)>& sink = nullptr);

}  // namespace twinattn
