#include "twinattn/trainer.hpp"

#include <cmath>
#include <filesystem>

#include "twinattn/checkpoint.hpp"

namespace twinattn {

ScenePack make_scene_pack(Scene scene, double cell_low, double cell_high, const std::string& scale_mode) {
  ScenePack pack;
  pack.part = partition_superpoints(scene, cell_low, cell_high);
  if (scale_mode == "multi") {
    pack.assign_branch_low = pack.part.assign_low;
    pack.n_branch_low = pack.part.n_low;
    pack.assign_mask = pack.part.assign_high;
    pack.n_mask = pack.part.n_high;
  } else if (scale_mode == "low_only") {
    pack.assign_branch_low = pack.part.assign_low;
    pack.n_branch_low = pack.part.n_low;
    pack.assign_mask = pack.part.assign_low;
    pack.n_mask = pack.part.n_low;
  } else if (scale_mode == "high_only") {
    pack.assign_branch_low = pack.part.assign_high;
    pack.n_branch_low = pack.part.n_high;
    pack.assign_mask = pack.part.assign_high;
    pack.n_mask = pack.part.n_high;
  } else {
    throw ConfigError("scale_mode must be multi, low_only or high_only");
  }
  pack.gt = gt_masks_over(scene, pack.assign_mask, pack.n_mask, &pack.fidelity);
  pack.norm = SceneNormalizer::fit(scene);
  pack.enc_input = encoder_input_features(scene, pack.norm);
  pack.gt_boxes_norm = Tensor2(scene.num_instances(), 6);
  for (int i = 0; i < scene.num_instances(); ++i) {
    std::array<double, 6> raw;
    for (int a = 0; a < 6; ++a) raw[a] = pack.gt.boxes.at(i, a);
    const auto norm_box = pack.norm.apply_box(raw);
    for (int a = 0; a < 6; ++a) pack.gt_boxes_norm.at(i, a) = norm_box[a];
  }
  pack.scene = std::move(scene);
  return pack;
}

std::vector<BlockPrediction> forward_scene(Tape& tape, Model& model, const ScenePack& pack,
                                           std::vector<BlockTrace>* trace) {
  Value input = tape.constant(pack.enc_input);
  Value features = encode_points(tape, input, model.encoder);
  Value pooled_low = tape.segment_mean(features, pack.assign_branch_low, pack.n_branch_low);
  Value pooled_mask = tape.segment_mean(features, pack.assign_mask, pack.n_mask);
  return decoder_forward(tape, model, pooled_low, pooled_mask, trace);
}

std::vector<MatchResult> match_blocks(const Tape& tape, const std::vector<BlockPrediction>& preds,
                                      const GroundTruth& gt, const LossCoeffs& coeffs) {
  std::vector<MatchResult> matches;
  matches.reserve(preds.size());
  for (const auto& pred : preds) {
    const Tensor2 cost = pairwise_cost(pred.class_probs, tape.value(pred.mask_logits), gt,
                                       coeffs.lambda_cls, coeffs.lambda_mask);
    matches.push_back(hungarian(cost));
  }
  return matches;
}

namespace {

void check_finite_terms(const LossBreakdown& b) {
  const std::pair<const char*, double> terms[] = {{"cls", b.cls},       {"bce", b.bce},
                                                  {"dice", b.dice},     {"mask_score", b.mask_score},
                                                  {"box", b.box},       {"box_score", b.box_score},
                                                  {"total", b.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError(std::string("training diverged: loss term '") + name + "' is not finite");
    }
  }
}

}  // namespace

TrainStepStats train_step(Model& model, AdamW& opt, std::span<const ScenePack* const> batch,
                          const LossCoeffs& coeffs) {
  if (batch.empty()) throw ConfigError("train_step: batch must contain at least one scene");
  model.params.zero_grads();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  TrainStepStats stats;
  for (const ScenePack* pack : batch) {
    Tape tape;
    const auto preds = forward_scene(tape, model, *pack);
    const auto matches = match_blocks(tape, preds, pack->gt, coeffs);
    LossResult loss = build_losses(tape, preds, matches, pack->gt, pack->gt_boxes_norm, coeffs);
    check_finite_terms(loss.breakdown);
    tape.backward(tape.scale(loss.total, inv_batch));

    stats.loss.cls += loss.breakdown.cls * inv_batch;
    stats.loss.bce += loss.breakdown.bce * inv_batch;
    stats.loss.dice += loss.breakdown.dice * inv_batch;
    stats.loss.mask_score += loss.breakdown.mask_score * inv_batch;
    stats.loss.box += loss.breakdown.box * inv_batch;
    stats.loss.box_score += loss.breakdown.box_score * inv_batch;
    stats.loss.total += loss.breakdown.total * inv_batch;
  }
  stats.loss.betas = coeffs;
  stats.lr = opt.current_lr();
  opt.step();
  return stats;
}

void train_loop(Model& model, std::vector<ScenePack>& packs, const TrainLoopConfig& cfg,
                const OptimConfig& opt_cfg, const LossCoeffs& coeffs,
                const std::function<void(int, const TrainStepStats&)>& sink) {
  if (packs.empty()) throw ConfigError("train_loop: no scenes");
  OptimConfig opt_cfg_local = opt_cfg;
  opt_cfg_local.total_steps = cfg.steps;
  AdamW opt(model.params, opt_cfg_local);
  Rng order_rng = Rng(cfg.seed).substream("train.order");

  std::vector<int> order(packs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  size_t cursor = order.size();  // forces a shuffle on first use

  const bool persist = !cfg.out_dir.empty();
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<const ScenePack*> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&packs[order[cursor++]]);
    }
    const TrainStepStats stats = train_step(model, opt, batch, coeffs);
    if (sink) sink(step, stats);
    if (persist && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) {
      save_checkpoint(cfg.out_dir + "/checkpoint_step" + std::to_string(step) + ".twack", model.params,
                      cfg.config_echo);
    }
  }
  if (persist) {
    save_checkpoint(cfg.out_dir + "/checkpoint_final.twack", model.params, cfg.config_echo);
  }
}

}  // namespace twinattn
