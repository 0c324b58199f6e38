#pragma once

#include <map>
#include <string>
#include <vector>

#include "twinattn/autodiff.hpp"
#include "twinattn/encoder.hpp"
#include "twinattn/rng.hpp"

namespace twinattn {

// Model geometry and the decoder stack configuration. query_dim (D_o) is
// semantic_dim + 6 by construction; the box part of every query is the last
// six columns.
struct ModelConfig {
  int num_queries = 32;       // N_o
  int semantic_dim = 58;      // D_s
  int blocks = 6;
  int heads = 8;
  double mask_threshold = 0.5;  // tau for superpoint mask attention
  int ffn_hidden = 128;
  int num_classes = 6;        // foreground classes; the class head adds "no instance"
  int backbone_dim = 32;      // D_b
  // multi: twin branches see (S_low, S_high), masks live on the high scale.
  // low_only / high_only: both branches see one scale and masks live there.
  std::string scale_mode = "multi";

  int query_dim() const { return semantic_dim + 6; }
  void validate() const;
  std::string echo() const;
};

struct AttentionHandles {
  Parameter *wq = nullptr, *bq = nullptr;
  Parameter *wk = nullptr, *bk = nullptr;
  Parameter *wv = nullptr, *bv = nullptr;
  Parameter *wo = nullptr, *bo = nullptr;
};

struct BlockHandles {
  AttentionHandles cross;
  AttentionHandles self;
  Parameter *norm_cross_g = nullptr, *norm_cross_b = nullptr;
  Parameter *norm_self_g = nullptr, *norm_self_b = nullptr;
  Parameter *norm_ffn_g = nullptr, *norm_ffn_b = nullptr;
  Parameter *ffn_w1 = nullptr, *ffn_b1 = nullptr;
  Parameter *ffn_w2 = nullptr, *ffn_b2 = nullptr;
};

struct HeadHandles {
  Parameter *cls_w = nullptr, *cls_b = nullptr;
  Parameter *mask_score_w = nullptr, *mask_score_b = nullptr;
  Parameter *box_w = nullptr, *box_b = nullptr;
  Parameter *box_score_w = nullptr, *box_score_b = nullptr;
};

struct RegularizerHandles {
  Parameter *scene_semantic_w = nullptr, *scene_semantic_b = nullptr;  // S_h -> F_m
  Parameter *scene_box_w = nullptr, *scene_box_b = nullptr;            // S_h -> F_b
  Parameter *mask_affine_w = nullptr, *mask_affine_b = nullptr;        // [R;F_m] -> width D_o
};

// Owns every parameter. The twin branches of each block share one handle
// set; there are no per-branch duplicates anywhere in the store.
struct Model {
  ModelConfig cfg;
  ParameterStore params;

  EncoderHandles encoder;
  Parameter* input_proj_w = nullptr;
  Parameter* input_proj_b = nullptr;
  Parameter* queries = nullptr;  // learned X^0, N_o x D_o
  std::vector<BlockHandles> blocks;
  HeadHandles heads;  // shared across blocks
  RegularizerHandles regularizer;
};

// Fresh deterministic initialization: Xavier-uniform weights, zero biases,
// unit layer-norm gains. Query semantic part ~ N(0, 0.02); the box slice and
// the box head bias start at the scene-normalized unit box [0,0,0,1,1,1].
Model build_model(const ModelConfig& cfg, Rng rng);

// Rebuilds handles for a store already filled from a checkpoint.
Model model_from_store(const ModelConfig& cfg, ParameterStore&& store);

// Parameter counts grouped the way `inspect` prints them.
std::vector<std::pair<std::string, long long>> parameter_groups(const Model& model);

}  // namespace twinattn
