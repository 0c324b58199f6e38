#include "twinattn/model.hpp"

#include <cmath>
#include <cstdio>

namespace twinattn {

void ModelConfig::validate() const {
  if (num_queries < 1) throw ConfigError("model: num_queries must be >= 1");
  if (semantic_dim < 1) throw ConfigError("model: semantic_dim must be >= 1");
  if (query_dim() % heads != 0) {
    throw ConfigError("model: query_dim " + std::to_string(query_dim()) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (blocks < 1) throw ConfigError("model: blocks must be >= 1");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) {
    throw ConfigError("model: mask_threshold must lie in (0,1)");
  }
  if (ffn_hidden < 1) throw ConfigError("model: ffn_hidden must be >= 1");
  if (num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
  if (backbone_dim < 1) throw ConfigError("model: backbone_dim must be >= 1");
  if (scale_mode != "multi" && scale_mode != "low_only" && scale_mode != "high_only") {
    throw ConfigError("model: scale_mode must be multi, low_only or high_only");
  }
}

std::string ModelConfig::echo() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "num_queries=%d semantic_dim=%d blocks=%d heads=%d mask_threshold=%.17g "
                "ffn_hidden=%d num_classes=%d backbone_dim=%d scale_mode=%s",
                num_queries, semantic_dim, blocks, heads, mask_threshold, ffn_hidden, num_classes,
                backbone_dim, scale_mode.c_str());
  return buf;
}

namespace {

void xavier_init(Parameter& p, Rng& rng) {
  // p is (out, in) for affine weights.
  const double bound = std::sqrt(6.0 / (p.tensor.rows + p.tensor.cols));
  for (double& v : p.tensor.data) v = rng.uniform(-bound, bound);
}

Parameter& affine(ParameterStore& store, const std::string& prefix, int out, int in, Rng& rng,
                  Parameter** w, Parameter** b) {
  *w = &store.create(prefix + ".weight", out, in);
  xavier_init(**w, rng);
  *b = &store.create(prefix + ".bias", 1, out);
  return **w;
}

void norm_params(ParameterStore& store, const std::string& prefix, int dim, Parameter** g, Parameter** b) {
  *g = &store.create(prefix + ".gain", 1, dim);
  for (double& v : (*g)->tensor.data) v = 1.0;
  *b = &store.create(prefix + ".bias", 1, dim);
}

AttentionHandles make_attention(ParameterStore& store, const std::string& prefix, int dim, Rng& rng) {
  AttentionHandles a;
  affine(store, prefix + ".proj_q", dim, dim, rng, &a.wq, &a.bq);
  affine(store, prefix + ".proj_k", dim, dim, rng, &a.wk, &a.bk);
  affine(store, prefix + ".proj_v", dim, dim, rng, &a.wv, &a.bv);
  affine(store, prefix + ".proj_out", dim, dim, rng, &a.wo, &a.bo);
  return a;
}

void wire_handles(Model& m) {
  ParameterStore& s = m.params;
  const ModelConfig& cfg = m.cfg;
  m.encoder.w1 = &s.get("encoder.l1.weight");
  m.encoder.b1 = &s.get("encoder.l1.bias");
  m.encoder.w2 = &s.get("encoder.l2.weight");
  m.encoder.b2 = &s.get("encoder.l2.bias");
  m.encoder.w3 = &s.get("encoder.l3.weight");
  m.encoder.b3 = &s.get("encoder.l3.bias");
  m.input_proj_w = &s.get("decoder.input_proj.weight");
  m.input_proj_b = &s.get("decoder.input_proj.bias");
  m.queries = &s.get("decoder.queries");
  m.blocks.resize(cfg.blocks);
  for (int l = 0; l < cfg.blocks; ++l) {
    const std::string p = "decoder.block" + std::to_string(l + 1);
    BlockHandles& b = m.blocks[l];
    auto att = [&](const std::string& stage) {
      AttentionHandles a;
      a.wq = &s.get(p + "." + stage + ".proj_q.weight");
      a.bq = &s.get(p + "." + stage + ".proj_q.bias");
      a.wk = &s.get(p + "." + stage + ".proj_k.weight");
      a.bk = &s.get(p + "." + stage + ".proj_k.bias");
      a.wv = &s.get(p + "." + stage + ".proj_v.weight");
      a.bv = &s.get(p + "." + stage + ".proj_v.bias");
      a.wo = &s.get(p + "." + stage + ".proj_out.weight");
      a.bo = &s.get(p + "." + stage + ".proj_out.bias");
      return a;
    };
    b.cross = att("cross");
    b.self = att("self");
    b.norm_cross_g = &s.get(p + ".norm_cross.gain");
    b.norm_cross_b = &s.get(p + ".norm_cross.bias");
    b.norm_self_g = &s.get(p + ".norm_self.gain");
    b.norm_self_b = &s.get(p + ".norm_self.bias");
    b.norm_ffn_g = &s.get(p + ".norm_ffn.gain");
    b.norm_ffn_b = &s.get(p + ".norm_ffn.bias");
    b.ffn_w1 = &s.get(p + ".ffn.l1.weight");
    b.ffn_b1 = &s.get(p + ".ffn.l1.bias");
    b.ffn_w2 = &s.get(p + ".ffn.l2.weight");
    b.ffn_b2 = &s.get(p + ".ffn.l2.bias");
  }
  m.heads.cls_w = &s.get("decoder.head.class.weight");
  m.heads.cls_b = &s.get("decoder.head.class.bias");
  m.heads.mask_score_w = &s.get("decoder.head.mask_score.weight");
  m.heads.mask_score_b = &s.get("decoder.head.mask_score.bias");
  m.heads.box_w = &s.get("decoder.head.box.weight");
  m.heads.box_b = &s.get("decoder.head.box.bias");
  m.heads.box_score_w = &s.get("decoder.head.box_score.weight");
  m.heads.box_score_b = &s.get("decoder.head.box_score.bias");
  m.regularizer.scene_semantic_w = &s.get("regularizer.scene_semantic.weight");
  m.regularizer.scene_semantic_b = &s.get("regularizer.scene_semantic.bias");
  m.regularizer.scene_box_w = &s.get("regularizer.scene_box.weight");
  m.regularizer.scene_box_b = &s.get("regularizer.scene_box.bias");
  m.regularizer.mask_affine_w = &s.get("regularizer.mask_affine.weight");
  m.regularizer.mask_affine_b = &s.get("regularizer.mask_affine.bias");
}

}  // namespace

Model build_model(const ModelConfig& cfg, Rng rng) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  ParameterStore& s = m.params;
  const int d = cfg.query_dim();

  Parameter *w, *b;
  affine(s, "encoder.l1", cfg.backbone_dim, kEncoderInputDim, rng, &w, &b);
  affine(s, "encoder.l2", cfg.backbone_dim, cfg.backbone_dim, rng, &w, &b);
  affine(s, "encoder.l3", cfg.backbone_dim, cfg.backbone_dim, rng, &w, &b);
  affine(s, "decoder.input_proj", d, cfg.backbone_dim, rng, &w, &b);

  Parameter& q = s.create("decoder.queries", cfg.num_queries, d);
  for (int i = 0; i < cfg.num_queries; ++i) {
    double* row = q.tensor.row_ptr(i);
    for (int j = 0; j < cfg.semantic_dim; ++j) row[j] = rng.normal(0.0, 0.02);
    // Box slice: the scene-normalized unit box.
    row[cfg.semantic_dim + 0] = 0.0;
    row[cfg.semantic_dim + 1] = 0.0;
    row[cfg.semantic_dim + 2] = 0.0;
    row[cfg.semantic_dim + 3] = 1.0;
    row[cfg.semantic_dim + 4] = 1.0;
    row[cfg.semantic_dim + 5] = 1.0;
  }

  for (int l = 1; l <= cfg.blocks; ++l) {
    const std::string p = "decoder.block" + std::to_string(l);
    make_attention(s, p + ".cross", d, rng);
    make_attention(s, p + ".self", d, rng);
    Parameter *g2, *b2;
    norm_params(s, p + ".norm_cross", d, &g2, &b2);
    norm_params(s, p + ".norm_self", d, &g2, &b2);
    norm_params(s, p + ".norm_ffn", d, &g2, &b2);
    affine(s, p + ".ffn.l1", cfg.ffn_hidden, d, rng, &w, &b);
    affine(s, p + ".ffn.l2", d, cfg.ffn_hidden, rng, &w, &b);
  }

  affine(s, "decoder.head.class", cfg.num_classes + 1, d, rng, &w, &b);
  affine(s, "decoder.head.mask_score", 1, d, rng, &w, &b);
  affine(s, "decoder.head.box", 6, d, rng, &w, &b);
  // A fresh model proposes the whole scene for every query.
  b->tensor.data = {0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
  affine(s, "decoder.head.box_score", 1, d, rng, &w, &b);

  affine(s, "regularizer.scene_semantic", cfg.semantic_dim, cfg.backbone_dim, rng, &w, &b);
  affine(s, "regularizer.scene_box", 6, cfg.backbone_dim, rng, &w, &b);
  affine(s, "regularizer.mask_affine", d, d, rng, &w, &b);

  wire_handles(m);
  return m;
}

Model model_from_store(const ModelConfig& cfg, ParameterStore&& store) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.params = std::move(store);
  wire_handles(m);
  return m;
}

std::vector<std::pair<std::string, long long>> parameter_groups(const Model& model) {
  std::vector<std::pair<std::string, long long>> groups = {
      {"Backbone Encoder", 0}, {"Input Projection", 0}, {"Query-related", 0}, {"Cross-attention", 0},
      {"Self-attention", 0},   {"Feedforward", 0},      {"Prediction Head", 0}};
  auto bucket = [&](const std::string& name) -> long long& {
    if (name.rfind("encoder.", 0) == 0) return groups[0].second;
    if (name.rfind("decoder.input_proj", 0) == 0) return groups[1].second;
    if (name == "decoder.queries") return groups[2].second;
    if (name.find(".cross.") != std::string::npos || name.find(".norm_cross.") != std::string::npos) {
      return groups[3].second;
    }
    if (name.find(".self.") != std::string::npos || name.find(".norm_self.") != std::string::npos) {
      return groups[4].second;
    }
    if (name.find(".ffn") != std::string::npos) return groups[5].second;
    return groups[6].second;  // prediction heads + regularizer
  };
  for (const auto& p : model.params.all()) {
    bucket(p.name) += static_cast<long long>(p.tensor.size());
  }
  return groups;
}

}  // namespace twinattn
