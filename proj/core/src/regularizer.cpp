#include "twinattn/regularizer.hpp"

namespace twinattn {

namespace {

Tensor2 affine_rows(const Tensor2& x, const Parameter& w, const Parameter& b) {
  Tensor2 out = matmul_nt(x, w.tensor);
  for (int i = 0; i < out.rows; ++i) {
    double* r = out.row_ptr(i);
    for (int j = 0; j < out.cols; ++j) r[j] += b.tensor.data[j];
  }
  return out;
}

}  // namespace

SceneWise scene_heads(const Tensor2& pooled_high, const RegularizerHandles& reg) {
  SceneWise sw;
  sw.semantic = affine_rows(pooled_high, *reg.scene_semantic_w, *reg.scene_semantic_b);
  sw.box = affine_rows(pooled_high, *reg.scene_box_w, *reg.scene_box_b);
  return sw;
}

RelPos relative_positions(const Tensor2& box_pred, const Tensor2& scene_box) {
  if (box_pred.cols != 6 || scene_box.cols != 6) {
    throw DimensionError("relative_positions: boxes must have 6 columns, got " + box_pred.shape_str() +
                         " and " + scene_box.shape_str());
  }
  RelPos rel;
  rel.per_query.reserve(box_pred.rows);
  for (int i = 0; i < box_pred.rows; ++i) {
    Tensor2 r(scene_box.rows, 6);
    const double* bi = box_pred.row_ptr(i);
    for (int j = 0; j < scene_box.rows; ++j) {
      const double* fb = scene_box.row_ptr(j);
      double* rr = r.row_ptr(j);
      for (int a = 0; a < 6; ++a) rr[a] = bi[a] - fb[a];
    }
    rel.per_query.push_back(std::move(r));
  }
  return rel;
}

Tensor2 regularized_masks(const RelPos& rel, const Tensor2& scene_semantic, const Tensor2& query_state,
                          const RegularizerHandles& reg) {
  const int n_q = rel.num_queries();
  const int n_h = scene_semantic.rows;
  const int d_s = scene_semantic.cols;
  const int d_o = query_state.cols;
  if (6 + d_s != d_o) {
    throw DimensionError("regularized_masks: width 6+" + std::to_string(d_s) + " != query dim " +
                         std::to_string(d_o));
  }
  if (query_state.rows != n_q) throw DimensionError("regularized_masks: query count mismatch");
  const Tensor2& w = reg.mask_affine_w->tensor;  // (D_o, D_o)
  const Tensor2& b = reg.mask_affine_b->tensor;
  Tensor2 logits(n_q, n_h);
  Tensor2 cat(n_h, d_o);
  for (int i = 0; i < n_q; ++i) {
    const Tensor2& r = rel.per_query[i];
    for (int j = 0; j < n_h; ++j) {
      double* cr = cat.row_ptr(j);
      const double* rr = r.row_ptr(j);
      for (int a = 0; a < 6; ++a) cr[a] = rr[a];
      const double* sr = scene_semantic.row_ptr(j);
      for (int a = 0; a < d_s; ++a) cr[6 + a] = sr[a];
    }
    Tensor2 e = matmul_nt(cat, w);
    const double* xq = query_state.row_ptr(i);
    double* lr = logits.row_ptr(i);
    for (int j = 0; j < n_h; ++j) {
      const double* er = e.row_ptr(j);
      double acc = 0.0;
      for (int a = 0; a < d_o; ++a) acc += (er[a] + b.data[a]) * xq[a];
      lr[j] = acc;
    }
  }
  return logits;
}

SceneWiseValues scene_heads_tape(Tape& tape, Value pooled_high, const RegularizerHandles& reg) {
  SceneWiseValues sw;
  sw.semantic = tape.linear(pooled_high, tape.param(*reg.scene_semantic_w), tape.param(*reg.scene_semantic_b));
  sw.box = tape.linear(pooled_high, tape.param(*reg.scene_box_w), tape.param(*reg.scene_box_b));

  // Split the shared affine map by input feature: the first six columns act
  // on positions, the rest on F_m. G = F_m W_F^T - F_b W_R^T + bias.
  const int d_o = reg.mask_affine_w->tensor.rows;
  Value w_r = tape.slice_cols(tape.param(*reg.mask_affine_w), 0, 6);
  Value w_f = tape.slice_cols(tape.param(*reg.mask_affine_w), 6, d_o - 6);
  Value g = tape.sub(tape.matmul_nt(sw.semantic, w_f), tape.matmul_nt(sw.box, w_r));
  sw.gain = tape.add_row_broadcast(g, tape.param(*reg.mask_affine_b));
  return sw;
}

Value regularized_mask_logits(Tape& tape, Value box_pred, Value query_state, const SceneWiseValues& scene,
                              const RegularizerHandles& reg) {
  Value w_r = tape.slice_cols(tape.param(*reg.mask_affine_w), 0, 6);
  Value q = tape.matmul_nt(box_pred, w_r);                 // N_o x D_o
  Value self_term = tape.rowwise_dot(q, query_state);      // N_o x 1
  Value cross = tape.matmul_nt(query_state, scene.gain);   // N_o x N_h
  return tape.add_col_broadcast(cross, self_term);
}

}  // namespace twinattn
