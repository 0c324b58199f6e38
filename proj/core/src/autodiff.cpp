#include "twinattn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace twinattn {

Parameter& ParameterStore::create(const std::string& name, int rows, int cols) {
  if (index_.count(name)) throw ConfigError("parameter name already exists: " + name);
  params_.emplace_back(name, rows, cols);
  index_[name] = params_.size() - 1;
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no such parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no such parameter: " + name);
  return params_[it->second];
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

long long ParameterStore::total_values() const {
  long long n = 0;
  for (const auto& p : params_) n += static_cast<long long>(p.tensor.size());
  return n;
}

Value Tape::push(Tensor2 val, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  return Value{id, nodes_[id].val.rows, nodes_[id].val.cols};
}

Tensor2& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor2(n.val.rows, n.val.cols);
  return n.grad;
}

void Tape::accumulate(int id, const Tensor2& g) {
  Tensor2& dst = grad_ref(id);
  require_same_shape(dst, g, "grad accumulate");
  for (size_t i = 0; i < g.data.size(); ++i) dst.data[i] += g.data[i];
}

bool Tape::has_grad(int id) const { return !nodes_[id].grad.data.empty(); }

const Tensor2& Tape::val_of(Value v) const { return nodes_[v.id].val; }

const Tensor2& Tape::value(Value v) const {
  if (!v.valid()) throw NumericError("Tape::value on invalid handle");
  return nodes_[v.id].val;
}

const Tensor2& Tape::grad(Value v) const {
  if (!v.valid() || nodes_[v.id].grad.data.empty()) {
    static const Tensor2 empty;
    return empty;
  }
  return nodes_[v.id].grad;
}

double Tape::scalar(Value v) const {
  const Tensor2& t = value(v);
  if (t.rows != 1 || t.cols != 1) throw DimensionError("scalar() on non-1x1 value " + t.shape_str());
  return t.data[0];
}

void Tape::reset() {
  nodes_.clear();
  param_leaves_.clear();
}

Value Tape::leaf(Tensor2 v, bool needs_grad) { return push(std::move(v), needs_grad, nullptr); }

Value Tape::param(Parameter& p) {
  Value v = push(p.tensor, p.trainable, nullptr);
  if (p.trainable) param_leaves_.emplace_back(&p, v.id);
  return v;
}

void Tape::backward(Value loss) {
  const Tensor2& l = value(loss);
  if (l.rows != 1 || l.cols != 1) throw DimensionError("backward: loss must be 1x1, got " + l.shape_str());
  if (!std::isfinite(l.data[0])) throw NumericError("backward: loss is not finite");
  grad_ref(loss.id).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || !n.back || n.grad.data.empty()) continue;
    n.back(*this, id);
  }
  for (auto& [p, id] : param_leaves_) {
    if (!has_grad(id)) continue;
    const Tensor2& g = nodes_[id].grad;
    for (size_t i = 0; i < g.data.size(); ++i) p->grad.data[i] += g.data[i];
  }
}

Value Tape::matmul(Value a, Value b) {
  Tensor2 out;
  mm(val_of(a), val_of(b), out);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(a)) {
      Tensor2 da;
      mm_nt(go, t.val_of(b), da);
      t.accumulate(a.id, da);
    }
    if (t.needs(b)) {
      Tensor2 db;
      mm_tn(t.val_of(a), go, db);
      t.accumulate(b.id, db);
    }
  });
}

Value Tape::matmul_nt(Value a, Value b) {
  Tensor2 out;
  mm_nt(val_of(a), val_of(b), out);
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(a)) {
      Tensor2 da;
      mm(go, t.val_of(b), da);
      t.accumulate(a.id, da);
    }
    if (t.needs(b)) {
      Tensor2 db;
      mm_tn(go, t.val_of(a), db);
      t.accumulate(b.id, db);
    }
  });
}

Value Tape::add(Value a, Value b) {
  require_same_shape(val_of(a), val_of(b), "add");
  Tensor2 out = val_of(a);
  const Tensor2& bv = val_of(b);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(a)) t.accumulate(a.id, go);
    if (t.needs(b)) t.accumulate(b.id, go);
  });
}

Value Tape::sub(Value a, Value b) {
  require_same_shape(val_of(a), val_of(b), "sub");
  Tensor2 out = val_of(a);
  const Tensor2& bv = val_of(b);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(a)) t.accumulate(a.id, go);
    if (t.needs(b)) {
      Tensor2 neg = go;
      for (double& v : neg.data) v = -v;
      t.accumulate(b.id, neg);
    }
  });
}

Value Tape::mul(Value a, Value b) {
  require_same_shape(val_of(a), val_of(b), "mul");
  Tensor2 out = val_of(a);
  const Tensor2& bv = val_of(b);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(a)) {
      Tensor2 da = go;
      const Tensor2& bv2 = t.val_of(b);
      for (size_t i = 0; i < da.data.size(); ++i) da.data[i] *= bv2.data[i];
      t.accumulate(a.id, da);
    }
    if (t.needs(b)) {
      Tensor2 db = go;
      const Tensor2& av = t.val_of(a);
      for (size_t i = 0; i < db.data.size(); ++i) db.data[i] *= av.data[i];
      t.accumulate(b.id, db);
    }
  });
}

Value Tape::scale(Value a, double c) {
  Tensor2 out = val_of(a);
  for (double& v : out.data) v *= c;
  return push(std::move(out), needs(a), [a, c](Tape& t, int self) {
    if (!t.needs(a)) return;
    Tensor2 da = t.out_grad(self);
    for (double& v : da.data) v *= c;
    t.accumulate(a.id, da);
  });
}

Value Tape::add_const(Value a, double c) {
  Tensor2 out = val_of(a);
  for (double& v : out.data) v += c;
  return push(std::move(out), needs(a), [a](Tape& t, int self) {
    if (t.needs(a)) t.accumulate(a.id, t.out_grad(self));
  });
}

Value Tape::linear(Value x, Value w, Value b) {
  const Tensor2& xv = val_of(x);
  const Tensor2& wv = val_of(w);
  const Tensor2& bv = val_of(b);
  if (xv.cols != wv.cols) {
    throw DimensionError("linear: input width " + xv.shape_str() + " vs weight " + wv.shape_str());
  }
  if (bv.rows != 1 || bv.cols != wv.rows) {
    throw DimensionError("linear: bias " + bv.shape_str() + " vs weight " + wv.shape_str());
  }
  Tensor2 out;
  mm_nt(xv, wv, out);
  for (int i = 0; i < out.rows; ++i) {
    double* row = out.row_ptr(i);
    for (int j = 0; j < out.cols; ++j) row[j] += bv.data[j];
  }
  return push(std::move(out), needs(x) || needs(w) || needs(b), [x, w, b](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(x)) {
      Tensor2 dx;
      mm(go, t.val_of(w), dx);
      t.accumulate(x.id, dx);
    }
    if (t.needs(w)) {
      Tensor2 dw;
      mm_tn(go, t.val_of(x), dw);
      t.accumulate(w.id, dw);
    }
    if (t.needs(b)) {
      Tensor2 db(1, go.cols);
      for (int i = 0; i < go.rows; ++i) {
        const double* row = go.row_ptr(i);
        for (int j = 0; j < go.cols; ++j) db.data[j] += row[j];
      }
      t.accumulate(b.id, db);
    }
  });
}

Value Tape::relu(Value x) {
  Tensor2 out = val_of(x);
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    Tensor2 dx = t.out_grad(self);
    const Tensor2& xv = t.val_of(x);
    for (size_t i = 0; i < dx.data.size(); ++i) {
      if (xv.data[i] <= 0.0) dx.data[i] = 0.0;
    }
    t.accumulate(x.id, dx);
  });
}

Value Tape::gelu(Value x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor2 out = val_of(x);
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    Tensor2 dx = t.out_grad(self);
    const Tensor2& xv = t.val_of(x);
    for (size_t i = 0; i < dx.data.size(); ++i) {
      const double v = xv.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dx.data[i] *= cdf + v * pdf;
    }
    t.accumulate(x.id, dx);
  });
}

Value Tape::sigmoid(Value x) {
  Tensor2 out = val_of(x);
  for (double& v : out.data) v = twinattn::sigmoid(v);
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    Tensor2 dx = t.out_grad(self);
    const Tensor2& s = t.nodes_[self].val;
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= s.data[i] * (1.0 - s.data[i]);
    t.accumulate(x.id, dx);
  });
}

Value Tape::abs(Value x) {
  Tensor2 out = val_of(x);
  for (double& v : out.data) v = std::fabs(v);
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    Tensor2 dx = t.out_grad(self);
    const Tensor2& xv = t.val_of(x);
    for (size_t i = 0; i < dx.data.size(); ++i) {
      dx.data[i] *= (xv.data[i] > 0.0) ? 1.0 : (xv.data[i] < 0.0 ? -1.0 : 0.0);
    }
    t.accumulate(x.id, dx);
  });
}

namespace {

// dx = y .* (dy - rowdot(y, dy)) per row, for y = softmax(row).
void softmax_backward_row(const double* y, const double* dy, double* dx, int n) {
  double dot = 0.0;
  for (int j = 0; j < n; ++j) dot += y[j] * dy[j];
  for (int j = 0; j < n; ++j) dx[j] = y[j] * (dy[j] - dot);
}

}  // namespace

Value Tape::row_softmax(Value x) {
  Tensor2 out = twinattn::row_softmax(val_of(x));
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    const Tensor2& y = t.nodes_[self].val;
    const Tensor2& go = t.out_grad(self);
    Tensor2 dx(y.rows, y.cols);
    for (int i = 0; i < y.rows; ++i) softmax_backward_row(y.row_ptr(i), go.row_ptr(i), dx.row_ptr(i), y.cols);
    t.accumulate(x.id, dx);
  });
}

Value Tape::row_softmax_bias(Value x, const Tensor2& bias) {
  Tensor2 out = twinattn::row_softmax_bias(val_of(x), bias);
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    const Tensor2& y = t.nodes_[self].val;
    const Tensor2& go = t.out_grad(self);
    Tensor2 dx(y.rows, y.cols);
    for (int i = 0; i < y.rows; ++i) softmax_backward_row(y.row_ptr(i), go.row_ptr(i), dx.row_ptr(i), y.cols);
    t.accumulate(x.id, dx);
  });
}

Value Tape::layer_norm(Value x, Value gain, Value bias, double eps) {
  const Tensor2& xv = val_of(x);
  const Tensor2& gv = val_of(gain);
  const Tensor2& bv = val_of(bias);
  Tensor2 out = twinattn::layer_norm(xv, gv, bv, eps);
  // Stash (xhat, inv_sigma) for the backward pass.
  auto xhat = std::make_shared<Tensor2>(xv.rows, xv.cols);
  auto inv_sigma = std::make_shared<std::vector<double>>(xv.rows);
  const int d = xv.cols;
  for (int i = 0; i < xv.rows; ++i) {
    const double* xr = xv.row_ptr(i);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = inv;
    double* hr = xhat->row_ptr(i);
    for (int j = 0; j < d; ++j) hr[j] = (xr[j] - mean) * inv;
  }
  return push(std::move(out), needs(x) || needs(gain) || needs(bias),
              [x, gain, bias, xhat, inv_sigma](Tape& t, int self) {
                const Tensor2& go = t.out_grad(self);
                const Tensor2& gv2 = t.val_of(gain);
                const int d2 = go.cols;
                if (t.needs(x)) {
                  Tensor2 dx(go.rows, go.cols);
                  for (int i = 0; i < go.rows; ++i) {
                    const double* gr = go.row_ptr(i);
                    const double* hr = xhat->row_ptr(i);
                    double* dr = dx.row_ptr(i);
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < d2; ++j) {
                      const double dh = gr[j] * gv2.data[j];
                      m1 += dh;
                      m2 += dh * hr[j];
                    }
                    m1 /= d2;
                    m2 /= d2;
                    const double inv = (*inv_sigma)[i];
                    for (int j = 0; j < d2; ++j) {
                      const double dh = gr[j] * gv2.data[j];
                      dr[j] = inv * (dh - m1 - hr[j] * m2);
                    }
                  }
                  t.accumulate(x.id, dx);
                }
                if (t.needs(gain)) {
                  Tensor2 dg(1, d2);
                  for (int i = 0; i < go.rows; ++i) {
                    const double* gr = go.row_ptr(i);
                    const double* hr = xhat->row_ptr(i);
                    for (int j = 0; j < d2; ++j) dg.data[j] += gr[j] * hr[j];
                  }
                  t.accumulate(gain.id, dg);
                }
                if (t.needs(bias)) {
                  Tensor2 db(1, d2);
                  for (int i = 0; i < go.rows; ++i) {
                    const double* gr = go.row_ptr(i);
                    for (int j = 0; j < d2; ++j) db.data[j] += gr[j];
                  }
                  t.accumulate(bias.id, db);
                }
              });
}

Value Tape::multihead_attention(Value q, Value k, Value v, const Tensor2* bias, int heads) {
  const Tensor2& qv = val_of(q);
  const Tensor2& kv = val_of(k);
  const Tensor2& vv = val_of(v);
  if (qv.cols != kv.cols || kv.cols != vv.cols || kv.rows != vv.rows) {
    throw DimensionError("attention: incompatible q" + qv.shape_str() + " k" + kv.shape_str() + " v" +
                         vv.shape_str());
  }
  if (heads <= 0 || qv.cols % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(qv.cols) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (bias && (bias->rows != qv.rows || bias->cols != kv.rows)) {
    throw DimensionError("attention: bias " + bias->shape_str() + " vs scores (" + std::to_string(qv.rows) +
                         "x" + std::to_string(kv.rows) + ")");
  }
  const int nq = qv.rows, nk = kv.rows, d = qv.cols / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor2 out(nq, qv.cols);
  // Per-head softmax weights, kept for the backward pass.
  auto weights = std::make_shared<std::vector<Tensor2>>();
  weights->reserve(heads);
  std::vector<double> scores(nk);
  for (int h = 0; h < heads; ++h) {
    const int c0 = h * d;
    Tensor2 w(nq, nk);
    for (int i = 0; i < nq; ++i) {
      const double* qr = qv.row_ptr(i) + c0;
      for (int j = 0; j < nk; ++j) {
        const double* kr = kv.row_ptr(j) + c0;
        double acc = 0.0;
        for (int t = 0; t < d; ++t) acc += qr[t] * kr[t];
        scores[j] = acc * inv_sqrt_d;
      }
      softmax_rows_kernel(scores.data(), bias ? bias->row_ptr(i) : nullptr, w.row_ptr(i), nk);
      double* orow = out.row_ptr(i) + c0;
      const double* wr = w.row_ptr(i);
      for (int j = 0; j < nk; ++j) {
        const double wij = wr[j];
        if (wij == 0.0) continue;
        const double* vr = vv.row_ptr(j) + c0;
        for (int t = 0; t < d; ++t) orow[t] += wij * vr[t];
      }
    }
    weights->push_back(std::move(w));
  }
  const bool ng = needs(q) || needs(k) || needs(v);
  return push(std::move(out), ng, [q, k, v, heads, d, inv_sqrt_d, weights](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    const Tensor2& qv2 = t.val_of(q);
    const Tensor2& kv2 = t.val_of(k);
    const Tensor2& vv2 = t.val_of(v);
    const int nq = qv2.rows, nk = kv2.rows;
    Tensor2 dq(nq, qv2.cols), dk(nk, kv2.cols), dv(nk, vv2.cols);
    std::vector<double> dscore(nk);
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * d;
      const Tensor2& w = (*weights)[h];
      for (int i = 0; i < nq; ++i) {
        const double* gr = go.row_ptr(i) + c0;
        const double* wr = w.row_ptr(i);
        // dV += w^T dOut ; dW = dOut V^T
        double dot = 0.0;
        for (int j = 0; j < nk; ++j) {
          const double* vr = vv2.row_ptr(j) + c0;
          double dwij = 0.0;
          for (int tt = 0; tt < d; ++tt) dwij += gr[tt] * vr[tt];
          dscore[j] = dwij;
          dot += dwij * wr[j];
          if (wr[j] != 0.0) {
            double* dvr = dv.row_ptr(j) + c0;
            for (int tt = 0; tt < d; ++tt) dvr[tt] += wr[j] * gr[tt];
          }
        }
        // softmax backward then distribute to q and k.
        double* dqr = dq.row_ptr(i) + c0;
        const double* qr = qv2.row_ptr(i) + c0;
        for (int j = 0; j < nk; ++j) {
          const double ds = wr[j] * (dscore[j] - dot) * inv_sqrt_d;
          if (ds == 0.0) continue;
          const double* kr = kv2.row_ptr(j) + c0;
          double* dkr = dk.row_ptr(j) + c0;
          for (int tt = 0; tt < d; ++tt) {
            dqr[tt] += ds * kr[tt];
            dkr[tt] += ds * qr[tt];
          }
        }
      }
    }
    if (t.needs(q)) t.accumulate(q.id, dq);
    if (t.needs(k)) t.accumulate(k.id, dk);
    if (t.needs(v)) t.accumulate(v.id, dv);
  });
}

Value Tape::segment_mean(Value x, const std::vector<int>& assign, int num_segments) {
  const Tensor2& xv = val_of(x);
  if (static_cast<int>(assign.size()) != xv.rows) {
    throw DimensionError("segment_mean: assignment length " + std::to_string(assign.size()) + " vs rows " +
                         std::to_string(xv.rows));
  }
  auto counts = std::make_shared<std::vector<int>>(num_segments, 0);
  for (int id : assign) {
    if (id < 0 || id >= num_segments) throw PartitionError("segment_mean: id out of range");
    ++(*counts)[id];
  }
  for (int s = 0; s < num_segments; ++s) {
    if ((*counts)[s] == 0) throw PartitionError("segment_mean: empty segment " + std::to_string(s));
  }
  Tensor2 out(num_segments, xv.cols);
  for (int i = 0; i < xv.rows; ++i) {
    const double* xr = xv.row_ptr(i);
    double* orow = out.row_ptr(assign[i]);
    for (int j = 0; j < xv.cols; ++j) orow[j] += xr[j];
  }
  for (int s = 0; s < num_segments; ++s) {
    double* orow = out.row_ptr(s);
    const double inv = 1.0 / (*counts)[s];
    for (int j = 0; j < xv.cols; ++j) orow[j] *= inv;
  }
  auto assign_copy = std::make_shared<std::vector<int>>(assign);
  return push(std::move(out), needs(x), [x, counts, assign_copy](Tape& t, int self) {
    if (!t.needs(x)) return;
    const Tensor2& go = t.out_grad(self);
    const Tensor2& xv2 = t.val_of(x);
    Tensor2 dx(xv2.rows, xv2.cols);
    for (int i = 0; i < xv2.rows; ++i) {
      const int s = (*assign_copy)[i];
      const double inv = 1.0 / (*counts)[s];
      const double* gr = go.row_ptr(s);
      double* dr = dx.row_ptr(i);
      for (int j = 0; j < xv2.cols; ++j) dr[j] = gr[j] * inv;
    }
    t.accumulate(x.id, dx);
  });
}

Value Tape::gather_rows(Value x, std::vector<int> rows) {
  const Tensor2& xv = val_of(x);
  Tensor2 out(static_cast<int>(rows.size()), xv.cols);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= xv.rows) throw DimensionError("gather_rows: index out of range");
    std::copy(xv.row_ptr(rows[r]), xv.row_ptr(rows[r]) + xv.cols, out.row_ptr(static_cast<int>(r)));
  }
  auto idx = std::make_shared<std::vector<int>>(std::move(rows));
  return push(std::move(out), needs(x), [x, idx](Tape& t, int self) {
    if (!t.needs(x)) return;
    const Tensor2& go = t.out_grad(self);
    const Tensor2& xv2 = t.val_of(x);
    Tensor2 dx(xv2.rows, xv2.cols);
    for (size_t r = 0; r < idx->size(); ++r) {
      const double* gr = go.row_ptr(static_cast<int>(r));
      double* dr = dx.row_ptr((*idx)[r]);
      for (int j = 0; j < xv2.cols; ++j) dr[j] += gr[j];
    }
    t.accumulate(x.id, dx);
  });
}

Value Tape::slice_cols(Value x, int c0, int len) {
  const Tensor2& xv = val_of(x);
  if (c0 < 0 || len <= 0 || c0 + len > xv.cols) throw DimensionError("slice_cols: range out of bounds");
  Tensor2 out(xv.rows, len);
  for (int i = 0; i < xv.rows; ++i) {
    std::copy(xv.row_ptr(i) + c0, xv.row_ptr(i) + c0 + len, out.row_ptr(i));
  }
  return push(std::move(out), needs(x), [x, c0, len](Tape& t, int self) {
    if (!t.needs(x)) return;
    const Tensor2& go = t.out_grad(self);
    const Tensor2& xv2 = t.val_of(x);
    Tensor2 dx(xv2.rows, xv2.cols);
    for (int i = 0; i < xv2.rows; ++i) {
      std::copy(go.row_ptr(i), go.row_ptr(i) + len, dx.row_ptr(i) + c0);
    }
    t.accumulate(x.id, dx);
  });
}

Value Tape::concat_cols(Value a, Value b) {
  const Tensor2& av = val_of(a);
  const Tensor2& bv = val_of(b);
  if (av.rows != bv.rows) throw DimensionError("concat_cols: row mismatch " + av.shape_str() + " vs " + bv.shape_str());
  Tensor2 out(av.rows, av.cols + bv.cols);
  for (int i = 0; i < av.rows; ++i) {
    std::copy(av.row_ptr(i), av.row_ptr(i) + av.cols, out.row_ptr(i));
    std::copy(bv.row_ptr(i), bv.row_ptr(i) + bv.cols, out.row_ptr(i) + av.cols);
  }
  const int ac = av.cols, bc = bv.cols;
  return push(std::move(out), needs(a) || needs(b), [a, b, ac, bc](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(a)) {
      Tensor2 da(go.rows, ac);
      for (int i = 0; i < go.rows; ++i) std::copy(go.row_ptr(i), go.row_ptr(i) + ac, da.row_ptr(i));
      t.accumulate(a.id, da);
    }
    if (t.needs(b)) {
      Tensor2 db(go.rows, bc);
      for (int i = 0; i < go.rows; ++i) std::copy(go.row_ptr(i) + ac, go.row_ptr(i) + ac + bc, db.row_ptr(i));
      t.accumulate(b.id, db);
    }
  });
}

Value Tape::sum_all(Value x) {
  const Tensor2& xv = val_of(x);
  double s = 0.0;
  for (double v : xv.data) s += v;
  return push(Tensor2::scalar(s), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    const double g = t.out_grad(self).data[0];
    const Tensor2& xv2 = t.val_of(x);
    Tensor2 dx(xv2.rows, xv2.cols);
    std::fill(dx.data.begin(), dx.data.end(), g);
    t.accumulate(x.id, dx);
  });
}

Value Tape::row_sums(Value x) {
  const Tensor2& xv = val_of(x);
  Tensor2 out(xv.rows, 1);
  for (int i = 0; i < xv.rows; ++i) {
    const double* xr = xv.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < xv.cols; ++j) s += xr[j];
    out.data[i] = s;
  }
  return push(std::move(out), needs(x), [x](Tape& t, int self) {
    if (!t.needs(x)) return;
    const Tensor2& go = t.out_grad(self);
    const Tensor2& xv2 = t.val_of(x);
    Tensor2 dx(xv2.rows, xv2.cols);
    for (int i = 0; i < xv2.rows; ++i) {
      double* dr = dx.row_ptr(i);
      for (int j = 0; j < xv2.cols; ++j) dr[j] = go.data[i];
    }
    t.accumulate(x.id, dx);
  });
}

Value Tape::rowwise_dot(Value a, Value b) {
  require_same_shape(val_of(a), val_of(b), "rowwise_dot");
  const Tensor2& av = val_of(a);
  const Tensor2& bv = val_of(b);
  Tensor2 out(av.rows, 1);
  for (int i = 0; i < av.rows; ++i) {
    const double* ar = av.row_ptr(i);
    const double* br = bv.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < av.cols; ++j) s += ar[j] * br[j];
    out.data[i] = s;
  }
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    const Tensor2& av2 = t.val_of(a);
    const Tensor2& bv2 = t.val_of(b);
    if (t.needs(a)) {
      Tensor2 da(av2.rows, av2.cols);
      for (int i = 0; i < av2.rows; ++i) {
        const double g = go.data[i];
        const double* br = bv2.row_ptr(i);
        double* dr = da.row_ptr(i);
        for (int j = 0; j < av2.cols; ++j) dr[j] = g * br[j];
      }
      t.accumulate(a.id, da);
    }
    if (t.needs(b)) {
      Tensor2 db(bv2.rows, bv2.cols);
      for (int i = 0; i < bv2.rows; ++i) {
        const double g = go.data[i];
        const double* ar = av2.row_ptr(i);
        double* dr = db.row_ptr(i);
        for (int j = 0; j < bv2.cols; ++j) dr[j] = g * ar[j];
      }
      t.accumulate(b.id, db);
    }
  });
}

Value Tape::add_col_broadcast(Value m, Value col) {
  const Tensor2& mv = val_of(m);
  const Tensor2& cv = val_of(col);
  if (cv.cols != 1 || cv.rows != mv.rows) {
    throw DimensionError("add_col_broadcast: column " + cv.shape_str() + " vs matrix " + mv.shape_str());
  }
  Tensor2 out = mv;
  for (int i = 0; i < mv.rows; ++i) {
    double* orow = out.row_ptr(i);
    const double c = cv.data[i];
    for (int j = 0; j < mv.cols; ++j) orow[j] += c;
  }
  return push(std::move(out), needs(m) || needs(col), [m, col](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(m)) t.accumulate(m.id, go);
    if (t.needs(col)) {
      Tensor2 dc(go.rows, 1);
      for (int i = 0; i < go.rows; ++i) {
        const double* gr = go.row_ptr(i);
        double s = 0.0;
        for (int j = 0; j < go.cols; ++j) s += gr[j];
        dc.data[i] = s;
      }
      t.accumulate(col.id, dc);
    }
  });
}

Value Tape::add_row_broadcast(Value m, Value row) {
  const Tensor2& mv = val_of(m);
  const Tensor2& rv = val_of(row);
  if (rv.rows != 1 || rv.cols != mv.cols) {
    throw DimensionError("add_row_broadcast: row " + rv.shape_str() + " vs matrix " + mv.shape_str());
  }
  Tensor2 out = mv;
  for (int i = 0; i < mv.rows; ++i) {
    double* orow = out.row_ptr(i);
    for (int j = 0; j < mv.cols; ++j) orow[j] += rv.data[j];
  }
  return push(std::move(out), needs(m) || needs(row), [m, row](Tape& t, int self) {
    const Tensor2& go = t.out_grad(self);
    if (t.needs(m)) t.accumulate(m.id, go);
    if (t.needs(row)) {
      Tensor2 dr(1, go.cols);
      for (int i = 0; i < go.rows; ++i) {
        const double* gr = go.row_ptr(i);
        for (int j = 0; j < go.cols; ++j) dr.data[j] += gr[j];
      }
      t.accumulate(row.id, dr);
    }
  });
}

Value Tape::cross_entropy_rows(Value logits, const std::vector<int>& targets, const std::vector<double>& row_w) {
  const Tensor2& lv = val_of(logits);
  if (static_cast<int>(targets.size()) != lv.rows || row_w.size() != targets.size()) {
    throw DimensionError("cross_entropy_rows: targets/weights length vs logits rows");
  }
  double loss = 0.0;
  for (int i = 0; i < lv.rows; ++i) {
    const int tgt = targets[i];
    if (tgt < 0 || tgt >= lv.cols) throw DimensionError("cross_entropy_rows: target out of range");
    const double* lr = lv.row_ptr(i);
    double maxv = lr[0];
    for (int j = 1; j < lv.cols; ++j) maxv = std::max(maxv, lr[j]);
    double lse = 0.0;
    for (int j = 0; j < lv.cols; ++j) lse += std::exp(lr[j] - maxv);
    lse = maxv + std::log(lse);
    loss += row_w[i] * (lse - lr[tgt]);
  }
  auto tg = std::make_shared<std::vector<int>>(targets);
  auto ws = std::make_shared<std::vector<double>>(row_w);
  return push(Tensor2::scalar(loss), needs(logits), [logits, tg, ws](Tape& t, int self) {
    if (!t.needs(logits)) return;
    const double g = t.out_grad(self).data[0];
    const Tensor2& lv2 = t.val_of(logits);
    Tensor2 dx(lv2.rows, lv2.cols);
    for (int i = 0; i < lv2.rows; ++i) {
      softmax_rows_kernel(lv2.row_ptr(i), nullptr, dx.row_ptr(i), lv2.cols);
      double* dr = dx.row_ptr(i);
      dr[(*tg)[i]] -= 1.0;
      const double w = g * (*ws)[i];
      for (int j = 0; j < lv2.cols; ++j) dr[j] *= w;
    }
    t.accumulate(logits.id, dx);
  });
}

Value Tape::bce_with_logits(Value logits, const Tensor2& targets, const std::vector<double>& row_w) {
  const Tensor2& lv = val_of(logits);
  require_same_shape(lv, targets, "bce_with_logits");
  if (static_cast<int>(row_w.size()) != lv.rows) throw DimensionError("bce_with_logits: weights length");
  double loss = 0.0;
  const double inv_m = 1.0 / lv.cols;
  for (int i = 0; i < lv.rows; ++i) {
    const double* lr = lv.row_ptr(i);
    const double* tr = targets.row_ptr(i);
    double rl = 0.0;
    for (int j = 0; j < lv.cols; ++j) {
      const double x = lr[j];
      rl += std::max(x, 0.0) - x * tr[j] + std::log1p(std::exp(-std::fabs(x)));
    }
    loss += row_w[i] * rl * inv_m;
  }
  auto tgt = std::make_shared<Tensor2>(targets);
  auto ws = std::make_shared<std::vector<double>>(row_w);
  return push(Tensor2::scalar(loss), needs(logits), [logits, tgt, ws, inv_m](Tape& t, int self) {
    if (!t.needs(logits)) return;
    const double g = t.out_grad(self).data[0];
    const Tensor2& lv2 = t.val_of(logits);
    Tensor2 dx(lv2.rows, lv2.cols);
    for (int i = 0; i < lv2.rows; ++i) {
      const double w = g * (*ws)[i] * inv_m;
      const double* lr = lv2.row_ptr(i);
      const double* tr = tgt->row_ptr(i);
      double* dr = dx.row_ptr(i);
      for (int j = 0; j < lv2.cols; ++j) dr[j] = w * (twinattn::sigmoid(lr[j]) - tr[j]);
    }
    t.accumulate(logits.id, dx);
  });
}

Value Tape::dice_cost_rows(Value logits, const Tensor2& targets, const std::vector<double>& row_w) {
  const Tensor2& lv = val_of(logits);
  require_same_shape(lv, targets, "dice_cost_rows");
  if (static_cast<int>(row_w.size()) != lv.rows) throw DimensionError("dice_cost_rows: weights length");
  double loss = 0.0;
  auto nums = std::make_shared<std::vector<double>>(lv.rows);
  auto dens = std::make_shared<std::vector<double>>(lv.rows);
  for (int i = 0; i < lv.rows; ++i) {
    const double* lr = lv.row_ptr(i);
    const double* tr = targets.row_ptr(i);
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (int j = 0; j < lv.cols; ++j) {
      const double p = twinattn::sigmoid(lr[j]);
      inter += p * tr[j];
      psum += p;
      gsum += tr[j];
    }
    const double num = 2.0 * inter + 1.0;
    const double den = psum + gsum + 1.0;
    (*nums)[i] = num;
    (*dens)[i] = den;
    loss += row_w[i] * (1.0 - num / den);
  }
  auto tgt = std::make_shared<Tensor2>(targets);
  auto ws = std::make_shared<std::vector<double>>(row_w);
  return push(Tensor2::scalar(loss), needs(logits), [logits, tgt, ws, nums, dens](Tape& t, int self) {
    if (!t.needs(logits)) return;
    const double g = t.out_grad(self).data[0];
    const Tensor2& lv2 = t.val_of(logits);
    Tensor2 dx(lv2.rows, lv2.cols);
    for (int i = 0; i < lv2.rows; ++i) {
      const double w = g * (*ws)[i];
      const double num = (*nums)[i];
      const double den = (*dens)[i];
      const double* lr = lv2.row_ptr(i);
      const double* tr = tgt->row_ptr(i);
      double* dr = dx.row_ptr(i);
      for (int j = 0; j < lv2.cols; ++j) {
        const double p = twinattn::sigmoid(lr[j]);
        // d(1 - num/den)/dp = -(2*t*den - num) / den^2
        dr[j] = -w * (2.0 * tr[j] * den - num) / (den * den) * p * (1.0 - p);
      }
    }
    t.accumulate(logits.id, dx);
  });
}

}  // namespace twinattn
