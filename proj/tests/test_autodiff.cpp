#include <cmath>
#include <limits>

#include "doctest.h"
#include "twinattn/autodiff.hpp"
#include "twinattn/grad_check.hpp"
#include "twinattn/rng.hpp"

using namespace twinattn;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void fill_random(Parameter& p, Rng& rng, double scale = 1.0) {
  for (double& v : p.tensor.data) v = rng.normal(0.0, scale);
}

Tensor2 random_tensor(Rng& rng, int r, int c, double scale = 1.0) {
  Tensor2 t(r, c);
  for (double& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("affine layer with squared error passes grad_check at 1e-6") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    ParameterStore store;
    Parameter& w = store.create("w", 4, 3);
    Parameter& b = store.create("b", 1, 4);
    fill_random(w, rng);
    fill_random(b, rng);
    const Tensor2 x = random_tensor(rng, 3, 3);
    const Tensor2 target = random_tensor(rng, 3, 4);

    auto loss_fn = [&](bool with_grad) {
      Tape tape;
      store.zero_grads();
      Value y = tape.linear(tape.constant(x), tape.param(w), tape.param(b));
      Value diff = tape.sub(y, tape.constant(target));
      Value loss = tape.sum_all(tape.mul(diff, diff));
      if (with_grad) tape.backward(loss);
      return tape.scalar(loss);
    };
    const auto report = grad_check(loss_fn, std::array<Parameter*, 2>{&w, &b}, 1e-6);
    CHECK_MESSAGE(report.pass, report.worst_param, " err=", report.max_rel_error);
  }
}

TEST_CASE("row_softmax with cross entropy passes grad_check at 1e-6") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 100);
    ParameterStore store;
    Parameter& logits = store.create("logits", 2, 5);
    fill_random(logits, rng);
    const std::vector<int> targets{1, 4};
    const std::vector<double> weights{0.5, 0.5};

    auto loss_fn = [&](bool with_grad) {
      Tape tape;
      store.zero_grads();
      Value loss = tape.cross_entropy_rows(tape.param(logits), targets, weights);
      if (with_grad) tape.backward(loss);
      return tape.scalar(loss);
    };
    const auto report = grad_check(loss_fn, std::array<Parameter*, 1>{&logits}, 1e-6);
    CHECK_MESSAGE(report.pass, "err=", report.max_rel_error);
  }
}

TEST_CASE("frozen parameter keeps a zero analytic gradient") {
  Rng rng(7);
  ParameterStore store;
  Parameter& w = store.create("w", 3, 3);
  Parameter& frozen = store.create("frozen", 3, 3);
  fill_random(w, rng);
  fill_random(frozen, rng);
  frozen.trainable = false;

  Tape tape;
  store.zero_grads();
  Value x = tape.constant(random_tensor(rng, 2, 3));
  Value h = tape.matmul(x, tape.param(w));
  Value h2 = tape.matmul(h, tape.param(frozen));  // constant leaf: no grad flows
  tape.backward(tape.sum_all(h2));
  for (double g : frozen.grad.data) CHECK(g == 0.0);
  double nonzero = 0.0;
  for (double g : w.grad.data) nonzero += std::fabs(g);
  CHECK(nonzero > 0.0);
}

TEST_CASE("every differentiable primitive passes grad_check on 10 seeds") {
  struct Case {
    const char* name;
    std::function<double(ParameterStore&, Rng&, bool)> run;
  };

  // Each case creates its own parameters on first use, then reuses them.
  auto build = [](ParameterStore& store, const char* name, int r, int c, Rng& rng) -> Parameter& {
    if (Parameter* p = store.find(name)) return *p;
    Parameter& p = store.create(name, r, c);
    for (double& v : p.tensor.data) v = rng.normal(0.0, 0.8);
    return p;
  };

  const std::vector<Case> cases = {
      {"matmul", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& a = build(s, "a", 3, 4, rng);
         Parameter& b = build(s, "b", 4, 2, rng);
         Tape t;
         s.zero_grads();
         Value y = t.matmul(t.param(a), t.param(b));
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"matmul_nt", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& a = build(s, "a", 3, 4, rng);
         Parameter& b = build(s, "c", 2, 4, rng);
         Tape t;
         s.zero_grads();
         Value y = t.matmul_nt(t.param(a), t.param(b));
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"layer_norm", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 3, 6, rng);
         Parameter& gain = build(s, "gain", 1, 6, rng);
         Parameter& bias = build(s, "bias", 1, 6, rng);
         Tape t;
         s.zero_grads();
         Value y = t.layer_norm(t.param(x), t.param(gain), t.param(bias));
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"softmax", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 3, 5, rng);
         Tape t;
         s.zero_grads();
         Value y = t.row_softmax(t.param(x));
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"masked softmax", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 3, 5, rng);
         Tensor2 bias(3, 5);
         bias.at(0, 1) = -kInf;
         bias.at(2, 4) = -kInf;
         Tape t;
         s.zero_grads();
         Value y = t.row_softmax_bias(t.param(x), bias);
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"attention", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& q = build(s, "q", 3, 8, rng);
         Parameter& k = build(s, "k", 5, 8, rng);
         Parameter& v = build(s, "v", 5, 8, rng);
         Tensor2 bias(3, 5);
         bias.at(1, 2) = -kInf;
         Tape t;
         s.zero_grads();
         Value y = t.multihead_attention(t.param(q), t.param(k), t.param(v), &bias, 2);
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"segment_mean", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 6, 3, rng);
         const std::vector<int> assign{0, 1, 1, 2, 0, 2};
         Tape t;
         s.zero_grads();
         Value y = t.segment_mean(t.param(x), assign, 3);
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"gather+slice+concat", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 5, 6, rng);
         Tape t;
         s.zero_grads();
         Value picked = t.gather_rows(t.param(x), {4, 0, 2, 0});
         Value left = t.slice_cols(picked, 0, 2);
         Value right = t.slice_cols(picked, 2, 4);
         Value y = t.concat_cols(right, left);
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"broadcast+rowwise", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& m = build(s, "m", 4, 5, rng);
         Parameter& a = build(s, "a2", 4, 5, rng);
         Parameter& row = build(s, "row", 1, 5, rng);
         Tape t;
         s.zero_grads();
         Value col = t.rowwise_dot(t.param(m), t.param(a));
         Value y = t.add_col_broadcast(t.param(m), col);
         Value z = t.add_row_broadcast(y, t.param(row));
         Value loss = t.sum_all(t.mul(z, z));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"row_sums", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 4, 5, rng);
         Tape t;
         s.zero_grads();
         Value y = t.row_sums(t.param(x));
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"activations", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 4, 4, rng);
         Tape t;
         s.zero_grads();
         Value y = t.add(t.sigmoid(t.param(x)), t.relu(t.scale(t.param(x), 0.7)));
         Value z = t.sub(y, t.abs(t.param(x)));
         Value loss = t.sum_all(t.mul(z, z));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"gelu", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 4, 4, rng);
         Tape t;
         s.zero_grads();
         Value y = t.gelu(t.param(x));
         Value loss = t.sum_all(t.mul(y, y));
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"bce", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 3, 6, rng);
         Tensor2 targets(3, 6);
         Rng tr(11);
         for (double& v : targets.data) v = tr.uniform() < 0.5 ? 0.0 : 1.0;
         Tape t;
         s.zero_grads();
         Value loss = t.bce_with_logits(t.param(x), targets, {0.4, 0.3, 0.3});
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
      {"dice", [&](ParameterStore& s, Rng& rng, bool g) {
         Parameter& x = build(s, "x", 3, 6, rng);
         Tensor2 targets(3, 6);
         Rng tr(13);
         for (double& v : targets.data) v = tr.uniform() < 0.5 ? 0.0 : 1.0;
         Tape t;
         s.zero_grads();
         Value loss = t.dice_cost_rows(t.param(x), targets, {0.4, 0.3, 0.3});
         if (g) t.backward(loss);
         return t.scalar(loss);
       }},
  };

  for (const auto& c : cases) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
      ParameterStore store;
      Rng rng(seed * 31 + 7);
      auto loss_fn = [&](bool with_grad) { return c.run(store, rng, with_grad); };
      loss_fn(false);  // materialize parameters deterministically
      std::vector<Parameter*> params;
      for (auto& p : store.all()) params.push_back(&p);
      const auto report = grad_check(loss_fn, params, 1e-4);
      CHECK_MESSAGE(report.pass, c.name, " seed=", seed, " worst=", report.worst_param,
                    " err=", report.max_rel_error, " failure=", report.failure);
    }
  }
}

TEST_CASE("tape forward is deterministic") {
  Rng rng(3);
  const Tensor2 x = random_tensor(rng, 4, 6);
  ParameterStore store;
  Parameter& w = store.create("w", 6, 6);
  fill_random(w, rng);
  auto run = [&]() {
    Tape t;
    Value y = t.multihead_attention(t.constant(x), t.constant(x), t.matmul(t.constant(x), t.param(w)), nullptr, 3);
    return t.value(y);
  };
  const Tensor2 a = run();
  const Tensor2 b = run();
  CHECK(a.max_abs_diff(b) == 0.0);
}
