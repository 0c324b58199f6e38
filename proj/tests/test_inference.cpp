#include <cmath>

#include "doctest.h"
#include "twinattn/evaluate.hpp"
#include "twinattn/losses.hpp"
#include "twinattn/rng.hpp"

using namespace twinattn;

namespace {

// Builds a FinalPrediction directly from probabilities.
FinalPrediction direct_prediction(const Tensor2& class_probs, const Tensor2& mask_probs,
                                  const std::vector<double>& mask_score,
                                  const std::vector<double>& box_score) {
  FinalPrediction fp;
  fp.class_probs = class_probs;
  fp.mask_probs = mask_probs;
  fp.mask_score = Tensor2(static_cast<int>(mask_score.size()), 1);
  fp.mask_score.data = mask_score;
  fp.box_score = Tensor2(static_cast<int>(box_score.size()), 1);
  fp.box_score.data = box_score;
  return fp;
}

}  // namespace

TEST_CASE("superpoint mask score: mean of probabilities above 0.5") {
  CHECK(superpoint_mask_score(std::vector<double>{0.9, 0.7, 0.1}) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(superpoint_mask_score(std::vector<double>{0.5, 0.2, 0.0}) == 0.0);
  CHECK(superpoint_mask_score(std::vector<double>{1.0, 1.0}) == 1.0);
}

TEST_CASE("confidence is the product of its four factors") {
  Tensor2 class_probs(1, 4);  // 3 foreground classes + no-instance
  class_probs.at(0, 0) = 0.1;
  class_probs.at(0, 1) = 0.8;
  class_probs.at(0, 2) = 0.05;
  class_probs.at(0, 3) = 0.05;
  Tensor2 mask_probs(1, 2);
  mask_probs.at(0, 0) = 0.6;
  mask_probs.at(0, 1) = 0.6;  // a = 0.6
  const FinalPrediction fp = direct_prediction(class_probs, mask_probs, {0.5}, {0.9});
  const Confidence c = confidence(fp, 0);
  CHECK(c.class_id == 1);
  CHECK(c.score == doctest::Approx(0.8 * 0.9 * 0.5 * 0.6).epsilon(1e-12));
}

TEST_CASE("any zero factor zeroes the confidence") {
  Tensor2 class_probs(1, 3);
  class_probs.at(0, 0) = 1.0;
  Tensor2 mask_probs(1, 2);  // nothing above 0.5 -> a = 0
  const FinalPrediction fp = direct_prediction(class_probs, mask_probs, {1.0}, {1.0});
  CHECK(confidence(fp, 0).score == 0.0);
}

TEST_CASE("scores are clamped into [0,1] and no-instance mass is ignored") {
  Tensor2 class_probs(1, 3);  // two foreground classes
  class_probs.at(0, 0) = 0.1;
  class_probs.at(0, 1) = 0.2;
  class_probs.at(0, 2) = 0.7;  // no-instance wins overall
  Tensor2 mask_probs(1, 1);
  mask_probs.at(0, 0) = 1.0;
  const FinalPrediction fp = direct_prediction(class_probs, mask_probs, {1.7}, {-0.3});
  const Confidence c = confidence(fp, 0);
  CHECK(c.class_id == 1);  // best foreground, despite the no-instance majority
  CHECK(c.score == doctest::Approx(0.2 * 0.0 * 1.0 * 1.0));  // box score clamped to 0
  const FinalPrediction fp2 = direct_prediction(class_probs, mask_probs, {1.7}, {0.5});
  CHECK(confidence(fp2, 0).score == doctest::Approx(0.2 * 0.5 * 1.0 * 1.0).epsilon(1e-12));
}

TEST_CASE("select_instances ranks, truncates and expands") {
  Tensor2 class_probs(2, 3);
  class_probs.at(0, 0) = 0.9;  // strong proposal
  class_probs.at(1, 1) = 0.1;  // weak proposal
  Tensor2 mask_probs(2, 3);
  mask_probs.at(0, 0) = 0.9;  // proposal 0 claims superpoint 0 only
  mask_probs.at(1, 2) = 0.9;
  const FinalPrediction fp = direct_prediction(class_probs, mask_probs, {1.0, 1.0}, {1.0, 1.0});
  const std::vector<int> assign{0, 0, 1, 2};

  const auto top1 = select_instances(fp, 1, assign, 3);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].class_id == 0);
  CHECK(top1[0].superpoint_mask == std::vector<char>{1, 0, 0});
  CHECK(top1[0].point_mask == std::vector<char>{1, 1, 0, 0});  // expansion of superpoint 0

  const auto all = select_instances(fp, 10, assign, 3);
  CHECK(all.size() == 2);  // K larger than N_o returns everything
  CHECK(all[0].confidence >= all[1].confidence);
}

TEST_CASE("evaluate: perfect predictions give mAP = mAP50 = mAP25 = 1") {
  // Two scenes, two classes; predictions copy the ground truth at confidence 1.
  std::vector<EvalSceneGt> gts(2);
  gts[0].point_instance = {0, 0, 1, 1, -1};
  gts[0].instance_class = {0, 1};
  gts[1].point_instance = {0, 0, -1};
  gts[1].instance_class = {1};

  std::vector<std::vector<InstancePrediction>> preds(2);
  for (int s = 0; s < 2; ++s) {
    for (size_t g = 0; g < gts[s].instance_class.size(); ++g) {
      InstancePrediction p;
      p.class_id = gts[s].instance_class[g];
      p.confidence = 1.0;
      p.point_mask.resize(gts[s].point_instance.size());
      for (size_t i = 0; i < p.point_mask.size(); ++i) {
        p.point_mask[i] = gts[s].point_instance[i] == static_cast<int>(g) ? 1 : 0;
      }
      preds[s].push_back(p);
    }
  }
  const EvalReport rep = evaluate(preds, gts);
  CHECK(rep.map == 1.0);
  CHECK(rep.map50 == 1.0);
  CHECK(rep.map25 == 1.0);
}

TEST_CASE("evaluate: a 0.3-IoU prediction is TP at 0.25 and FP at 0.50") {
  std::vector<EvalSceneGt> gts(1);
  gts[0].point_instance = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, -1, -1};  // 10 instance points
  gts[0].instance_class = {0};
  InstancePrediction p;
  p.class_id = 0;
  p.confidence = 0.9;
  // 3 of the 10 instance points plus 1 background point: IoU = 3/11 ≈ 0.27.
  p.point_mask.assign(12, 0);
  p.point_mask[0] = p.point_mask[1] = p.point_mask[2] = 1;
  p.point_mask[10] = 1;
  const EvalReport rep = evaluate({{p}}, gts);
  CHECK(rep.map25 > 0.0);
  CHECK(rep.map50 == 0.0);
  CHECK(rep.map == 0.0);
  CHECK(rep.map25 >= rep.map50);
  CHECK(rep.map50 >= rep.map);
}

TEST_CASE("evaluate: classes without ground truth are skipped, not scored zero") {
  std::vector<EvalSceneGt> gts(1);
  gts[0].point_instance = {0, 0, -1};
  gts[0].instance_class = {2};
  InstancePrediction good;
  good.class_id = 2;
  good.confidence = 1.0;
  good.point_mask = {1, 1, 0};
  InstancePrediction stray;  // class 5 has no gt anywhere: must not dilute the mean
  stray.class_id = 5;
  stray.confidence = 1.0;
  stray.point_mask = {1, 1, 1};
  const EvalReport rep = evaluate({{good, stray}}, gts);
  CHECK(rep.classes == std::vector<int>{2});
  CHECK(rep.map50 == 1.0);
}

TEST_CASE("evaluate: scaling all confidences leaves the report unchanged") {
  Rng rng(31);
  std::vector<EvalSceneGt> gts(2);
  std::vector<std::vector<InstancePrediction>> preds(2);
  for (int s = 0; s < 2; ++s) {
    const int n = 30;
    gts[s].point_instance.resize(n);
    for (int i = 0; i < n; ++i) gts[s].point_instance[i] = i < 20 ? i / 10 : -1;
    gts[s].instance_class = {rng.uniform_int(0, 2), rng.uniform_int(0, 2)};
    for (int k = 0; k < 5; ++k) {
      InstancePrediction p;
      p.class_id = rng.uniform_int(0, 2);
      p.confidence = rng.uniform();
      p.point_mask.resize(n);
      for (int i = 0; i < n; ++i) p.point_mask[i] = rng.uniform() < 0.4 ? 1 : 0;
      preds[s].push_back(p);
    }
  }
  const EvalReport a = evaluate(preds, gts);
  for (auto& scene : preds) {
    for (auto& p : scene) p.confidence *= 7.5;
  }
  const EvalReport b = evaluate(preds, gts);
  CHECK(a.map == b.map);
  CHECK(a.map50 == b.map50);
  CHECK(a.map25 == b.map25);
  for (int cls : a.classes) {
    CHECK(a.class_ap.at(cls) == b.class_ap.at(cls));
  }
}

TEST_CASE("monotonicity holds on random reports") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<EvalSceneGt> gts(3);
    std::vector<std::vector<InstancePrediction>> preds(3);
    for (int s = 0; s < 3; ++s) {
      const int n = 40;
      gts[s].point_instance.resize(n);
      const int n_inst = rng.uniform_int(1, 3);
      gts[s].instance_class.resize(n_inst);
      for (int& c : gts[s].instance_class) c = rng.uniform_int(0, 3);
      for (int i = 0; i < n; ++i) {
        gts[s].point_instance[i] = rng.uniform() < 0.7 ? rng.uniform_int(0, n_inst - 1) : -1;
      }
      const int n_pred = rng.uniform_int(0, 6);
      for (int k = 0; k < n_pred; ++k) {
        InstancePrediction p;
        p.class_id = rng.uniform_int(0, 3);
        p.confidence = rng.uniform();
        p.point_mask.resize(n);
        for (int i = 0; i < n; ++i) p.point_mask[i] = rng.uniform() < 0.3 ? 1 : 0;
        preds[s].push_back(p);
      }
    }
    const EvalReport rep = evaluate(preds, gts);
    CHECK(rep.map25 >= rep.map50);
    CHECK(rep.map50 >= rep.map);
  }
}

TEST_CASE("point IoU equals superpoint IoU when superpoints have equal sizes") {
  // Uniform grid: every superpoint owns exactly 3 points.
  const int k = 4, per = 3;
  std::vector<int> assign;
  for (int s = 0; s < k; ++s) {
    for (int p = 0; p < per; ++p) assign.push_back(s);
  }
  Rng rng(51);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<char> a(k), b(k);
    for (int s = 0; s < k; ++s) {
      a[s] = rng.uniform() < 0.5;
      b[s] = rng.uniform() < 0.5;
    }
    std::vector<double> ad(k), bd(k);
    for (int s = 0; s < k; ++s) {
      ad[s] = a[s];
      bd[s] = b[s];
    }
    const double sp_iou = mask_iou(ad, bd);
    // Expand both to points and compute point-level IoU.
    int inter = 0, uni = 0;
    for (int p = 0; p < k * per; ++p) {
      const bool av = a[assign[p]], bv = b[assign[p]];
      inter += (av && bv) ? 1 : 0;
      uni += (av || bv) ? 1 : 0;
    }
    const double pt_iou = uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
    CHECK(pt_iou == doctest::Approx(sp_iou).epsilon(1e-15));
  }
}
