#include "twinattn/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace twinattn {

EvalSceneGt eval_gt_from_scene(const Scene& scene) {
  return EvalSceneGt{scene.instance_of, scene.class_of_instance};
}

namespace {

struct RankedPred {
  double confidence;
  int scene;
  int index;  // within the scene's prediction list
  int cls;
};

// Point IoU between a prediction mask and a ground-truth instance.
double point_iou(const std::vector<char>& mask, const std::vector<int>& point_instance, int instance) {
  int inter = 0, uni = 0;
  for (size_t p = 0; p < mask.size(); ++p) {
    const bool pv = mask[p] != 0;
    const bool gv = point_instance[p] == instance;
    inter += (pv && gv) ? 1 : 0;
    uni += (pv || gv) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

double precision_envelope_ap(const std::vector<char>& is_tp, int total_gt) {
  if (total_gt == 0) return 0.0;
  const int n = static_cast<int>(is_tp.size());
  if (n == 0) return 0.0;
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (int k = 0; k < n; ++k) {
    tp += is_tp[k] ? 1 : 0;
    precision[k] = static_cast<double>(tp) / (k + 1);
    recall[k] = static_cast<double>(tp) / total_gt;
  }
  // Monotone envelope from the right.
  for (int k = n - 2; k >= 0; --k) precision[k] = std::max(precision[k], precision[k + 1]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (int k = 0; k < n; ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

}  // namespace

EvalReport evaluate(const std::vector<std::vector<InstancePrediction>>& predictions,
                    const std::vector<EvalSceneGt>& ground_truths, const std::vector<double>& thresholds) {
  if (predictions.size() != ground_truths.size()) {
    throw DimensionError("evaluate: prediction and ground-truth scene counts differ");
  }
  const int scenes = static_cast<int>(ground_truths.size());

  std::set<int> class_set;
  for (const auto& gt : ground_truths) {
    for (int c : gt.instance_class) class_set.insert(c);
  }

  EvalReport report;
  report.thresholds = thresholds;
  report.classes.assign(class_set.begin(), class_set.end());

  // IoU between every same-class (prediction, gt instance) pair, per scene.
  // Computed once and reused across thresholds.
  std::vector<std::vector<std::vector<double>>> iou(scenes);
  for (int s = 0; s < scenes; ++s) {
    const auto& preds = predictions[s];
    const auto& gt = ground_truths[s];
    iou[s].resize(preds.size());
    for (size_t p = 0; p < preds.size(); ++p) {
      iou[s][p].assign(gt.instance_class.size(), 0.0);
      for (size_t g = 0; g < gt.instance_class.size(); ++g) {
        if (gt.instance_class[g] != preds[p].class_id) continue;
        iou[s][p][g] = point_iou(preds[p].point_mask, gt.point_instance, static_cast<int>(g));
      }
    }
  }

  for (int cls : report.classes) {
    std::vector<RankedPred> ranked;
    int total_gt = 0;
    for (int s = 0; s < scenes; ++s) {
      for (size_t p = 0; p < predictions[s].size(); ++p) {
        if (predictions[s][p].class_id == cls) {
          ranked.push_back({predictions[s][p].confidence, s, static_cast<int>(p), cls});
        }
      }
      for (int c : ground_truths[s].instance_class) total_gt += c == cls ? 1 : 0;
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedPred& a, const RankedPred& b) {
      if (a.confidence != b.confidence) return a.confidence > b.confidence;
      if (a.scene != b.scene) return a.scene < b.scene;
      return a.index < b.index;
    });

    auto& aps = report.class_ap[cls];
    auto& cnts = report.counts[cls];
    for (double thr : thresholds) {
      std::vector<std::vector<char>> gt_used(scenes);
      for (int s = 0; s < scenes; ++s) gt_used[s].assign(ground_truths[s].instance_class.size(), 0);
      std::vector<char> is_tp(ranked.size(), 0);
      int tp = 0;
      for (size_t k = 0; k < ranked.size(); ++k) {
        const RankedPred& rp = ranked[k];
        const auto& gt = ground_truths[rp.scene];
        int best_g = -1;
        double best_iou = 0.0;
        for (size_t g = 0; g < gt.instance_class.size(); ++g) {
          if (gt.instance_class[g] != cls || gt_used[rp.scene][g]) continue;
          const double v = iou[rp.scene][rp.index][g];
          if (v > best_iou) {
            best_iou = v;
            best_g = static_cast<int>(g);
          }
        }
        if (best_g >= 0 && best_iou >= thr) {
          is_tp[k] = 1;
          gt_used[rp.scene][best_g] = 1;
          ++tp;
        }
      }
      aps.push_back(precision_envelope_ap(is_tp, total_gt));
      EvalCounts c;
      c.tp = tp;
      c.fp = static_cast<int>(ranked.size()) - tp;
      c.fn = total_gt - tp;
      cnts.push_back(c);
    }
  }

  // Threshold means over class means.
  double map_sum = 0.0;
  int map_count = 0;
  for (size_t t = 0; t < thresholds.size(); ++t) {
    double class_sum = 0.0;
    for (int cls : report.classes) class_sum += report.class_ap[cls][t];
    const double class_mean = report.classes.empty() ? 0.0 : class_sum / report.classes.size();
    if (std::fabs(thresholds[t] - 0.25) < 1e-12) report.map25 = class_mean;
    if (std::fabs(thresholds[t] - 0.50) < 1e-12) report.map50 = class_mean;
    if (thresholds[t] >= 0.5 - 1e-12 && thresholds[t] <= 0.95 + 1e-12) {
      map_sum += class_mean;
      ++map_count;
    }
  }
  report.map = map_count > 0 ? map_sum / map_count : 0.0;
  return report;
}

void write_report_text(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("report: cannot open for write: " + path);
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %8s %8s %8s\n", "class", "AP", "AP50", "AP25");
  out << "instance segmentation evaluation\n";
  std::snprintf(line, sizeof(line), "mAP %.6f  mAP50 %.6f  mAP25 %.6f\n\n", report.map, report.map50,
                report.map25);
  out << line;
  std::snprintf(line, sizeof(line), "%-10s %8s %8s %8s %6s %6s %6s\n", "class", "AP", "AP50", "AP25", "TP50",
                "FP50", "FN50");
  out << line;
  for (int cls : report.classes) {
    const auto& aps = report.class_ap.at(cls);
    double ap_mean = 0.0;
    int n = 0;
    double ap50 = 0.0, ap25 = 0.0;
    int i50 = -1;
    for (size_t t = 0; t < report.thresholds.size(); ++t) {
      if (report.thresholds[t] >= 0.5 - 1e-12 && report.thresholds[t] <= 0.95 + 1e-12) {
        ap_mean += aps[t];
        ++n;
      }
      if (std::fabs(report.thresholds[t] - 0.50) < 1e-12) {
        ap50 = aps[t];
        i50 = static_cast<int>(t);
      }
      if (std::fabs(report.thresholds[t] - 0.25) < 1e-12) ap25 = aps[t];
    }
    const EvalCounts c = i50 >= 0 ? report.counts.at(cls)[i50] : EvalCounts{};
    std::snprintf(line, sizeof(line), "class%-5d %8.4f %8.4f %8.4f %6d %6d %6d\n", cls,
                  n > 0 ? ap_mean / n : 0.0, ap50, ap25, c.tp, c.fp, c.fn);
    out << line;
  }
  if (!out) throw IoError("report: write failed: " + path);
}

void write_summary_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["mAP"] = report.map;
  j["mAP50"] = report.map50;
  j["mAP25"] = report.map25;
  j["thresholds"] = report.thresholds;
  nlohmann::json per_class = nlohmann::json::object();
  for (int cls : report.classes) {
    per_class["class" + std::to_string(cls)] = report.class_ap.at(cls);
  }
  j["per_class_ap"] = per_class;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("summary: cannot open for write: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace twinattn
