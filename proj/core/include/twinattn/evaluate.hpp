#pragma once

#include <map>
#include <string>

#include "twinattn/inference.hpp"

namespace twinattn {

// Point-level ground truth for one scene.
struct EvalSceneGt {
  std::vector<int> point_instance;  // N entries, -1 for background
  std::vector<int> instance_class;  // N_I entries
};

EvalSceneGt eval_gt_from_scene(const Scene& scene);

struct EvalCounts {
  int tp = 0, fp = 0, fn = 0;
};

struct EvalReport {
  double map = 0.0;    // mean over thresholds 0.50..0.95
  double map50 = 0.0;
  double map25 = 0.0;
  std::vector<double> thresholds;
  std::vector<int> classes;                       // classes with ground truth, ascending
  std::map<int, std::vector<double>> class_ap;    // class -> AP per threshold
  std::map<int, std::vector<EvalCounts>> counts;  // class -> counts per threshold
};

inline std::vector<double> standard_thresholds() {
  return {0.25, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
}

// Greedy confidence-ordered matching per class and threshold: a prediction
// takes the unmatched same-class ground truth with the highest point IoU in
// its scene and is a TP iff that IoU clears the threshold. AP is the area
// under the precision envelope. Classes without ground truth are skipped.
EvalReport evaluate(const std::vector<std::vector<InstancePrediction>>& predictions,
                    const std::vector<EvalSceneGt>& ground_truths,
                    const std::vector<double>& thresholds = standard_thresholds());

void write_report_text(const EvalReport& report, const std::string& path);
void write_summary_json(const EvalReport& report, const std::string& path);

}  // namespace twinattn
