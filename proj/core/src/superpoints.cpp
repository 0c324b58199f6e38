#include "twinattn/superpoints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

namespace twinattn {

SuperpointPartition partition_superpoints(const Scene& scene, double cell_low, double cell_high) {
  if (!(cell_low > cell_high && cell_high > 0.0)) {
    throw ConfigError("partition: requires cell_low > cell_high > 0");
  }
  const int n = scene.num_points();
  SuperpointPartition part;
  part.assign_low.resize(n);
  part.assign_high.resize(n);

  // High cells come from the raw grid; low cells group whole high cells, so
  // nesting holds for any cell-size ratio.
  const double ratio = cell_high / cell_low;
  std::map<std::tuple<long long, long long, long long>, int> high_ids, low_ids;
  std::vector<std::tuple<long long, long long, long long>> high_cell_of_point(n);
  for (int i = 0; i < n; ++i) {
    const double* p = scene.points.row_ptr(i);
    const auto ix = static_cast<long long>(std::floor(p[0] / cell_high));
    const auto iy = static_cast<long long>(std::floor(p[1] / cell_high));
    const auto iz = static_cast<long long>(std::floor(p[2] / cell_high));
    const auto key = std::make_tuple(ix, iy, iz);
    auto [it, inserted] = high_ids.emplace(key, static_cast<int>(high_ids.size()));
    part.assign_high[i] = it->second;
    high_cell_of_point[i] = key;
  }
  for (int i = 0; i < n; ++i) {
    const auto [ix, iy, iz] = high_cell_of_point[i];
    const auto lx = static_cast<long long>(std::floor(static_cast<double>(ix) * ratio));
    const auto ly = static_cast<long long>(std::floor(static_cast<double>(iy) * ratio));
    const auto lz = static_cast<long long>(std::floor(static_cast<double>(iz) * ratio));
    auto [it, inserted] = low_ids.emplace(std::make_tuple(lx, ly, lz), static_cast<int>(low_ids.size()));
    part.assign_low[i] = it->second;
  }
  part.n_high = static_cast<int>(high_ids.size());
  part.n_low = static_cast<int>(low_ids.size());
  return part;
}

GroundTruth gt_masks_over(const Scene& scene, const std::vector<int>& assign, int num_segments,
                          FidelityReport* report) {
  const int n = scene.num_points();
  const int n_inst = scene.num_instances();
  if (static_cast<int>(assign.size()) != n) throw PartitionError("gt: assignment length mismatch");

  // Per-superpoint counts: instances 0..N_I-1 plus background at index N_I.
  std::vector<int> sp_size(num_segments, 0);
  std::vector<std::vector<int>> counts(num_segments, std::vector<int>(n_inst + 1, 0));
  for (int i = 0; i < n; ++i) {
    const int s = assign[i];
    if (s < 0 || s >= num_segments) throw PartitionError("gt: superpoint id out of range");
    ++sp_size[s];
    const int inst = scene.instance_of[i];
    ++counts[s][inst < 0 ? n_inst : inst];
  }

  std::vector<int> owner(num_segments, -1);
  for (int s = 0; s < num_segments; ++s) {
    if (sp_size[s] == 0) throw PartitionError("gt: empty superpoint " + std::to_string(s));
    int best = -1, best_count = 0;
    for (int c = 0; c < n_inst; ++c) {
      if (counts[s][c] > best_count) {
        best_count = counts[s][c];
        best = c;
      }
    }
    // Strict majority over all member points, background included.
    if (best >= 0 && 2 * best_count > sp_size[s]) owner[s] = best;
  }

  GroundTruth gt;
  gt.classes = scene.class_of_instance;
  gt.masks = Tensor2(n_inst, num_segments);
  for (int s = 0; s < num_segments; ++s) {
    if (owner[s] >= 0) gt.masks.at(owner[s], s) = 1.0;
  }

  gt.boxes = Tensor2(n_inst, 6);
  for (int i = 0; i < n_inst; ++i) {
    for (int a = 0; a < 3; ++a) {
      gt.boxes.at(i, a) = std::numeric_limits<double>::infinity();
      gt.boxes.at(i, 3 + a) = -std::numeric_limits<double>::infinity();
    }
  }
  for (int p = 0; p < n; ++p) {
    const int inst = scene.instance_of[p];
    if (inst < 0) continue;
    const double* r = scene.points.row_ptr(p);
    for (int a = 0; a < 3; ++a) {
      gt.boxes.at(inst, a) = std::min(gt.boxes.at(inst, a), r[a]);
      gt.boxes.at(inst, 3 + a) = std::max(gt.boxes.at(inst, 3 + a), r[a]);
    }
  }

  if (report) {
    int match = 0;
    for (int p = 0; p < n; ++p) {
      const int projected = owner[assign[p]];
      if (projected == scene.instance_of[p] || (projected < 0 && scene.instance_of[p] < 0)) ++match;
    }
    report->point_label_fidelity = n > 0 ? static_cast<double>(match) / n : 1.0;
    report->empty_mask_instances.clear();
    for (int i = 0; i < n_inst; ++i) {
      bool any = false;
      for (int s = 0; s < num_segments && !any; ++s) any = gt.masks.at(i, s) != 0.0;
      if (!any) report->empty_mask_instances.push_back(i);
    }
  }
  return gt;
}

GroundTruth gt_superpoint_masks(const Scene& scene, const SuperpointPartition& part, FidelityReport* report) {
  return gt_masks_over(scene, part.assign_high, part.n_high, report);
}

}  // namespace twinattn
