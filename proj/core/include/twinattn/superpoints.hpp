#pragma once

#include <vector>

#include "twinattn/scene.hpp"

namespace twinattn {

// Two-scale grid clustering. Every point belongs to exactly one superpoint
// per scale; low cells are unions of whole high cells, so each high
// superpoint nests inside one low superpoint and N_low <= N_high.
struct SuperpointPartition {
  std::vector<int> assign_low;
  std::vector<int> assign_high;
  int n_low = 0;
  int n_high = 0;
};

SuperpointPartition partition_superpoints(const Scene& scene, double cell_low, double cell_high);

struct GroundTruth {
  Tensor2 masks;               // N_I x K binary
  Tensor2 boxes;               // N_I x 6 raw min/max coordinates of instance points
  std::vector<int> classes;    // N_I
};

struct FidelityReport {
  // Fraction of points whose label, projected through superpoint majority
  // voting, matches the true point label.
  double point_label_fidelity = 1.0;
  // Instances that lost every superpoint to the vote; their mask row is empty.
  std::vector<int> empty_mask_instances;
};

// Majority vote per superpoint: an instance owns a superpoint iff it holds a
// strict majority of its points. Ties and background majorities leave the
// superpoint unowned. Boxes come from raw instance points, not superpoints.
GroundTruth gt_superpoint_masks(const Scene& scene, const SuperpointPartition& part,
                                FidelityReport* report = nullptr);

// Same vote over an arbitrary point->segment assignment (used by the
// single-scale model variants).
GroundTruth gt_masks_over(const Scene& scene, const std::vector<int>& assign, int num_segments,
                          FidelityReport* report = nullptr);

}  // namespace twinattn
