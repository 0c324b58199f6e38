#pragma once

#include <array>
#include <string>
#include <vector>

#include "twinattn/rng.hpp"
#include "twinattn/tensor.hpp"

namespace twinattn {

// Knobs for the synthetic scene sampler. Rooms are axis-aligned cubes with
// instances on primitive surfaces and a patchy wall/floor background shell.
struct SceneConfig {
  int points = 4096;
  int min_instances = 3;
  int max_instances = 8;
  int num_classes = 6;
  int min_points_per_instance = 64;
  double background_fraction = 0.2;
  double room_size = 4.0;
  double wall_margin = 0.3;
  double instance_min_extent = 0.35;
  double instance_max_extent = 1.0;
  double instance_separation = 0.12;
  double position_jitter = 0.005;
  double color_noise = 0.02;
  int background_patches = 36;
  double patch_extent = 0.55;
  // Comma-separated subset of box,sphere,plane. A class's shape is the
  // (class mod |mix|)-th entry, so geometry correlates with the label.
  std::string primitive_mix = "box,sphere,plane";

  void validate() const;
  std::string echo() const;  // canonical one-line key=value form
};

struct Scene {
  Tensor2 points;                      // N x 6: x,y,z,r,g,b
  std::vector<int> instance_of;        // N, in [0,N_I) or -1 for background
  std::vector<int> class_of_instance;  // N_I
  int num_classes = 0;
  uint64_t seed = 0;
  SceneConfig config;

  int num_points() const { return points.rows; }
  int num_instances() const { return static_cast<int>(class_of_instance.size()); }
};

// Deterministic per (cfg, seed).
Scene generate_scene(const SceneConfig& cfg, uint64_t seed);

// Maps raw coordinates into the unit cube: (p - offset) / extent with one
// isotropic extent so box IoU values are preserved.
struct SceneNormalizer {
  std::array<double, 3> offset{0, 0, 0};
  double extent = 1.0;

  static SceneNormalizer fit(const Scene& scene);
  std::array<double, 3> apply(double x, double y, double z) const;
  std::array<double, 6> apply_box(const std::array<double, 6>& box) const;
};

// Versioned structured-text persistence ("twinattn-scene/1").
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

}  // namespace twinattn
