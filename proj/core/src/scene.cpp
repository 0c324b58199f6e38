#include "twinattn/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace twinattn {

namespace {

struct Aabb {
  std::array<double, 3> lo, hi;
  bool overlaps(const Aabb& o, double gap) const {
    for (int a = 0; a < 3; ++a) {
      if (lo[a] - gap > o.hi[a] || hi[a] + gap < o.lo[a]) return false;
    }
    return true;
  }
};

enum class Primitive { kBox, kSphere, kPlane };

std::vector<Primitive> parse_mix(const std::string& mix) {
  std::vector<Primitive> out;
  std::stringstream ss(mix);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "box") {
      out.push_back(Primitive::kBox);
    } else if (tok == "sphere") {
      out.push_back(Primitive::kSphere);
    } else if (tok == "plane") {
      out.push_back(Primitive::kPlane);
    } else if (!tok.empty()) {
      throw ConfigError("scene: unknown primitive '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError("scene: primitive_mix selects nothing");
  return out;
}

// Distinct base colors per class; wraps after eight.
const std::array<std::array<double, 3>, 8> kPalette = {{{0.85, 0.2, 0.2},
                                                        {0.2, 0.65, 0.25},
                                                        {0.2, 0.35, 0.85},
                                                        {0.9, 0.75, 0.2},
                                                        {0.65, 0.25, 0.75},
                                                        {0.2, 0.75, 0.75},
                                                        {0.9, 0.5, 0.2},
                                                        {0.55, 0.55, 0.35}}};

std::array<double, 3> sample_box_surface(Rng& rng, const std::array<double, 3>& c,
                                         const std::array<double, 3>& h) {
  // Face picked proportionally to area.
  const double ax = h[1] * h[2], ay = h[0] * h[2], az = h[0] * h[1];
  const double r = rng.uniform() * (ax + ay + az);
  int axis = (r < ax) ? 0 : (r < ax + ay ? 1 : 2);
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  std::array<double, 3> p;
  for (int a = 0; a < 3; ++a) p[a] = c[a] + rng.uniform(-h[a], h[a]);
  p[axis] = c[axis] + side * h[axis];
  return p;
}

std::array<double, 3> sample_sphere_surface(Rng& rng, const std::array<double, 3>& c, double radius) {
  double x, y, z, n2;
  do {
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    n2 = x * x + y * y + z * z;
  } while (n2 < 1e-12);
  const double inv = radius / std::sqrt(n2);
  return {c[0] + x * inv, c[1] + y * inv, c[2] + z * inv};
}

std::array<double, 3> sample_plane_patch(Rng& rng, const std::array<double, 3>& c,
                                         const std::array<double, 3>& h) {
  // Horizontal slab surface at the top of the bounding box (table-top like).
  return {c[0] + rng.uniform(-h[0], h[0]), c[1] + rng.uniform(-h[1], h[1]), c[2] + h[2]};
}

}  // namespace

void SceneConfig::validate() const {
  if (points < 1) throw ConfigError("scene: points must be >= 1");
  if (min_instances < 1 || max_instances < min_instances) {
    throw ConfigError("scene: instance range is invalid");
  }
  if (num_classes < 1) throw ConfigError("scene: num_classes must be >= 1");
  if (background_fraction < 0.0 || background_fraction >= 1.0) {
    throw ConfigError("scene: background_fraction must be in [0,1)");
  }
  if (room_size <= 0.0) throw ConfigError("scene: room_size must be positive");
  if (instance_min_extent <= 0.0 || instance_max_extent < instance_min_extent) {
    throw ConfigError("scene: instance extent range is invalid");
  }
  if (instance_max_extent + 2.0 * wall_margin >= room_size) {
    throw ConfigError("scene: instances cannot fit inside the room margins");
  }
  const double instance_budget = points * (1.0 - background_fraction);
  if (instance_budget < max_instances * static_cast<double>(min_points_per_instance)) {
    throw ConfigError("scene: point budget cannot give every instance min_points_per_instance");
  }
  parse_mix(primitive_mix);
}

std::string SceneConfig::echo() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "points=%d min_instances=%d max_instances=%d num_classes=%d "
                "min_points_per_instance=%d background_fraction=%.17g room_size=%.17g "
                "wall_margin=%.17g instance_min_extent=%.17g instance_max_extent=%.17g "
                "instance_separation=%.17g position_jitter=%.17g color_noise=%.17g "
                "background_patches=%d patch_extent=%.17g primitive_mix=%s",
                points, min_instances, max_instances, num_classes, min_points_per_instance,
                background_fraction, room_size, wall_margin, instance_min_extent, instance_max_extent,
                instance_separation, position_jitter, color_noise, background_patches, patch_extent,
                primitive_mix.c_str());
  return buf;
}

Scene generate_scene(const SceneConfig& cfg, uint64_t seed) {
  cfg.validate();
  const auto primitives = parse_mix(cfg.primitive_mix);
  Rng layout = Rng(seed).substream("scene.layout");
  Rng sampler = Rng(seed).substream("scene.points");

  Scene scene;
  scene.seed = seed;
  scene.config = cfg;
  scene.num_classes = cfg.num_classes;

  const int n_inst = layout.uniform_int(cfg.min_instances, cfg.max_instances);
  int bg_points = static_cast<int>(std::lround(cfg.points * cfg.background_fraction));
  int inst_total = cfg.points - bg_points;

  // Per-instance point budgets: random weights, floor at the minimum.
  std::vector<double> weights(n_inst);
  double wsum = 0.0;
  for (double& w : weights) {
    w = layout.uniform(0.7, 1.4);
    wsum += w;
  }
  std::vector<int> budget(n_inst);
  int assigned = 0;
  for (int i = 0; i < n_inst; ++i) {
    budget[i] = std::max(cfg.min_points_per_instance,
                         static_cast<int>(std::floor(inst_total * weights[i] / wsum)));
    assigned += budget[i];
  }
  while (assigned > inst_total) {  // trim from the largest
    int big = 0;
    for (int i = 1; i < n_inst; ++i)
      if (budget[i] > budget[big]) big = i;
    if (budget[big] <= cfg.min_points_per_instance) break;
    --budget[big];
    --assigned;
  }
  bg_points = cfg.points - assigned;  // leftovers go to the background shell

  // Place instances without overlap.
  std::vector<Aabb> placed;
  std::vector<std::array<double, 3>> centers(n_inst), halves(n_inst);
  scene.class_of_instance.resize(n_inst);
  for (int i = 0; i < n_inst; ++i) {
    scene.class_of_instance[i] = layout.uniform_int(0, cfg.num_classes - 1);
    double ex = layout.uniform(cfg.instance_min_extent, cfg.instance_max_extent);
    double ey = layout.uniform(cfg.instance_min_extent, cfg.instance_max_extent);
    double ez = layout.uniform(cfg.instance_min_extent, cfg.instance_max_extent);
    bool ok = false;
    for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
      if (attempt > 0 && attempt % 80 == 0) {
        ex = std::max(cfg.instance_min_extent * 0.5, ex * 0.8);
        ey = std::max(cfg.instance_min_extent * 0.5, ey * 0.8);
        ez = std::max(cfg.instance_min_extent * 0.5, ez * 0.8);
      }
      std::array<double, 3> half{ex / 2, ey / 2, ez / 2};
      std::array<double, 3> c;
      for (int a = 0; a < 3; ++a) {
        const double lo = cfg.wall_margin + half[a];
        const double hi = cfg.room_size - cfg.wall_margin - half[a];
        c[a] = layout.uniform(lo, hi);
      }
      Aabb box{{c[0] - half[0], c[1] - half[1], c[2] - half[2]},
               {c[0] + half[0], c[1] + half[1], c[2] + half[2]}};
      ok = true;
      for (const Aabb& other : placed) {
        if (box.overlaps(other, cfg.instance_separation)) {
          ok = false;
          break;
        }
      }
      if (ok) {
        placed.push_back(box);
        centers[i] = c;
        halves[i] = half;
      }
    }
    if (!ok) throw ConfigError("scene: failed to place instance " + std::to_string(i) + "; lower the instance count or extents");
  }

  scene.points = Tensor2(cfg.points, 6);
  scene.instance_of.assign(cfg.points, -1);

  int row = 0;
  for (int i = 0; i < n_inst; ++i) {
    const int cls = scene.class_of_instance[i];
    const auto& base = kPalette[cls % kPalette.size()];
    std::array<double, 3> tint;
    for (int a = 0; a < 3; ++a) tint[a] = std::clamp(base[a] + sampler.normal(0.0, 0.04), 0.0, 1.0);
    const Primitive prim = primitives[cls % primitives.size()];
    for (int p = 0; p < budget[i]; ++p, ++row) {
      std::array<double, 3> pos;
      switch (prim) {
        case Primitive::kBox:
          pos = sample_box_surface(sampler, centers[i], halves[i]);
          break;
        case Primitive::kSphere:
          pos = sample_sphere_surface(sampler, centers[i],
                                      std::min({halves[i][0], halves[i][1], halves[i][2]}));
          break;
        case Primitive::kPlane:
          pos = sample_plane_patch(sampler, centers[i], halves[i]);
          break;
      }
      double* r = scene.points.row_ptr(row);
      for (int a = 0; a < 3; ++a) r[a] = pos[a] + sampler.normal(0.0, cfg.position_jitter);
      for (int a = 0; a < 3; ++a) {
        r[3 + a] = std::clamp(tint[a] + sampler.normal(0.0, cfg.color_noise), 0.0, 1.0);
      }
      scene.instance_of[row] = i;
    }
  }

  // Background shell: clustered patches on the room faces, neutral gray.
  const int patches = std::max(1, cfg.background_patches);
  struct Patch {
    int face;
    double u, v;
  };
  std::vector<Patch> patch_anchors(patches);
  for (auto& pa : patch_anchors) {
    pa.face = layout.uniform_int(0, 5);
    pa.u = layout.uniform(0.0, cfg.room_size - cfg.patch_extent);
    pa.v = layout.uniform(0.0, cfg.room_size - cfg.patch_extent);
  }
  for (int p = 0; p < bg_points; ++p, ++row) {
    const Patch& pa = patch_anchors[p % patches];
    const double u = pa.u + sampler.uniform(0.0, cfg.patch_extent);
    const double v = pa.v + sampler.uniform(0.0, cfg.patch_extent);
    const int axis = pa.face / 2;
    const double plane = (pa.face % 2 == 0) ? 0.0 : cfg.room_size;
    std::array<double, 3> pos;
    pos[axis] = plane;
    pos[(axis + 1) % 3] = u;
    pos[(axis + 2) % 3] = v;
    double* r = scene.points.row_ptr(row);
    for (int a = 0; a < 3; ++a) r[a] = pos[a] + sampler.normal(0.0, cfg.position_jitter);
    const double gray = std::clamp(0.55 + sampler.normal(0.0, cfg.color_noise), 0.0, 1.0);
    r[3] = r[4] = r[5] = gray;
  }

  return scene;
}

SceneNormalizer SceneNormalizer::fit(const Scene& scene) {
  SceneNormalizer n;
  if (scene.num_points() == 0) return n;
  std::array<double, 3> lo{scene.points.at(0, 0), scene.points.at(0, 1), scene.points.at(0, 2)};
  std::array<double, 3> hi = lo;
  for (int i = 1; i < scene.num_points(); ++i) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], scene.points.at(i, a));
      hi[a] = std::max(hi[a], scene.points.at(i, a));
    }
  }
  n.offset = lo;
  n.extent = std::max({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2], 1e-9});
  return n;
}

std::array<double, 3> SceneNormalizer::apply(double x, double y, double z) const {
  return {(x - offset[0]) / extent, (y - offset[1]) / extent, (z - offset[2]) / extent};
}

std::array<double, 6> SceneNormalizer::apply_box(const std::array<double, 6>& box) const {
  const auto lo = apply(box[0], box[1], box[2]);
  const auto hi = apply(box[3], box[4], box[5]);
  return {lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]};
}

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("scene: cannot open for write: " + path);
  out << "twinattn-scene/1\n";
  out << "seed " << scene.seed << "\n";
  out << "num_classes " << scene.num_classes << "\n";
  out << "config " << scene.config.echo() << "\n";
  out << "points " << scene.num_points() << "\n";
  out << "instances " << scene.num_instances() << "\n";
  out << "classes";
  for (int c : scene.class_of_instance) out << ' ' << c;
  out << "\ndata\n";
  char buf[256];
  for (int i = 0; i < scene.num_points(); ++i) {
    const double* r = scene.points.row_ptr(i);
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g %d\n", r[0], r[1], r[2], r[3],
                  r[4], r[5], scene.instance_of[i]);
    out << buf;
  }
  out << "end\n";
  if (!out) throw IoError("scene: write failed: " + path);
}

namespace {

void parse_scene_config(const std::string& line, SceneConfig& cfg) {
  std::stringstream ss(line);
  std::string kv;
  while (ss >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw IoError("scene: malformed config token '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "points") cfg.points = std::stoi(val);
    else if (key == "min_instances") cfg.min_instances = std::stoi(val);
    else if (key == "max_instances") cfg.max_instances = std::stoi(val);
    else if (key == "num_classes") cfg.num_classes = std::stoi(val);
    else if (key == "min_points_per_instance") cfg.min_points_per_instance = std::stoi(val);
    else if (key == "background_fraction") cfg.background_fraction = std::stod(val);
    else if (key == "room_size") cfg.room_size = std::stod(val);
    else if (key == "wall_margin") cfg.wall_margin = std::stod(val);
    else if (key == "instance_min_extent") cfg.instance_min_extent = std::stod(val);
    else if (key == "instance_max_extent") cfg.instance_max_extent = std::stod(val);
    else if (key == "instance_separation") cfg.instance_separation = std::stod(val);
    else if (key == "position_jitter") cfg.position_jitter = std::stod(val);
    else if (key == "color_noise") cfg.color_noise = std::stod(val);
    else if (key == "background_patches") cfg.background_patches = std::stoi(val);
    else if (key == "patch_extent") cfg.patch_extent = std::stod(val);
    else if (key == "primitive_mix") cfg.primitive_mix = val;
    else throw IoError("scene: unknown config key '" + key + "'");
  }
}

}  // namespace

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("scene: cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "twinattn-scene/1") {
    throw IoError("scene: bad version header in " + path);
  }
  Scene scene;
  std::string key;
  int n_points = -1, n_inst = -1;
  while (in >> key) {
    if (key == "seed") {
      in >> scene.seed;
    } else if (key == "num_classes") {
      in >> scene.num_classes;
    } else if (key == "config") {
      std::getline(in, line);
      parse_scene_config(line, scene.config);
    } else if (key == "points") {
      in >> n_points;
    } else if (key == "instances") {
      in >> n_inst;
      scene.class_of_instance.resize(n_inst);
    } else if (key == "classes") {
      for (int& c : scene.class_of_instance) in >> c;
    } else if (key == "data") {
      if (n_points < 0 || n_inst < 0) throw IoError("scene: data before sizes in " + path);
      scene.points = Tensor2(n_points, 6);
      scene.instance_of.resize(n_points);
      for (int i = 0; i < n_points; ++i) {
        double* r = scene.points.row_ptr(i);
        for (int j = 0; j < 6; ++j) in >> r[j];
        in >> scene.instance_of[i];
      }
      in >> key;
      if (!in || key != "end") throw IoError("scene: missing end marker in " + path);
      return scene;
    } else {
      throw IoError("scene: unknown key '" + key + "' in " + path);
    }
    if (!in) throw IoError("scene: truncated file " + path);
  }
  throw IoError("scene: no data section in " + path);
}

}  // namespace twinattn
