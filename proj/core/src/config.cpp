#include "twinattn/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace twinattn {

void RunConfig::validate() const {
  scene.validate();
  model.validate();
  if (!(cell_low > cell_high && cell_high > 0.0)) {
    throw ConfigError("config: requires cell_low > cell_high > 0");
  }
  if (train.steps < 0 || train.batch < 1) throw ConfigError("config: bad train block");
  if (train.optim.lr < 0 || train.optim.weight_decay < 0) throw ConfigError("config: bad optimizer block");
  if (eval.top_k < 1) throw ConfigError("config: eval.top_k must be >= 1");
  if (model.num_classes != scene.num_classes) {
    throw ConfigError("config: model.num_classes must match scene.num_classes");
  }
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  char buf[128];
  out << "seed = " << seed << "\n\n[scene]\n";
  std::stringstream scene_echo(scene.echo());
  std::string tok;
  while (scene_echo >> tok) {
    const auto eq = tok.find('=');
    out << tok.substr(0, eq) << " = " << tok.substr(eq + 1) << "\n";
  }
  std::snprintf(buf, sizeof(buf), "cell_low = %.17g\ncell_high = %.17g\n", cell_low, cell_high);
  out << buf;
  out << "\n[model]\n";
  std::stringstream model_echo(model.echo());
  while (model_echo >> tok) {
    const auto eq = tok.find('=');
    out << tok.substr(0, eq) << " = " << tok.substr(eq + 1) << "\n";
  }
  out << "\n[loss]\n";
  std::snprintf(buf, sizeof(buf), "beta_mask = %.17g\nbeta_cls = %.17g\nbeta_score = %.17g\n",
                loss.beta_mask, loss.beta_cls, loss.beta_score);
  out << buf;
  std::snprintf(buf, sizeof(buf), "beta_box = %.17g\nbeta_box_score = %.17g\n", loss.beta_box,
                loss.beta_box_score);
  out << buf;
  std::snprintf(buf, sizeof(buf), "eta_mask = %.17g\neta_box = %.17g\n", loss.eta_mask, loss.eta_box);
  out << buf;
  std::snprintf(buf, sizeof(buf), "lambda_cls = %.17g\nlambda_mask = %.17g\n", loss.lambda_cls,
                loss.lambda_mask);
  out << buf;
  out << "\n[train]\n";
  std::snprintf(buf, sizeof(buf), "lr = %.17g\nweight_decay = %.17g\npoly_power = %.17g\n", train.optim.lr,
                train.optim.weight_decay, train.optim.poly_power);
  out << buf;
  out << "steps = " << train.steps << "\nbatch = " << train.batch
      << "\ncheckpoint_every = " << train.checkpoint_every << "\n";
  out << "\n[eval]\n";
  out << "top_k = " << eval.top_k << "\n";
  return out.str();
}

namespace {

uint64_t parse_u64(const std::string& v) { return std::stoull(v); }

void apply_kv(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& val) {
  auto bad = [&]() -> ConfigError {
    return ConfigError("config: unknown key '" + (section.empty() ? key : section + "." + key) + "'");
  };
  if (section.empty()) {
    if (key == "seed") cfg.seed = parse_u64(val);
    else throw bad();
    return;
  }
  if (section == "scene") {
    SceneConfig& s = cfg.scene;
    if (key == "points") s.points = std::stoi(val);
    else if (key == "min_instances") s.min_instances = std::stoi(val);
    else if (key == "max_instances") s.max_instances = std::stoi(val);
    else if (key == "num_classes") { s.num_classes = std::stoi(val); cfg.model.num_classes = s.num_classes; }
    else if (key == "min_points_per_instance") s.min_points_per_instance = std::stoi(val);
    else if (key == "background_fraction") s.background_fraction = std::stod(val);
    else if (key == "room_size") s.room_size = std::stod(val);
    else if (key == "wall_margin") s.wall_margin = std::stod(val);
    else if (key == "instance_min_extent") s.instance_min_extent = std::stod(val);
    else if (key == "instance_max_extent") s.instance_max_extent = std::stod(val);
    else if (key == "instance_separation") s.instance_separation = std::stod(val);
    else if (key == "position_jitter") s.position_jitter = std::stod(val);
    else if (key == "color_noise") s.color_noise = std::stod(val);
    else if (key == "background_patches") s.background_patches = std::stoi(val);
    else if (key == "patch_extent") s.patch_extent = std::stod(val);
    else if (key == "primitive_mix") s.primitive_mix = val;
    else if (key == "cell_low") cfg.cell_low = std::stod(val);
    else if (key == "cell_high") cfg.cell_high = std::stod(val);
    else throw bad();
    return;
  }
  if (section == "model") {
    ModelConfig& m = cfg.model;
    if (key == "num_queries") m.num_queries = std::stoi(val);
    else if (key == "semantic_dim") m.semantic_dim = std::stoi(val);
    else if (key == "blocks") m.blocks = std::stoi(val);
    else if (key == "heads") m.heads = std::stoi(val);
    else if (key == "mask_threshold") m.mask_threshold = std::stod(val);
    else if (key == "ffn_hidden") m.ffn_hidden = std::stoi(val);
    else if (key == "num_classes") m.num_classes = std::stoi(val);
    else if (key == "backbone_dim") m.backbone_dim = std::stoi(val);
    else if (key == "scale_mode") m.scale_mode = val;
    else throw bad();
    return;
  }
  if (section == "loss") {
    LossCoeffs& l = cfg.loss;
    if (key == "beta_mask") l.beta_mask = std::stod(val);
    else if (key == "beta_cls") l.beta_cls = std::stod(val);
    else if (key == "beta_score") l.beta_score = std::stod(val);
    else if (key == "beta_box") l.beta_box = std::stod(val);
    else if (key == "beta_box_score") l.beta_box_score = std::stod(val);
    else if (key == "eta_mask") l.eta_mask = std::stod(val);
    else if (key == "eta_box") l.eta_box = std::stod(val);
    else if (key == "lambda_cls") l.lambda_cls = std::stod(val);
    else if (key == "lambda_mask") l.lambda_mask = std::stod(val);
    else throw bad();
    return;
  }
  if (section == "train") {
    TrainConfig& t = cfg.train;
    if (key == "lr") t.optim.lr = std::stod(val);
    else if (key == "weight_decay") t.optim.weight_decay = std::stod(val);
    else if (key == "poly_power") t.optim.poly_power = std::stod(val);
    else if (key == "steps") t.steps = std::stoi(val);
    else if (key == "batch") t.batch = std::stoi(val);
    else if (key == "checkpoint_every") t.checkpoint_every = std::stoi(val);
    else throw bad();
    return;
  }
  if (section == "eval") {
    if (key == "top_k") cfg.eval.top_k = std::stoi(val);
    else throw bad();
    return;
  }
  throw ConfigError("config: unknown section '" + section + "'");
}

void strip(std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  const auto end = s.find_last_not_of(" \t\r");
  s = begin == std::string::npos ? std::string() : s.substr(begin, end - begin + 1);
}

}  // namespace

void RunConfig::apply_override(const std::string& dotted) {
  const auto eq = dotted.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like section.key=value: " + dotted);
  std::string path = dotted.substr(0, eq);
  std::string val = dotted.substr(eq + 1);
  strip(path);
  strip(val);
  const auto dot = path.find('.');
  if (dot == std::string::npos) {
    apply_kv(*this, "", path, val);
  } else {
    apply_kv(*this, path.substr(0, dot), path.substr(dot + 1), val);
  }
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config: malformed section at line " + std::to_string(line_no));
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key = value at line " + std::to_string(line_no));
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    strip(key);
    strip(val);
    apply_kv(cfg, section, key, val);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str());
}

ModelConfig model_config_from_echo(const std::string& echo) {
  ModelConfig cfg;
  std::stringstream ss(echo);
  std::string tok;
  while (ss >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("model echo: malformed token '" + tok + "'");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "num_queries") cfg.num_queries = std::stoi(val);
    else if (key == "semantic_dim") cfg.semantic_dim = std::stoi(val);
    else if (key == "blocks") cfg.blocks = std::stoi(val);
    else if (key == "heads") cfg.heads = std::stoi(val);
    else if (key == "mask_threshold") cfg.mask_threshold = std::stod(val);
    else if (key == "ffn_hidden") cfg.ffn_hidden = std::stoi(val);
    else if (key == "num_classes") cfg.num_classes = std::stoi(val);
    else if (key == "backbone_dim") cfg.backbone_dim = std::stoi(val);
    else if (key == "scale_mode") cfg.scale_mode = val;
    else throw ConfigError("model echo: unknown key '" + key + "'");
  }
  return cfg;
}

}  // namespace twinattn
