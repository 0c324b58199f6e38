#include "twinattn/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "json.hpp"
#include "twinattn/checkpoint.hpp"

namespace twinattn {

namespace fs = std::filesystem;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for write: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string scene_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d.txt", index);
  return buf;
}

}  // namespace

std::vector<std::string> list_scene_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("scene_", 0) == 0 && name.size() > 4 && name.substr(name.size() - 4) == ".txt") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no scene files under " + dir);
  return files;
}

std::vector<ScenePack> load_scene_packs(const RunConfig& cfg, const std::string& data_dir,
                                        const std::string& scale_mode) {
  std::vector<ScenePack> packs;
  for (const std::string& file : list_scene_files(data_dir)) {
    packs.push_back(make_scene_pack(load_scene(file), cfg.cell_low, cfg.cell_high, scale_mode));
  }
  return packs;
}

void run_gen(const RunConfig& cfg, const std::string& out_dir, int count, uint64_t base_seed) {
  cfg.validate();
  if (count < 1) throw ConfigError("gen: count must be >= 1");
  ensure_dir(out_dir);
  nlohmann::json manifest;
  manifest["base_seed"] = base_seed;
  manifest["count"] = count;
  manifest["scenes"] = nlohmann::json::array();
  for (int i = 0; i < count; ++i) {
    const uint64_t seed = base_seed + static_cast<uint64_t>(i);
    const Scene scene = generate_scene(cfg.scene, seed);
    const std::string file = scene_file_name(i);
    save_scene(out_dir + "/" + file, scene);
    const SuperpointPartition part = partition_superpoints(scene, cfg.cell_low, cfg.cell_high);
    FidelityReport fidelity;
    gt_superpoint_masks(scene, part, &fidelity);
    nlohmann::json entry;
    entry["file"] = file;
    entry["seed"] = seed;
    entry["points"] = scene.num_points();
    entry["instances"] = scene.num_instances();
    entry["superpoints_low"] = part.n_low;
    entry["superpoints_high"] = part.n_high;
    entry["fidelity"] = fidelity.point_label_fidelity;
    entry["instances_without_mask"] = fidelity.empty_mask_instances;
    manifest["scenes"].push_back(entry);
  }
  write_text(out_dir + "/manifest.json", manifest.dump(2) + "\n");
  write_text(out_dir + "/config_echo.txt", cfg.echo());
}

void run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  cfg.validate();
  ensure_dir(out_dir);
  write_text(out_dir + "/config_echo.txt", cfg.echo());

  std::vector<ScenePack> packs = load_scene_packs(cfg, data_dir, cfg.model.scale_mode);
  Model model = build_model(cfg.model, Rng(cfg.seed).substream("init"));

  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot open training log under " + out_dir);
  const auto t0 = std::chrono::steady_clock::now();

  TrainLoopConfig loop;
  loop.steps = cfg.train.steps;
  loop.batch_size = cfg.train.batch;
  loop.seed = cfg.seed;
  loop.checkpoint_every = cfg.train.checkpoint_every;
  loop.out_dir = out_dir;
  loop.config_echo = cfg.model.echo();

  train_loop(model, packs, loop, cfg.train.optim, cfg.loss, [&](int step, const TrainStepStats& stats) {
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json line;
    line["step"] = step;
    line["cls"] = stats.loss.cls;
    line["bce"] = stats.loss.bce;
    line["dice"] = stats.loss.dice;
    line["mask_score"] = stats.loss.mask_score;
    line["box"] = stats.loss.box;
    line["box_score"] = stats.loss.box_score;
    line["total"] = stats.loss.total;
    line["lr"] = stats.lr;
    line["wall_ms"] = ms;
    log << line.dump() << "\n";
  });
}

EvalReport run_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& data_dir,
                    const std::string& out_dir) {
  ensure_dir(out_dir);
  ParameterStore store;
  const CheckpointHeader header = load_checkpoint(checkpoint_path, store);
  const ModelConfig model_cfg = model_config_from_echo(header.config_text);
  Model model = model_from_store(model_cfg, std::move(store));

  std::vector<ScenePack> packs = load_scene_packs(cfg, data_dir, model_cfg.scale_mode);
  std::vector<std::vector<InstancePrediction>> predictions;
  std::vector<EvalSceneGt> gts;
  predictions.reserve(packs.size());
  gts.reserve(packs.size());
  for (const ScenePack& pack : packs) {
    Tape tape;
    const auto preds = forward_scene(tape, model, pack);
    const FinalPrediction final_pred = materialize_final(tape, preds.back());
    predictions.push_back(select_instances(final_pred, cfg.eval.top_k, pack.assign_mask, pack.n_mask));
    gts.push_back(eval_gt_from_scene(pack.scene));
  }
  const EvalReport report = evaluate(predictions, gts);
  write_report_text(report, out_dir + "/report.txt");
  write_summary_json(report, out_dir + "/summary.json");
  write_text(out_dir + "/config_echo.txt", cfg.echo());
  return report;
}

void run_inspect(const std::string& checkpoint_path, std::ostream& out) {
  ParameterStore store;
  const CheckpointHeader header = load_checkpoint(checkpoint_path, store);
  const ModelConfig model_cfg = model_config_from_echo(header.config_text);
  Model model = model_from_store(model_cfg, std::move(store));
  const auto groups = parameter_groups(model);
  out << "model: " << header.config_text << "\n";
  char line[96];
  long long total = 0;
  for (const auto& [name, count] : groups) {
    std::snprintf(line, sizeof(line), "%-20s %12lld\n", name.c_str(), count);
    out << line;
    total += count;
  }
  std::snprintf(line, sizeof(line), "%-20s %12lld\n", "Total parameters", total);
  out << line;
}

}  // namespace twinattn
