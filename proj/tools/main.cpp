// Command-line front end: gen / train / eval / inspect.
//
// Option precedence, lowest to highest: built-in defaults, --config file,
// --set section.key=value overrides (in order), then dedicated flags such as
// --seed / --steps / --count.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "twinattn/pipeline.hpp"

namespace {

twinattn::RunConfig assemble_config(const std::string& config_path, const std::vector<std::string>& sets) {
  twinattn::RunConfig cfg;
  if (!config_path.empty()) cfg = twinattn::load_run_config(config_path);
  for (const std::string& kv : sets) cfg.apply_override(kv);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"twinattn: multi-scale twin-attention instance segmentation on synthetic point clouds"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, checkpoint;
  std::vector<std::string> sets;
  int count = 4;
  long long seed = -1;
  int steps = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (sectioned key = value)");
    cmd->add_option("--set", sets, "override, e.g. --set train.steps=100")->take_all();
    cmd->add_option("--seed", seed, "root seed override");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate scene files");
  add_common(gen);
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of scenes");

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train);
  train->add_option("--data", data_dir, "directory of scene files")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--steps", steps, "training steps override");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "directory of scene files")->required();
  eval->add_option("--out", out_dir, "output directory")->required();

  CLI::App* inspect = app.add_subcommand("inspect", "print parameter counts of a checkpoint");
  inspect->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    twinattn::RunConfig cfg = assemble_config(config_path, sets);
    if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
    if (steps >= 0) cfg.train.steps = steps;

    if (gen->parsed()) {
      twinattn::run_gen(cfg, out_dir, count, cfg.seed);
    } else if (train->parsed()) {
      twinattn::run_train(cfg, data_dir, out_dir);
    } else if (eval->parsed()) {
      const auto report = twinattn::run_eval(cfg, checkpoint, data_dir, out_dir);
      std::printf("mAP %.6f  mAP50 %.6f  mAP25 %.6f\n", report.map, report.map50, report.map25);
    } else if (inspect->parsed()) {
      twinattn::run_inspect(checkpoint, std::cout);
    }
  } catch (const twinattn::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const twinattn::IoError& e) {
    std::cerr << "error: io: " << e.what() << "\n";
    return 2;
  } catch (const twinattn::CapacityError& e) {
    std::cerr << "error: capacity: " << e.what() << "\n";
    return 3;
  } catch (const twinattn::PartitionError& e) {
    std::cerr << "error: partition: " << e.what() << "\n";
    return 3;
  } catch (const twinattn::DimensionError& e) {
    std::cerr << "error: dimension: " << e.what() << "\n";
    return 3;
  } catch (const twinattn::NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
