#pragma once

#include <iosfwd>

#include "twinattn/config.hpp"
#include "twinattn/evaluate.hpp"
#include "twinattn/trainer.hpp"

namespace twinattn {

// Command implementations shared by the CLI and the test suites. Every
// command echoes the effective config into its output directory, and all
// outputs are byte-reproducible for a fixed (config, seed).

// Writes count scene files (scene_0000.txt ...) with seeds base_seed+i plus
// manifest.json carrying per-scene seed, size and label-projection fidelity.
void run_gen(const RunConfig& cfg, const std::string& out_dir, int count, uint64_t base_seed);

// Trains on every scene file in data_dir; writes checkpoints and a
// line-delimited training log.
void run_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir);

// Loads a checkpoint (model geometry comes from its header), runs inference
// over data_dir and writes report.txt plus summary.json.
EvalReport run_eval(const RunConfig& cfg, const std::string& checkpoint_path, const std::string& data_dir,
                    const std::string& out_dir);

// Prints grouped parameter counts for a checkpoint.
void run_inspect(const std::string& checkpoint_path, std::ostream& out);

// Sorted scene files ("scene_*.txt") under a directory.
std::vector<std::string> list_scene_files(const std::string& dir);

// Loads every scene in dir and derives its pack under the given config.
std::vector<ScenePack> load_scene_packs(const RunConfig& cfg, const std::string& data_dir,
                                        const std::string& scale_mode);

}  // namespace twinattn
