#pragma once

#include <string>

#include "twinattn/autodiff.hpp"

namespace twinattn {

// Flat binary archive of (name, rows, cols, little-endian f64 data) records.
// The header carries a hash of the canonical model-config string plus the
// config text itself, so a checkpoint is self-describing. Round-trips are
// bit-exact.
struct CheckpointHeader {
  uint64_t config_hash = 0;
  std::string config_text;
  uint64_t record_count = 0;
};

void save_checkpoint(const std::string& path, const ParameterStore& params, const std::string& config_text);

// Loads every record into `params`, creating parameters as needed. Returns
// the header. Throws IoError on malformed files.
CheckpointHeader load_checkpoint(const std::string& path, ParameterStore& params);

// Header-only read (used by `inspect`).
CheckpointHeader read_checkpoint_header(const std::string& path);

}  // namespace twinattn
