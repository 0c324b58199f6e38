#include "twinattn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "twinattn/rng.hpp"

namespace twinattn {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'W', 'A', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint64_t read_u64(std::ifstream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterStore& params, const std::string& config_text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open for write: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, fnv1a64(config_text));
  write_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_u64(out, params.count());
  for (const auto& p : params.all()) {
    write_u64(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u64(out, static_cast<uint64_t>(p.tensor.rows));
    write_u64(out, static_cast<uint64_t>(p.tensor.cols));
    out.write(reinterpret_cast<const char*>(p.tensor.data.data()),
              static_cast<std::streamsize>(p.tensor.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint: write failed: " + path);
}

namespace {

CheckpointHeader read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  CheckpointHeader h;
  h.config_hash = read_u64(in);
  const uint64_t cfg_len = read_u64(in);
  h.config_text.resize(cfg_len);
  in.read(h.config_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw IoError("checkpoint: truncated config text in " + path);
  if (fnv1a64(h.config_text) != h.config_hash) {
    throw IoError("checkpoint: config hash mismatch in " + path);
  }
  h.record_count = read_u64(in);
  return h;
}

}  // namespace

CheckpointHeader load_checkpoint(const std::string& path, ParameterStore& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path);
  CheckpointHeader h = read_header(in, path);
  for (uint64_t r = 0; r < h.record_count; ++r) {
    const uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = static_cast<int>(read_u64(in));
    const auto cols = static_cast<int>(read_u64(in));
    Parameter* p = params.find(name);
    if (!p) p = &params.create(name, rows, cols);
    if (p->tensor.rows != rows || p->tensor.cols != cols) {
      throw IoError("checkpoint: shape mismatch for " + name);
    }
    in.read(reinterpret_cast<char*>(p->tensor.data.data()),
            static_cast<std::streamsize>(p->tensor.data.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated record " + name);
  }
  return h;
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path);
  return read_header(in, path);
}

}  // namespace twinattn
