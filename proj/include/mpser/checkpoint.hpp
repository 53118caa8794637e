#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mpser/meta.hpp"
#include "mpser/model.hpp"

namespace mpser {

/// Self-describing parameter snapshot. On disk: magic "MPCK", u16 version,
/// u64 config digest, u64 seed, u64 training step, u32 tensor count, then per
/// tensor: u32 name length + name bytes, u32 rank, u32 extents, and the
/// values as little-endian f64. load(save(c)) is bitwise.
struct Checkpoint {
  std::uint16_t version = 1;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;

  static Checkpoint from_model(const ModelParams& params, const LSLRTable* lslr);
  ModelParams to_model() const;
  bool has_lslr() const;
  LSLRTable to_lslr() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mpser
