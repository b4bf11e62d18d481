#ifndef AAMULET_CHECKPOINT_HPP_
#define AAMULET_CHECKPOINT_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aamulet/network.hpp"

namespace aamulet {

// Optimizer state carried across a resume: completed iterations, how many
// plateau decays have fired (the learning rate is re-derived from the base
// rate by that many sequential multiplications, so a resumed run reproduces
// the uninterrupted one bit-exactly), and the recent raw-loss window the
// plateau rule looks at.
struct OptimState {
  std::int64_t iter = 0;
  int decay_count = 0;
  std::vector<float> loss_history;  // most recent last, capped at 200
};

struct Checkpoint {
  NetworkConfig config;
  ParameterStore store;
  std::optional<OptimState> optim;
};

// File layout: magic "AAMU", version u32 LE, tensor count u32 LE, then per
// tensor: name length u16 LE, UTF-8 name, rank u8 (= 4), dims 4x u32 LE,
// payload 32-bit LE reals. The architecture, momentum buffers and optimizer
// state ride along as extra tensors (cfg.*, mom.*, opt.*); round-trips are
// bit-exact.
void save_checkpoint(const std::string& path, const ParameterStore& store,
                     const NetworkConfig& config,
                     const OptimState* optim = nullptr);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace aamulet

#endif  // AAMULET_CHECKPOINT_HPP_
