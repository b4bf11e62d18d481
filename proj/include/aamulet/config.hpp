#ifndef AAMULET_CONFIG_HPP_
#define AAMULET_CONFIG_HPP_

#include <string>

#include "aamulet/data_io.hpp"
#include "aamulet/network.hpp"
#include "aamulet/training.hpp"

namespace aamulet {

// One JSON document with sections network/loss/optim/augment/data. Every
// field is optional and falls back to the documented default; unknown keys
// are rejected by full path. data.seed is the run seed (dataset synthesis,
// initialization, batch sampling); AAMULET_SEED overrides it when set.
struct RunConfig {
  NetworkConfig network;
  LossConfig loss;
  OptimConfig optim;
  AugmentSpec augment;
  SynthSpec data;

  void validate() const {
    network.validate();
    optim.validate();
    augment.validate();
    data.validate();
    loss.resolve(network.levels);
  }
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig parse_run_config_file(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);

// Applies the AAMULET_SEED environment override, if present.
void apply_seed_override(RunConfig& cfg);

}  // namespace aamulet

#endif  // AAMULET_CONFIG_HPP_
