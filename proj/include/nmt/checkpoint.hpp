#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nmt/model.hpp"
#include "nmt/optim.hpp"
#include "nmt/vocab.hpp"

namespace nmt {

// Everything needed to resume decoding (and optionally training) a model:
// configuration, the shared token vocabulary, all parameter tensors, the
// training step reached, the dropout RNG state, and the Adam moments.
//
// On disk: a line-oriented text header (version, config, vocabulary, named
// shape table) followed by a "payload" marker and raw little-endian 64-bit
// floats in shape-table order; Adam moments follow the parameters when
// present. Save -> load -> save is byte-identical.
struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  ModelParams params;
  std::int64_t step = 0;
  std::string rng_state;

  bool has_optimizer = false;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.0;
  double adam_eps = 0.0;
  std::int64_t adam_steps = 0;
  std::map<std::string, AdamSlots> adam_slots;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Validates version, config, shape table, and payload length; throws IoError
// on file-level problems and DimError naming the first mismatched tensor.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nmt
