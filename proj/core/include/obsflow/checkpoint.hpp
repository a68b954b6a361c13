#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "obsflow/mat.hpp"
#include "obsflow/neuralop.hpp"

namespace obsflow::nop {

// Serialized model state. `task_hash` ties a checkpoint to the task spec it
// was trained for so evaluation can refuse mismatched data. Optimizer moments
// are optional and parallel to `params` when present.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t task_hash = 0;
  std::uint64_t init_seed = 0;
  long train_steps = 0;
  std::vector<std::pair<std::string, Mat>> params;
  bool has_optimizer = false;
  std::vector<Mat> adam_m, adam_v;
};

// Captures the model's current weights (no optimizer state).
Checkpoint snapshot(const Model& model, std::uint64_t task_hash, std::uint64_t init_seed,
                    long train_steps);

// Rebuilds a model from a checkpoint: constructs from config, then overwrites
// every named parameter.
Model restore_model(const Checkpoint& ckpt);

// OBSP1 container. Layout: magic "OBSPARM1", u32 little-endian header length,
// JSON header (config, seeds, parameter names and shapes, optimizer flag),
// then one row-major f64 blob per parameter in header order, then the two
// Adam moment blobs per parameter when optimizer state is present, and a
// trailing CRC-32 of everything after the magic.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace obsflow::nop
