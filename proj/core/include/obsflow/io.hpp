#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "obsflow/dynsys.hpp"
#include "obsflow/errors.hpp"
#include "obsflow/mat.hpp"

namespace obsflow::data {

enum class TaskKind { Smoothing, Forecasting };
enum class Split { Train, Test };

const char* to_string(TaskKind k);
const char* to_string(Split s);
TaskKind task_kind_from_string(const std::string& s);
Split split_from_string(const std::string& s);

/// Fully determines one learning task: which system, which windows, which
/// sampling step, and (KS only) the input band limit.
struct TaskSpec {
  TaskKind task = TaskKind::Smoothing;
  dynsys::SystemSpec system;
  double input_t0 = 0.0;
  double input_t1 = 0.0;
  double output_t0 = 0.0;
  double output_t1 = 0.0;
  double dt = 0.0;
  double burn_in = 0.0;
  /// Band limit applied to inputs, and to outputs too when forecasting.
  std::optional<int> filter_modes;

  long input_len() const;
  long output_len() const;
  long input_dim() const;
  /// Forecasting targets the observed components; smoothing targets the
  /// unobserved ones, or the full state when q is empty (filtered-field tasks).
  long output_dim() const;

  /// Throws ConfigError on any violated invariant. Smoothing windows must be
  /// equal; forecasting output must start where the input ends; both windows
  /// start at 0 and are divisible by dt; filter_modes requires a KS system
  /// observed on the full grid.
  void validate() const;

  std::string to_json() const;
  static TaskSpec from_json(const std::string& text);
  /// FNV-1a of the canonical JSON form. Stable across runs and platforms.
  std::uint64_t hash() const;
};

/// A generated sample set. inputs[j] is [N_in x d_in], outputs[j] is
/// [N_out x d_out]; streams[j] reproduces sample j bit-exactly together
/// with base_seed.
struct Dataset {
  TaskSpec task;
  Split split = Split::Train;
  std::vector<Mat> inputs;
  std::vector<Mat> outputs;
  std::uint64_t base_seed = 0;
  std::vector<std::uint64_t> streams;
  long retries = 0;

  long num_samples() const { return static_cast<long>(inputs.size()); }
  /// Shape consistency against task, finiteness, J >= 1. Throws.
  void validate() const;
};

/// OBSF1 container. Layout: magic "OBSFLOW1"; u32 little-endian header
/// length; JSON header (task, split, shapes, seeds, dtype, retries); row-major
/// f64 blobs for inputs then outputs; trailing CRC32 of everything after the
/// magic. Round-trips bit-exactly.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace obsflow::data
