#pragma once

#include <cstdlib>
#include <string>
#include <thread>

namespace obsflow {

/// Worker-count policy: an explicit request wins, else OBSFLOW_THREADS,
/// else 1. Serial by default so results are reproducible out of the box;
/// parallel paths are opt-in.
inline unsigned resolve_threads(unsigned requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("OBSFLOW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return 1;
}

}  // namespace obsflow
