#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dbn/model.hpp"

namespace dbn {

/// Per-parameter ADAM states, aligned with for_each_trainable order.
struct OptimizerState {
    std::vector<AdamStateT<float>> states;
};

OptimizerState build_optimizer_state(ModelParams& params);

/// Binary checkpoint, little-endian throughout:
///   "DBNC" | version u32 | iteration u64 | tensor count u32 |
///   per tensor: name length u16, name, rank u8, extents u32 each,
///   raw float32 payload.
/// Model tensors carry their canonical names; ADAM moments are stored as
/// adam.m.<name> / adam.v.<name> plus an adam.t step vector; the RNG state
/// rides along as a byte-packed rng_state tensor. Writes are atomic.
void save_checkpoint(ModelParams& params, const OptimizerState* opt, const Rng* rng,
                     const std::string& path);

struct LoadedCheckpoint {
    ModelParams params;
    std::optional<OptimizerState> opt;
    std::optional<Rng> rng;
};

/// Rejects bad magic, unknown versions, truncation, and tensors whose
/// shapes disagree with the layer table, each with a distinct error kind.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace dbn
