#pragma once

#include <cstdint>
#include <string>

#include "events.hpp"
#include "model.hpp"
#include "trainer.hpp"

namespace stpp {

/// Line-delimited JSON: a header record with provenance (kernel id, mu,
/// seed, window, sequence count), then one record per sequence
/// {"T":..., "S":[[lo,hi],...], "events":[[t, s1, s2?, mark?], ...]}.
/// Writes are atomic (temp file + rename); values round-trip exactly.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

/// Versioned model checkpoint: spec, flat parameter vector, and optionally
/// the optimizer state needed to resume training bit-for-bit.
struct Checkpoint {
    KernelModel model;
    std::uint64_t model_seed = 0;
    bool has_state = false;
    TrainState state;
};

void save_checkpoint(const std::string& path, const KernelModel& model,
                     const TrainState* state = nullptr, std::uint64_t model_seed = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stpp
