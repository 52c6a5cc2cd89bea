#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "grids.hpp"
#include "likelihood.hpp"
#include "model.hpp"

namespace stpp {

struct TrainConfig {
    int batch_size = 64;
    int epochs = 50;
    double learning_rate = 0.1;
    double w0 = 1.0;          // initial barrier weight divisor
    double anneal = 1.2;      // w <- w * anneal after every batch
    double eps_b = 1e-3;      // b = (min grid intensity) - eps_b
    double min_intensity = 1e-8;  // accepted steps keep event intensities above this
    std::uint64_t seed = 0;   // drives batch shuffling only
    bool freeze_kernel = false;  // update only the background rate mu
    GridSizes grids;

    void validate() const;
};

/// One row of the training log.
struct EpochStats {
    int epoch = 0;
    double neg_loglik = 0.0;   // sum over the epoch's sequences
    double barrier = 0.0;      // batch-mean barrier, averaged over batches
    double w_end = 0.0;        // barrier weight after the epoch
    double b_last = 0.0;       // bound used by the epoch's final batch
    int step_retries = 0;      // rejected steps that needed shrinking
};

/// Mutable optimizer state, carried across epochs and checkpoints. Resuming
/// from a saved state reproduces the uninterrupted trajectory exactly.
struct TrainState {
    AdamState adam;
    double w = 1.0;
    std::int64_t batches_done = 0;
    int epochs_done = 0;
    std::vector<EpochStats> history;

    void init(const KernelModel& model, const TrainConfig& cfg);
};

/// Fisher-Yates permutation of 0..n-1 from a dedicated seed stream.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

/// Deterministic train/test split: shuffle, then the first
/// round(train_frac * n) indices train, the rest test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_test_split(
    std::size_t n, double train_frac, std::uint64_t seed);

/// Barrier bound for one batch: the smallest intensity (or mark-component
/// rate) over the batch's barrier grids, minus eps. May be negative.
double compute_b(const KernelModel& model, std::span<const EventSequence> batch,
                 const Tables& tables, const GridSpec& grids, double eps);

/// Smallest barrier-grid value across all given sequences under the current
/// parameters (the post-training positivity check).
double min_grid_intensity(const KernelModel& model, std::span<const EventSequence> seqs,
                          const GridSpec& grids);

/// Runs `cfg.epochs` further epochs of barrier-penalized maximum likelihood,
/// updating `model` and `state` in place. `state` must have been initialized
/// with TrainState::init (fresh run) or restored from a checkpoint.
void train(KernelModel& model, TrainState& state, std::span<const EventSequence> train_seqs,
           const Window& window, const TrainConfig& cfg);

/// Writes the training history as CSV (one row per epoch).
void write_history_csv(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace stpp
