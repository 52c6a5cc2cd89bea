#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "events.hpp"
#include "rng.hpp"

namespace stpp {

/// Conditional intensity callable: lambda(history, t, s), per unit time x area.
using IntensityFn =
    std::function<double(std::span<const Event>, double, const std::array<double, 2>&)>;

/// Closed-form ground-truth generating kernels for the synthetic datasets.
/// `window`, `mu` and the fitting hints (tau_max, a_max, ranks) are recorded
/// in dataset metadata; the kernel formulas themselves are fixed.
struct TrueModel {
    std::string id;
    double mu = 0.0;
    Window window;
    double tau_max = 0.0;       // recommended fitting truncation
    double a_max = 0.0;         // recommended spatial truncation (0 if temporal)
    int temporal_rank = 1;      // recommended fitting ranks
    int spatial_rank = 0;
    double lambda_bar0 = 0.0;   // starting guess for the dominating rate
    int series_terms = 20;      // series truncation for the infinite-rank kernel

    double kernel(double t_prev, double t, const std::array<double, 2>& s_prev,
                  const std::array<double, 2>& s) const;

    /// max(0, mu + sum of kernels); the generating intensity is clamped so
    /// inhibiting kernels stay valid.
    double intensity(std::span<const Event> history, double t,
                     const std::array<double, 2>& s) const;

    /// Integral of the kernel of an event over the remaining window
    /// (t_i, T] x S: analytic in time, quadrature over space where the
    /// spatial factor is not separable.
    double event_mass(const Event& e) const;

    /// Exact log-likelihood of a sequence under this generating model.
    double loglik(const EventSequence& seq) const;

    IntensityFn as_intensity_fn() const;
};

/// Preset registry keyed by dataset id.
TrueModel true_model(const std::string& id);
std::vector<std::string> true_model_ids();

/// One sequence by thinning a dominating homogeneous process: candidate times
/// with exponential gaps at rate lambda_bar * |S|, locations uniform on S,
/// acceptance D * lambda_bar <= lambda(t, s | H); if the final accepted event
/// lands at or past T it is dropped. Draw order per candidate: gap, location
/// coordinates, acceptance variate.
EventSequence thinning_sample(const IntensityFn& lambda, const Window& window, double lambda_bar,
                              Rng& rng);

/// Dominating-rate calibration: repeatedly simulates a few pilot sequences
/// (domination not enforced) and triples the observed intensity supremum
/// until it safely dominates. Deterministic in the seed.
double calibrate_lambda_bar(const TrueModel& tm, std::uint64_t seed);

/// num_sequences independent sequences with per-sequence derived seeds;
/// sequence i is produced from derive_seed(seed, 4000 + i) regardless of
/// thread count.
Dataset generate_dataset(const TrueModel& tm, int num_sequences, std::uint64_t seed,
                         int threads = 1);

}  // namespace stpp
