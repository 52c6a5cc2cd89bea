#pragma once

#include <span>
#include <vector>

#include "grids.hpp"
#include "model.hpp"

namespace stpp {

/// Tabulated basis-net evaluations shared by every likelihood term:
/// phi_l and its cumulative integral F_l on U_t, v_r on U_s, and the mark
/// nets on the categorical mark set.
struct Tables {
    std::vector<std::vector<double>> phi_vals;  // [L][|U_t|]
    std::vector<std::vector<double>> cumint;    // [L][|U_t|], trapezoidal F_l
    std::vector<std::vector<double>> v_vals;    // [R][|U_s|]
    std::vector<std::vector<double>> g_vals;    // [Q][num_marks]
    std::vector<std::vector<double>> h_vals;    // [Q][num_marks]
    std::vector<double> h_sum;                  // [Q], sum of h_q over marks
};

Tables build_tables(const KernelModel& model, const GridSpec& grids);

/// Linear interpolation of phi_l at x; exactly 0 past the table domain for
/// displacement tables, clamped to the last node for history-time tables.
double interp_phi(const Tables& tables, const GridSpec& grids, int l, double x);

/// Linear interpolation of F_l at x; saturates at the full integral past the
/// table domain and is 0 at x <= 0.
double interp_cumint(const Tables& tables, const GridSpec& grids, int l, double x);

double log_summation(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                     const GridSpec& grids);

/// Smallest intensity over the sequence's events (+inf when empty). Used by
/// the trainer to keep accepted iterates strictly inside the feasible region.
double min_event_intensity(const KernelModel& model, const EventSequence& seq,
                           const Tables& tables, const GridSpec& grids);

double integral_term(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                     const GridSpec& grids, const Window& window);

/// Integral of the (mark-summed) intensity over [a, b] x S with the events
/// of `seq` as history; events at or after b contribute nothing. Equals
/// integral_term when [a, b] = [0, window.t_end].
double intensity_mass(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                      const GridSpec& grids, const Window& window, double a, double b);

/// Integral over S (and the mark set) of the conditional intensity at time t.
double ground_intensity(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                        const GridSpec& grids, const Window& window, double t);

double log_likelihood(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                      const GridSpec& grids, const Window& window);

double barrier(const KernelModel& model, const EventSequence& seq, const Tables& tables,
               const GridSpec& grids, const Window& window, double b);

double barrier_marked(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                      const GridSpec& grids, const Window& window, double b);

/// Intensities on the barrier grid (row-major over t nodes then s nodes);
/// for marked models returns the Q x |grid| values of F_hat_q instead.
std::vector<double> barrier_grid_values(const KernelModel& model, const EventSequence& seq,
                                        const Tables& tables, const GridSpec& grids);

/// Batch objective: sum of negative per-sequence log-likelihoods plus the
/// batch-averaged barrier scaled by 1/w.
double objective(const KernelModel& model, std::span<const EventSequence> batch,
                 const Tables& tables, const GridSpec& grids, const Window& window, double w,
                 double b);

/// Overload that builds the tables itself (the instrumented-count form).
double objective(const KernelModel& model, std::span<const EventSequence> batch,
                 const GridSpec& grids, const Window& window, double w, double b);

struct ObjectiveParts {
    double value = 0.0;
    double neg_loglik = 0.0;  // sum over the batch
    double barrier = 0.0;     // batch average, unweighted by 1/w
};

/// Value and gradient of the batch objective with respect to the flat
/// parameter vector (layout of KernelModel::get_params). b is treated as a
/// constant of the batch.
ObjectiveParts objective_with_grad(const KernelModel& model, std::span<const EventSequence> batch,
                                   const GridSpec& grids, const Window& window, double w, double b,
                                   std::vector<double>& grad);

}  // namespace stpp
