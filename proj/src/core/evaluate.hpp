#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "likelihood.hpp"
#include "simulate.hpp"

namespace stpp {

struct EvalConfig {
    GridSizes grids;
    int mre_time_nodes = 100;      // midpoint nodes over [0, T]
    int mre_space_axis = 15;       // midpoint cells per spatial axis
    int predict_time_nodes = 200;  // trapezoid nodes over the survival horizon
    int predict_space_axis = 12;
    double survival_cutoff = 1e-6;     // truncate the time integral below this
    double max_horizon_factor = 10.0;  // horizon cap, in units of the window length

    void validate() const;
};

struct MreResult {
    double value = 0.0;  // grid average of |true - fitted| / true
    long excluded = 0;   // grid points skipped because the true intensity was <= 0
};

struct PredictionResult {
    double t_hat = 0.0;
    std::array<double, 2> s_hat{0.0, 0.0};
    bool horizon_exceeded = false;  // survival never fell below the cutoff
    double survival_tail = 0.0;     // survival remaining at the truncation point
};

enum class PredTask { time_rmse, time_mae, location_mae, type_accuracy };

PredTask pred_task_from_string(const std::string& s);

struct EvalReport {
    double loglik_per_event = std::numeric_limits<double>::quiet_NaN();
    std::size_t num_events = 0;
    std::vector<double> per_seq_loglik;

    double mre = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> per_seq_mre;
    long mre_excluded = 0;

    double time_rmse = std::numeric_limits<double>::quiet_NaN();
    double time_mae = std::numeric_limits<double>::quiet_NaN();
    double location_mae = std::numeric_limits<double>::quiet_NaN();
    double type_accuracy = std::numeric_limits<double>::quiet_NaN();
    long horizon_warnings = 0;  // predictions truncated before the cutoff
};

/// Sum of sequence log-likelihoods divided by the total event count.
double test_loglik_per_event(const KernelModel& model, std::span<const EventSequence> test,
                             const Window& window, const GridSizes& sizes);

/// Mean relative error of the fitted intensity against a reference intensity
/// on a midpoint grid over [0, T] x S, conditioning both on the sequence's
/// own history. Normalized as a grid average so values are comparable across
/// window sizes. Grid points where the reference is <= 0 are excluded.
MreResult mre(const IntensityFn& reference, const KernelModel& fitted, const EventSequence& seq,
              const Window& window, int time_nodes, int space_axis);

/// Density of the next event at (t, s) given the history: lambda(t, s) times
/// the survival factor exp(-integral of lambda over (t_n, t) x S).
double predictive_density(const KernelModel& model, const EventSequence& history,
                          const Window& window, const GridSizes& sizes, double t,
                          const std::array<double, 2>& s);

/// Expected time and location of the next event by quadrature of the
/// predictive density; the time integral is truncated once survival drops
/// below cfg.survival_cutoff (or at the horizon cap, with a warning flag).
PredictionResult predict_next_event(const KernelModel& model, const EventSequence& history,
                                    const Window& window, const EvalConfig& cfg);

/// Predicts the last event of each test sequence from its prefix and
/// aggregates the chosen error. type_accuracy requires a marked model.
double prediction_error(const KernelModel& model, std::span<const EventSequence> test,
                        const Window& window, const EvalConfig& cfg, PredTask task);

/// Numerical rank of f evaluated on an n x n uniform grid (endpoints
/// included): the number of singular values above tol * sigma_max.
int kernel_matrix_rank(const std::function<double(double, double)>& f,
                       const std::array<double, 2>& x_range,
                       const std::array<double, 2>& y_range, int n_grid, double tol = 1e-10);

/// Full metric sweep: log-likelihood always, MRE when a reference intensity
/// is given, prediction errors when requested.
EvalReport evaluate(const KernelModel& model, std::span<const EventSequence> test,
                    const Window& window, const EvalConfig& cfg,
                    const IntensityFn* reference = nullptr, bool with_prediction = false);

std::string eval_report_json(const EvalReport& report);

/// CSV of the spatially integrated intensity over time for one sequence:
/// columns t, fitted, and optionally reference.
void write_intensity_curve_csv(const std::string& path, const KernelModel& model,
                               const EventSequence& seq, const Window& window,
                               const GridSizes& sizes, int time_nodes,
                               const IntensityFn* reference = nullptr);

/// Long-format CSV (x, y, value) of f on an n x n grid, for external plotting.
void write_kernel_heatmap_csv(const std::string& path,
                              const std::function<double(double, double)>& f,
                              const std::array<double, 2>& x_range,
                              const std::array<double, 2>& y_range, int n_grid);

}  // namespace stpp
