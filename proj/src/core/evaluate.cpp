#include "evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "io_util.hpp"

namespace stpp {

namespace {

// Midpoint cell centers along one axis of S.
std::vector<double> axis_cells(const Window& w, int dim, int nodes) {
    const double lo = w.s_bounds[dim][0], hi = w.s_bounds[dim][1];
    std::vector<double> out(nodes);
    for (int i = 0; i < nodes; ++i)
        out[i] = lo + (hi - lo) * (i + 0.5) / nodes;
    return out;
}

// Spatial midpoint grid over S (single dummy cell for purely temporal models).
struct SpaceGrid {
    std::vector<std::array<double, 2>> cells;
    double cell_area = 1.0;
};

SpaceGrid space_grid(const Window& w, int axis_nodes) {
    SpaceGrid g;
    if (w.spatial_dim == 0) {
        g.cells.push_back({0.0, 0.0});
        return g;
    }
    const auto xs = axis_cells(w, 0, axis_nodes);
    if (w.spatial_dim == 1) {
        for (double x : xs) g.cells.push_back({x, 0.0});
        g.cell_area = (w.s_bounds[0][1] - w.s_bounds[0][0]) / axis_nodes;
        return g;
    }
    const auto ys = axis_cells(w, 1, axis_nodes);
    for (double x : xs)
        for (double y : ys) g.cells.push_back({x, y});
    g.cell_area = (w.s_bounds[0][1] - w.s_bounds[0][0]) *
                  (w.s_bounds[1][1] - w.s_bounds[1][0]) /
                  static_cast<double>(axis_nodes * axis_nodes);
    return g;
}

// Conditional intensity of the fitted model at (t, s), mark-summed.
double point_intensity(const KernelModel& m, std::span<const Event> history, double t,
                       const std::array<double, 2>& s) {
    if (m.Q() == 0) return m.intensity(history, t, s);
    double total = 0.0;
    for (int c = 0; c < m.spec.num_marks; ++c) total += m.intensity(history, t, s, c);
    return total;
}

double last_time(const EventSequence& history) {
    return history.events.empty() ? 0.0 : history.events.back().t;
}

}  // namespace

void EvalConfig::validate() const {
    grids.validate();
    if (mre_time_nodes < 1 || mre_space_axis < 1)
        throw ConfigError("MRE grid sizes must be positive");
    if (predict_time_nodes < 2 || predict_space_axis < 1)
        throw ConfigError("prediction quadrature sizes must be at least 2 and 1");
    if (survival_cutoff <= 0.0 || survival_cutoff >= 1.0)
        throw ConfigError("survival_cutoff must lie in (0, 1)");
    if (max_horizon_factor <= 0.0) throw ConfigError("max_horizon_factor must be positive");
}

PredTask pred_task_from_string(const std::string& s) {
    if (s == "time-rmse") return PredTask::time_rmse;
    if (s == "time-mae") return PredTask::time_mae;
    if (s == "location-mae") return PredTask::location_mae;
    if (s == "type-accuracy") return PredTask::type_accuracy;
    throw ConfigError("unknown prediction task: " + s);
}

double test_loglik_per_event(const KernelModel& model, std::span<const EventSequence> test,
                             const Window& window, const GridSizes& sizes) {
    std::size_t events = 0;
    for (const auto& seq : test) events += seq.events.size();
    if (events == 0) throw ConfigError("test set has no events");
    const GridSpec grids = GridSpec::build(model.spec, window, sizes);
    const Tables tables = build_tables(model, grids);
    double total = 0.0;
    for (const auto& seq : test)
        total += log_likelihood(model, seq, tables, grids, window);
    return total / static_cast<double>(events);
}

MreResult mre(const IntensityFn& reference, const KernelModel& fitted, const EventSequence& seq,
              const Window& window, int time_nodes, int space_axis) {
    if (fitted.Q() > 0) throw ConfigError("intensity recovery is defined for unmarked models");
    if (time_nodes < 1 || space_axis < 1) throw ConfigError("MRE grid sizes must be positive");
    const SpaceGrid sg = space_grid(window, space_axis);
    MreResult out;
    double sum = 0.0;
    long used = 0;
    std::size_t k = 0;
    for (int i = 0; i < time_nodes; ++i) {
        const double t = window.t_end * (i + 0.5) / time_nodes;
        while (k < seq.events.size() && seq.events[k].t < t) ++k;
        const std::span<const Event> hist(seq.events.data(), k);
        for (const auto& s : sg.cells) {
            const double truth = reference(hist, t, s);
            if (!(truth > 0.0)) {
                ++out.excluded;
                continue;
            }
            sum += std::abs(truth - fitted.intensity(hist, t, s)) / truth;
            ++used;
        }
    }
    if (used == 0) throw ConfigError("reference intensity is non-positive on the whole grid");
    out.value = sum / static_cast<double>(used);
    return out;
}

double predictive_density(const KernelModel& model, const EventSequence& history,
                          const Window& window, const GridSizes& sizes, double t,
                          const std::array<double, 2>& s) {
    const double t_n = last_time(history);
    if (!(t > t_n)) throw DomainError("density is defined for times after the last event");
    const GridSpec grids = GridSpec::build(model.spec, window, sizes);
    const Tables tables = build_tables(model, grids);
    const double mass = intensity_mass(model, history, tables, grids, window, t_n, t);
    return point_intensity(model, history.events, t, s) * std::exp(-mass);
}

PredictionResult predict_next_event(const KernelModel& model, const EventSequence& history,
                                    const Window& window, const EvalConfig& cfg) {
    cfg.validate();
    const double t_n = last_time(history);
    const GridSpec grids = GridSpec::build(model.spec, window, cfg.grids);
    const Tables tables = build_tables(model, grids);
    const double target_mass = -std::log(cfg.survival_cutoff);
    const double cap = cfg.max_horizon_factor * window.t_end;

    // Find the truncation horizon by doubling until the survival factor
    // drops below the cutoff.
    double span = window.t_end > t_n ? window.t_end - t_n : window.t_end;
    PredictionResult out;
    double mass = intensity_mass(model, history, tables, grids, window, t_n, t_n + span);
    while (mass < target_mass && span < cap) {
        span = std::min(2.0 * span, cap);
        mass = intensity_mass(model, history, tables, grids, window, t_n, t_n + span);
    }
    if (mass < target_mass) out.horizon_exceeded = true;
    out.survival_tail = std::exp(-mass);

    // Midpoint nodes: the intensity jumps at t_n (the last event's influence
    // starts there), so nodes stay strictly inside the integration interval.
    const int nt = cfg.predict_time_nodes;
    const SpaceGrid sg = space_grid(window, cfg.predict_space_axis);
    const double dt = span / nt;
    double t_acc = 0.0;
    std::array<double, 2> s_acc{0.0, 0.0};
    for (int i = 0; i < nt; ++i) {
        const double t = t_n + (i + 0.5) * dt;
        const double surv =
            std::exp(-intensity_mass(model, history, tables, grids, window, t_n, t));
        const double rate = ground_intensity(model, history, tables, grids, window, t);
        t_acc += dt * t * rate * surv;
        if (window.spatial_dim > 0) {
            for (const auto& s : sg.cells) {
                const double lam = point_intensity(model, history.events, t, s);
                const double f = dt * surv * lam * sg.cell_area;
                s_acc[0] += f * s[0];
                if (window.spatial_dim == 2) s_acc[1] += f * s[1];
            }
        }
    }
    out.t_hat = t_acc;
    out.s_hat = s_acc;
    return out;
}

double prediction_error(const KernelModel& model, std::span<const EventSequence> test,
                        const Window& window, const EvalConfig& cfg, PredTask task) {
    cfg.validate();
    if (task == PredTask::type_accuracy && model.Q() == 0)
        throw ConfigError("type accuracy requires a marked model");
    double acc = 0.0;
    long count = 0;
    for (const auto& seq : test) {
        if (seq.events.empty()) continue;
        const Event& target = seq.events.back();
        EventSequence prefix;
        prefix.events.assign(seq.events.begin(), seq.events.end() - 1);

        if (task == PredTask::type_accuracy) {
            int best = 0;
            double best_val = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < model.spec.num_marks; ++c) {
                const double lam =
                    model.intensity(prefix.events, target.t, target.s, c);
                if (lam > best_val) {
                    best_val = lam;
                    best = c;
                }
            }
            acc += best == target.mark ? 1.0 : 0.0;
            ++count;
            continue;
        }

        const PredictionResult pred = predict_next_event(model, prefix, window, cfg);
        switch (task) {
            case PredTask::time_rmse:
                acc += (pred.t_hat - target.t) * (pred.t_hat - target.t);
                break;
            case PredTask::time_mae:
                acc += std::abs(pred.t_hat - target.t);
                break;
            case PredTask::location_mae: {
                const double dx = pred.s_hat[0] - target.s[0];
                const double dy =
                    window.spatial_dim == 2 ? pred.s_hat[1] - target.s[1] : 0.0;
                acc += std::sqrt(dx * dx + dy * dy);
                break;
            }
            case PredTask::type_accuracy:
                break;
        }
        ++count;
    }
    if (count == 0) throw ConfigError("no test sequence has an event to predict");
    const double mean = acc / static_cast<double>(count);
    return task == PredTask::time_rmse ? std::sqrt(mean) : mean;
}

int kernel_matrix_rank(const std::function<double(double, double)>& f,
                       const std::array<double, 2>& x_range,
                       const std::array<double, 2>& y_range, int n_grid, double tol) {
    if (n_grid < 2) throw ConfigError("rank analysis needs at least a 2x2 grid");
    if (tol <= 0.0) throw ConfigError("rank tolerance must be positive");
    Eigen::MatrixXd a(n_grid, n_grid);
    for (int i = 0; i < n_grid; ++i) {
        const double x = x_range[0] + (x_range[1] - x_range[0]) * i / (n_grid - 1);
        for (int j = 0; j < n_grid; ++j) {
            const double y = y_range[0] + (y_range[1] - y_range[0]) * j / (n_grid - 1);
            a(i, j) = f(x, y);
        }
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) <= 0.0) return 0;
    const double cut = tol * sv(0);
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cut) ++rank;
    return rank;
}

EvalReport evaluate(const KernelModel& model, std::span<const EventSequence> test,
                    const Window& window, const EvalConfig& cfg, const IntensityFn* reference,
                    bool with_prediction) {
    cfg.validate();
    EvalReport report;

    const GridSpec grids = GridSpec::build(model.spec, window, cfg.grids);
    const Tables tables = build_tables(model, grids);
    double total = 0.0;
    for (const auto& seq : test) {
        const double ll = log_likelihood(model, seq, tables, grids, window);
        report.per_seq_loglik.push_back(ll);
        total += ll;
        report.num_events += seq.events.size();
    }
    if (report.num_events == 0) throw ConfigError("test set has no events");
    report.loglik_per_event = total / static_cast<double>(report.num_events);

    if (reference != nullptr) {
        double sum = 0.0;
        for (const auto& seq : test) {
            const MreResult r =
                mre(*reference, model, seq, window, cfg.mre_time_nodes, cfg.mre_space_axis);
            report.per_seq_mre.push_back(r.value);
            report.mre_excluded += r.excluded;
            sum += r.value;
        }
        report.mre = sum / static_cast<double>(test.size());
    }

    if (with_prediction) {
        double se = 0.0, ae = 0.0, loc = 0.0, hits = 0.0;
        long count = 0;
        for (const auto& seq : test) {
            if (seq.events.empty()) continue;
            const Event& target = seq.events.back();
            EventSequence prefix;
            prefix.events.assign(seq.events.begin(), seq.events.end() - 1);
            const PredictionResult pred = predict_next_event(model, prefix, window, cfg);
            if (pred.horizon_exceeded) ++report.horizon_warnings;
            se += (pred.t_hat - target.t) * (pred.t_hat - target.t);
            ae += std::abs(pred.t_hat - target.t);
            if (window.spatial_dim > 0) {
                const double dx = pred.s_hat[0] - target.s[0];
                const double dy =
                    window.spatial_dim == 2 ? pred.s_hat[1] - target.s[1] : 0.0;
                loc += std::sqrt(dx * dx + dy * dy);
            }
            if (model.Q() > 0) {
                int best = 0;
                double best_val = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < model.spec.num_marks; ++c) {
                    const double lam =
                        model.intensity(prefix.events, target.t, target.s, c);
                    if (lam > best_val) {
                        best_val = lam;
                        best = c;
                    }
                }
                hits += best == target.mark ? 1.0 : 0.0;
            }
            ++count;
        }
        if (count > 0) {
            report.time_rmse = std::sqrt(se / count);
            report.time_mae = ae / count;
            if (window.spatial_dim > 0) report.location_mae = loc / count;
            if (model.Q() > 0) report.type_accuracy = hits / count;
        }
    }
    return report;
}

namespace {

void put_finite(nlohmann::json& j, const char* key, double v) {
    if (std::isfinite(v)) j[key] = v;
}

}  // namespace

std::string eval_report_json(const EvalReport& report) {
    nlohmann::json j;
    j["loglik_per_event"] = report.loglik_per_event;
    j["num_events"] = report.num_events;
    j["per_seq_loglik"] = report.per_seq_loglik;
    if (!report.per_seq_mre.empty()) {
        j["mre"] = report.mre;
        j["per_seq_mre"] = report.per_seq_mre;
        j["mre_excluded"] = report.mre_excluded;
    }
    put_finite(j, "time_rmse", report.time_rmse);
    put_finite(j, "time_mae", report.time_mae);
    put_finite(j, "location_mae", report.location_mae);
    put_finite(j, "type_accuracy", report.type_accuracy);
    if (report.horizon_warnings > 0) j["horizon_warnings"] = report.horizon_warnings;
    return j.dump(2) + "\n";
}

void write_intensity_curve_csv(const std::string& path, const KernelModel& model,
                               const EventSequence& seq, const Window& window,
                               const GridSizes& sizes, int time_nodes,
                               const IntensityFn* reference) {
    if (time_nodes < 1) throw ConfigError("intensity curve needs at least one node");
    const GridSpec grids = GridSpec::build(model.spec, window, sizes);
    const Tables tables = build_tables(model, grids);
    const SpaceGrid sg = space_grid(window, 15);
    std::ostringstream out;
    out << (reference != nullptr ? "t,fitted,reference\n" : "t,fitted\n");
    char buf[128];
    std::size_t k = 0;
    for (int i = 0; i < time_nodes; ++i) {
        const double t = window.t_end * (i + 0.5) / time_nodes;
        const double fitted = ground_intensity(model, seq, tables, grids, window, t);
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g", t, fitted);
        out << buf;
        if (reference != nullptr) {
            while (k < seq.events.size() && seq.events[k].t < t) ++k;
            double ref = 0.0;
            for (const auto& s : sg.cells)
                ref += (*reference)(std::span<const Event>(seq.events.data(), k), t, s);
            ref *= window.spatial_dim > 0 ? sg.cell_area : 1.0;
            std::snprintf(buf, sizeof(buf), ",%.17g", ref);
            out << buf;
        }
        out << "\n";
    }
    atomic_write_text(path, out.str());
}

void write_kernel_heatmap_csv(const std::string& path,
                              const std::function<double(double, double)>& f,
                              const std::array<double, 2>& x_range,
                              const std::array<double, 2>& y_range, int n_grid) {
    if (n_grid < 2) throw ConfigError("heatmap needs at least a 2x2 grid");
    std::ostringstream out;
    out << "x,y,value\n";
    char buf[160];
    for (int i = 0; i < n_grid; ++i) {
        const double x = x_range[0] + (x_range[1] - x_range[0]) * i / (n_grid - 1);
        for (int j = 0; j < n_grid; ++j) {
            const double y = y_range[0] + (y_range[1] - y_range[0]) * j / (n_grid - 1);
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", x, y, f(x, y));
            out << buf;
        }
    }
    atomic_write_text(path, out.str());
}

}  // namespace stpp
