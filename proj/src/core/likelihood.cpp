#include "likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stpp {

namespace {

struct InterpPoint {
    int node = 0;
    double frac = 0.0;  // clamped to [0,1]; saturates past the last node
};

InterpPoint locate(const GridSpec& g, double x) {
    int idx = static_cast<int>(x / g.dt);
    if (idx > g.sizes.ut - 2) idx = g.sizes.ut - 2;
    if (idx < 0) idx = 0;
    double f = x / g.dt - idx;
    if (f < 0.0) f = 0.0;
    if (f > 1.0) f = 1.0;
    return {idx, f};
}

bool spatial_contains(const Window& w, double x, double y) {
    if (x < w.s_bounds[0][0] || x > w.s_bounds[0][1]) return false;
    if (w.spatial_dim == 2 && (y < w.s_bounds[1][0] || y > w.s_bounds[1][1])) return false;
    return true;
}

// Per-sequence evaluation state shared by all likelihood terms: psi/u values
// over events, mark lookups, and the pair machinery reused for both event
// intensities and barrier-grid intensities.
class Engine {
public:
    Engine(const KernelModel& model, const Tables& tables, const GridSpec& grids,
           const Window& window)
        : m_(model),
          tb_(tables),
          gr_(grids),
          win_(window),
          sdim_(model.spec.spatial_dim),
          L_(model.L()),
          Re_(model.Re()),
          Qe_(model.Qe()),
          marked_(model.Q() > 0) {}

    void prep(const EventSequence& seq) {
        seq_ = &seq;
        n_ = static_cast<int>(seq.events.size());
        times_.resize(n_);
        for (int i = 0; i < n_; ++i) times_[i] = seq.events[i].t;
        psi_e_.assign(static_cast<std::size_t>(L_) * n_, 0.0);
        for (int l = 0; l < L_; ++l)
            for (int i = 0; i < n_; ++i)
                psi_e_[static_cast<std::size_t>(l) * n_ + i] = m_.eval_psi(l, times_[i]);
        if (sdim_ > 0) {
            u_e_.assign(static_cast<std::size_t>(Re_) * n_, 0.0);
            for (int r = 0; r < Re_; ++r)
                for (int i = 0; i < n_; ++i)
                    u_e_[static_cast<std::size_t>(r) * n_ + i] = m_.eval_u(r, seq.events[i].s);
        }
    }

    // F_q(t_c, s_c) of the bracketed history sum: for unmarked models the
    // single entry is lambda - mu.
    void fq_target(double t_c, const std::array<double, 2>& s_c, int jmax, double* fq) const {
        std::fill(fq, fq + Qe_, 0.0);
        const int jlo = static_cast<int>(
            std::lower_bound(times_.begin(), times_.begin() + jmax, t_c - m_.spec.tau_max) -
            times_.begin());
        const double a2 = m_.spec.a_max * m_.spec.a_max;
        double vv[8];
        for (int j = jlo; j < jmax; ++j) {
            const double tau = t_c - times_[j];
            if (tau > m_.spec.tau_max || tau <= 0.0) continue;
            if (sdim_ > 0) {
                std::array<double, 2> nu{s_c[0] - seq_->events[j].s[0],
                                         s_c[1] - seq_->events[j].s[1]};
                if (sdim_ == 1) nu[1] = 0.0;
                const double d2 = nu[0] * nu[0] + nu[1] * nu[1];
                if (d2 > a2) continue;
                for (int r = 0; r < Re_; ++r) vv[r] = m_.eval_v(r, nu);
            }
            const double x = m_.spec.temporal_param == TemporalParam::displacement ? tau : t_c;
            const int mj = seq_->events[j].mark;
            for (int l = 0; l < L_; ++l) {
                const double tl =
                    psi_e_[static_cast<std::size_t>(l) * n_ + j] * interp_phi(tb_, gr_, l, x);
                for (int r = 0; r < Re_; ++r) {
                    const double sr =
                        sdim_ > 0 ? u_e_[static_cast<std::size_t>(r) * n_ + j] * vv[r] : 1.0;
                    for (int q = 0; q < Qe_; ++q) {
                        const double gq = marked_ ? tb_.g_vals[q][mj] : 1.0;
                        fq[q] += m_.alpha_at(l, r, q) * tl * sr * gq;
                    }
                }
            }
        }
    }

    double event_lambda(int i, const double* fq) const {
        double lam = m_.mu;
        for (int q = 0; q < Qe_; ++q)
            lam += fq[q] * (marked_ ? tb_.h_vals[q][seq_->events[i].mark] : 1.0);
        return lam;
    }

    double log_sum() const {
        double total = 0.0;
        std::vector<double> fq(Qe_);
        for (int i = 0; i < n_; ++i) {
            fq_target(times_[i], seq_->events[i].s, i, fq.data());
            const double lam = event_lambda(i, fq.data());
            if (!(lam > 0.0))
                throw InfeasibilityError("non-positive intensity at event", i, lam);
            total += std::log(lam);
        }
        return total;
    }

    double min_lambda() const {
        double lo = std::numeric_limits<double>::infinity();
        std::vector<double> fq(Qe_);
        for (int i = 0; i < n_; ++i) {
            fq_target(times_[i], seq_->events[i].s, i, fq.data());
            lo = std::min(lo, event_lambda(i, fq.data()));
        }
        return lo;
    }

    // Temporal factor of the integral term for event i: phi_l integrated over
    // the in-window elapsed times.
    double temporal_integral(int l, double t_i) const {
        if (m_.spec.temporal_param == TemporalParam::displacement)
            return interp_cumint(tb_, gr_, l, win_.t_end - t_i);
        const double upper = std::min(t_i + m_.spec.tau_max, win_.t_end);
        return interp_cumint(tb_, gr_, l, upper) - interp_cumint(tb_, gr_, l, t_i);
    }

    // integral over S - s_i of the tabulated v_r, midpoint rule on U_s.
    void spatial_integral(int i, double* vint) const {
        if (sdim_ == 0) {
            vint[0] = 1.0;
            return;
        }
        std::fill(vint, vint + Re_, 0.0);
        const auto& s_i = seq_->events[i].s;
        for (std::size_t p = 0; p < gr_.us_nodes.size(); ++p) {
            if (!spatial_contains(win_, s_i[0] + gr_.us_nodes[p][0],
                                  s_i[1] + gr_.us_nodes[p][1]))
                continue;
            for (int r = 0; r < Re_; ++r) vint[r] += tb_.v_vals[r][p];
        }
        for (int r = 0; r < Re_; ++r) vint[r] *= gr_.cell_area;
    }

    double integral() const {
        const double mark_vol = marked_ ? m_.spec.num_marks : 1.0;
        double total = m_.mu * win_.area() * win_.t_end * mark_vol;
        std::vector<double> vint(Re_);
        for (int i = 0; i < n_; ++i) {
            spatial_integral(i, vint.data());
            const int mi = seq_->events[i].mark;
            for (int l = 0; l < L_; ++l) {
                const double ti = temporal_integral(l, times_[i]);
                const double pl = psi_e_[static_cast<std::size_t>(l) * n_ + i] * ti;
                for (int r = 0; r < Re_; ++r) {
                    const double ur =
                        sdim_ > 0 ? u_e_[static_cast<std::size_t>(r) * n_ + i] : 1.0;
                    for (int q = 0; q < Qe_; ++q) {
                        const double mk = marked_ ? tb_.g_vals[q][mi] * tb_.h_sum[q] : 1.0;
                        total += m_.alpha_at(l, r, q) * pl * ur * vint[r] * mk;
                    }
                }
            }
        }
        return total;
    }

    // integral of the mark-summed intensity over [a, b] x S; the history-time
    // variant applies the truncation window [t_i, t_i + tau_max] explicitly
    // because its tables span absolute time.
    double mass_between(double a, double b) const {
        const double mark_vol = marked_ ? m_.spec.num_marks : 1.0;
        double total = m_.mu * win_.area() * (b - a) * mark_vol;
        std::vector<double> vint(Re_);
        for (int i = 0; i < n_; ++i) {
            if (times_[i] >= b) break;
            spatial_integral(i, vint.data());
            const int mi = seq_->events[i].mark;
            for (int l = 0; l < L_; ++l) {
                double ml;
                if (m_.spec.temporal_param == TemporalParam::displacement) {
                    ml = interp_cumint(tb_, gr_, l, b - times_[i]) -
                         interp_cumint(tb_, gr_, l, a - times_[i]);
                } else {
                    const double lo = std::max(a, times_[i]);
                    const double hi = std::min(b, times_[i] + m_.spec.tau_max);
                    ml = hi > lo ? interp_cumint(tb_, gr_, l, hi) - interp_cumint(tb_, gr_, l, lo)
                                 : 0.0;
                }
                const double pl = psi_e_[static_cast<std::size_t>(l) * n_ + i] * ml;
                for (int r = 0; r < Re_; ++r) {
                    const double ur =
                        sdim_ > 0 ? u_e_[static_cast<std::size_t>(r) * n_ + i] : 1.0;
                    for (int q = 0; q < Qe_; ++q) {
                        const double mk = marked_ ? tb_.g_vals[q][mi] * tb_.h_sum[q] : 1.0;
                        total += m_.alpha_at(l, r, q) * pl * ur * vint[r] * mk;
                    }
                }
            }
        }
        return total;
    }

    // integral over S (and the mark set) of the intensity at time t.
    double ground_at(double t) const {
        const double mark_vol = marked_ ? m_.spec.num_marks : 1.0;
        double total = m_.mu * win_.area() * mark_vol;
        std::vector<double> vint(Re_);
        for (int i = 0; i < n_; ++i) {
            const double tau = t - times_[i];
            if (tau <= 0.0) break;
            if (tau > m_.spec.tau_max) continue;
            const double x = m_.spec.temporal_param == TemporalParam::displacement ? tau : t;
            spatial_integral(i, vint.data());
            const int mi = seq_->events[i].mark;
            for (int l = 0; l < L_; ++l) {
                const double pl =
                    psi_e_[static_cast<std::size_t>(l) * n_ + i] * interp_phi(tb_, gr_, l, x);
                for (int r = 0; r < Re_; ++r) {
                    const double ur =
                        sdim_ > 0 ? u_e_[static_cast<std::size_t>(r) * n_ + i] : 1.0;
                    for (int q = 0; q < Qe_; ++q) {
                        const double mk = marked_ ? tb_.g_vals[q][mi] * tb_.h_sum[q] : 1.0;
                        total += m_.alpha_at(l, r, q) * pl * ur * vint[r] * mk;
                    }
                }
            }
        }
        return total;
    }

    double barrier_value(double b) const {
        double total = 0.0;
        std::vector<double> fq(Qe_);
        std::size_t idx = 0;
        for (double t_c : gr_.bar_t_nodes) {
            const int jmax = static_cast<int>(
                std::lower_bound(times_.begin(), times_.end(), t_c) - times_.begin());
            for (const auto& s_c : gr_.bar_s_nodes) {
                fq_target(t_c, s_c, jmax, fq.data());
                if (marked_) {
                    for (int q = 0; q < Qe_; ++q) {
                        const double arg = fq[q] - b;
                        if (!(arg > 0.0))
                            throw InfeasibilityError("barrier infeasible at grid point",
                                                     static_cast<long>(idx), fq[q]);
                        total -= std::log(arg);
                    }
                } else {
                    const double lam = m_.mu + fq[0];
                    const double arg = lam - b;
                    if (!(arg > 0.0))
                        throw InfeasibilityError("barrier infeasible at grid point",
                                                 static_cast<long>(idx), lam);
                    total -= std::log(arg);
                }
                ++idx;
            }
        }
        const double denom =
            static_cast<double>(gr_.barrier_size()) * (marked_ ? m_.Q() : 1);
        return total / denom;
    }

    std::vector<double> grid_values() const {
        std::vector<double> out;
        std::vector<double> fq(Qe_);
        out.reserve(gr_.barrier_size() * (marked_ ? m_.Q() : 1));
        const std::size_t cells = gr_.barrier_size();
        if (marked_) out.assign(static_cast<std::size_t>(m_.Q()) * cells, 0.0);
        std::size_t idx = 0;
        for (double t_c : gr_.bar_t_nodes) {
            const int jmax = static_cast<int>(
                std::lower_bound(times_.begin(), times_.end(), t_c) - times_.begin());
            for (const auto& s_c : gr_.bar_s_nodes) {
                fq_target(t_c, s_c, jmax, fq.data());
                if (marked_) {
                    for (int q = 0; q < Qe_; ++q) out[q * cells + idx] = fq[q];
                } else {
                    out.push_back(m_.mu + fq[0]);
                }
                ++idx;
            }
        }
        return out;
    }

private:
    const KernelModel& m_;
    const Tables& tb_;
    const GridSpec& gr_;
    Window win_;
    const EventSequence* seq_ = nullptr;
    int sdim_, L_, Re_, Qe_, n_ = 0;
    bool marked_;
    std::vector<double> times_, psi_e_, u_e_;
};

}  // namespace

Tables build_tables(const KernelModel& model, const GridSpec& grids) {
    Tables t;
    const int L = model.L();
    t.phi_vals.assign(L, std::vector<double>(grids.sizes.ut, 0.0));
    t.cumint.assign(L, std::vector<double>(grids.sizes.ut, 0.0));
    for (int l = 0; l < L; ++l) {
        for (int m = 0; m < grids.sizes.ut; ++m)
            t.phi_vals[l][m] = model.eval_phi(l, grids.ut_nodes[m]);
        for (int m = 1; m < grids.sizes.ut; ++m)
            t.cumint[l][m] =
                t.cumint[l][m - 1] + 0.5 * grids.dt * (t.phi_vals[l][m - 1] + t.phi_vals[l][m]);
    }
    if (model.spec.spatial_dim > 0) {
        t.v_vals.assign(model.R(), std::vector<double>(grids.us_nodes.size(), 0.0));
        for (int r = 0; r < model.R(); ++r)
            for (std::size_t p = 0; p < grids.us_nodes.size(); ++p)
                t.v_vals[r][p] = model.eval_v(r, grids.us_nodes[p]);
    }
    if (model.Q() > 0) {
        const int C = model.spec.num_marks;
        t.g_vals.assign(model.Q(), std::vector<double>(C, 0.0));
        t.h_vals.assign(model.Q(), std::vector<double>(C, 0.0));
        t.h_sum.assign(model.Q(), 0.0);
        for (int q = 0; q < model.Q(); ++q) {
            for (int c = 0; c < C; ++c) {
                t.g_vals[q][c] = model.eval_g(q, c);
                t.h_vals[q][c] = model.eval_h(q, c);
                t.h_sum[q] += t.h_vals[q][c];
            }
        }
    }
    return t;
}

double interp_phi(const Tables& tables, const GridSpec& grids, int l, double x) {
    if (x < 0.0) return 0.0;
    if (x > grids.table_domain && grids.zero_beyond_domain) return 0.0;
    const auto [node, frac] = locate(grids, x);
    return (1.0 - frac) * tables.phi_vals[l][node] + frac * tables.phi_vals[l][node + 1];
}

double interp_cumint(const Tables& tables, const GridSpec& grids, int l, double x) {
    if (x <= 0.0) return 0.0;
    const auto [node, frac] = locate(grids, x);
    return (1.0 - frac) * tables.cumint[l][node] + frac * tables.cumint[l][node + 1];
}

double log_summation(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                     const GridSpec& grids) {
    Engine e(model, tables, grids, Window{});
    e.prep(seq);
    return e.log_sum();
}

double min_event_intensity(const KernelModel& model, const EventSequence& seq,
                           const Tables& tables, const GridSpec& grids) {
    Engine e(model, tables, grids, Window{});
    e.prep(seq);
    return e.min_lambda();
}

double integral_term(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                     const GridSpec& grids, const Window& window) {
    Engine e(model, tables, grids, window);
    e.prep(seq);
    return e.integral();
}

double intensity_mass(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                      const GridSpec& grids, const Window& window, double a, double b) {
    if (b < a) throw ConfigError("intensity_mass needs a <= b");
    Engine e(model, tables, grids, window);
    e.prep(seq);
    return e.mass_between(a, b);
}

double ground_intensity(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                        const GridSpec& grids, const Window& window, double t) {
    Engine e(model, tables, grids, window);
    e.prep(seq);
    return e.ground_at(t);
}

double log_likelihood(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                      const GridSpec& grids, const Window& window) {
    Engine e(model, tables, grids, window);
    e.prep(seq);
    return e.log_sum() - e.integral();
}

double barrier(const KernelModel& model, const EventSequence& seq, const Tables& tables,
               const GridSpec& grids, const Window& window, double b) {
    if (model.Q() > 0) throw ConfigError("use barrier_marked for marked models");
    Engine e(model, tables, grids, window);
    e.prep(seq);
    return e.barrier_value(b);
}

double barrier_marked(const KernelModel& model, const EventSequence& seq, const Tables& tables,
                      const GridSpec& grids, const Window& window, double b) {
    if (model.Q() == 0) throw ConfigError("barrier_marked needs a marked model");
    Engine e(model, tables, grids, window);
    e.prep(seq);
    return e.barrier_value(b);
}

std::vector<double> barrier_grid_values(const KernelModel& model, const EventSequence& seq,
                                        const Tables& tables, const GridSpec& grids) {
    Engine e(model, tables, grids, Window{});
    e.prep(seq);
    return e.grid_values();
}

double objective(const KernelModel& model, std::span<const EventSequence> batch,
                 const Tables& tables, const GridSpec& grids, const Window& window, double w,
                 double b) {
    if (!(w > 0.0)) throw ConfigError("barrier weight must be positive");
    double neg_ll = 0.0;
    double bar = 0.0;
    Engine e(model, tables, grids, window);
    for (const auto& seq : batch) {
        e.prep(seq);
        neg_ll += e.integral() - e.log_sum();
        bar += e.barrier_value(b);
    }
    if (batch.empty()) return 0.0;
    return neg_ll + bar / (w * static_cast<double>(batch.size()));
}

double objective(const KernelModel& model, std::span<const EventSequence> batch,
                 const GridSpec& grids, const Window& window, double w, double b) {
    const Tables tables = build_tables(model, grids);
    return objective(model, batch, tables, grids, window, w, b);
}

// ---------------------------------------------------------------------------
// Gradient path: traced table build, per-sequence trace arenas, node-adjoint
// accumulation across the batch, single backward sweep per tabulated node.

namespace {

class GradEngine {
public:
    GradEngine(const KernelModel& model, const GridSpec& grids, const Window& window, double w,
               double b, std::size_t batch_size)
        : m_(model),
          gr_(grids),
          win_(window),
          w_(w),
          b_(b),
          bsize_(batch_size),
          sdim_(model.spec.spatial_dim),
          L_(model.L()),
          Re_(model.Re()),
          Qe_(model.Qe()),
          marked_(model.Q() > 0) {
        build_traced_tables();
        mu_bar_ = 0.0;
        alpha_bar_.assign(m_.alpha.size(), 0.0);
        for (int l = 0; l < L_; ++l) {
            psi_g_.emplace_back(m_.psi[l]);
            phi_g_.emplace_back(m_.phi[l]);
        }
        for (int r = 0; r < m_.R(); ++r) {
            u_g_.emplace_back(m_.u[r]);
            v_g_.emplace_back(m_.v[r]);
        }
        for (int q = 0; q < m_.Q(); ++q) {
            g_g_.emplace_back(m_.g[q]);
            h_g_.emplace_back(m_.h[q]);
        }
    }

    ObjectiveParts run(std::span<const EventSequence> batch, std::vector<double>& grad) {
        ObjectiveParts parts;
        for (const auto& seq : batch) {
            prep_traced(seq);
            parts.neg_loglik += process_events() + process_integral();
            parts.barrier += process_barrier();
            finish_sequence();
        }
        finish_batch();
        if (!batch.empty()) {
            parts.barrier /= static_cast<double>(batch.size());
            parts.value = parts.neg_loglik + parts.barrier / w_;
        }
        flatten(grad);
        return parts;
    }

private:
    void build_traced_tables() {
        const int M = gr_.sizes.ut;
        tr_t_ = m_.phi[0].trace_size();
        tb_.phi_vals.assign(L_, std::vector<double>(M, 0.0));
        tb_.cumint.assign(L_, std::vector<double>(M, 0.0));
        phi_traces_.assign(L_, std::vector<double>(static_cast<std::size_t>(M) * tr_t_));
        phi_bar_.assign(L_, std::vector<double>(M, 0.0));
        F_bar_.assign(L_, std::vector<double>(M, 0.0));
        for (int l = 0; l < L_; ++l) {
            for (int m = 0; m < M; ++m) {
                const double x = gr_.ut_nodes[m];
                tb_.phi_vals[l][m] = m_.phi[l].eval_traced(
                    std::span<const double>(&x, 1), phi_traces_[l].data() + m * tr_t_);
            }
            for (int m = 1; m < M; ++m)
                tb_.cumint[l][m] = tb_.cumint[l][m - 1] +
                                   0.5 * gr_.dt * (tb_.phi_vals[l][m - 1] + tb_.phi_vals[l][m]);
        }
        if (sdim_ > 0) {
            tr_s_ = m_.v[0].trace_size();
            const std::size_t P = gr_.us_nodes.size();
            tb_.v_vals.assign(m_.R(), std::vector<double>(P, 0.0));
            vus_traces_.assign(m_.R(), std::vector<double>(P * tr_s_));
            vus_bar_.assign(m_.R(), std::vector<double>(P, 0.0));
            for (int r = 0; r < m_.R(); ++r)
                for (std::size_t p = 0; p < P; ++p)
                    tb_.v_vals[r][p] = m_.v[r].eval_traced(
                        std::span<const double>(gr_.us_nodes[p].data(), sdim_),
                        vus_traces_[r].data() + p * tr_s_);
        }
        if (marked_) {
            tr_m_ = m_.g[0].trace_size();
            const int C = m_.spec.num_marks;
            tb_.g_vals.assign(m_.Q(), std::vector<double>(C, 0.0));
            tb_.h_vals.assign(m_.Q(), std::vector<double>(C, 0.0));
            tb_.h_sum.assign(m_.Q(), 0.0);
            g_traces_.assign(m_.Q(), std::vector<double>(static_cast<std::size_t>(C) * tr_m_));
            h_traces_.assign(m_.Q(), std::vector<double>(static_cast<std::size_t>(C) * tr_m_));
            g_bar_.assign(m_.Q(), std::vector<double>(C, 0.0));
            h_bar_.assign(m_.Q(), std::vector<double>(C, 0.0));
            hsum_bar_.assign(m_.Q(), 0.0);
            std::vector<double> onehot(C, 0.0);
            for (int q = 0; q < m_.Q(); ++q) {
                for (int c = 0; c < C; ++c) {
                    onehot[c] = 1.0;
                    tb_.g_vals[q][c] =
                        m_.g[q].eval_traced(onehot, g_traces_[q].data() + c * tr_m_);
                    tb_.h_vals[q][c] =
                        m_.h[q].eval_traced(onehot, h_traces_[q].data() + c * tr_m_);
                    tb_.h_sum[q] += tb_.h_vals[q][c];
                    onehot[c] = 0.0;
                }
            }
        }
    }

    void prep_traced(const EventSequence& seq) {
        seq_ = &seq;
        n_ = static_cast<int>(seq.events.size());
        times_.resize(n_);
        for (int i = 0; i < n_; ++i) times_[i] = seq.events[i].t;
        psi_e_.assign(static_cast<std::size_t>(L_) * n_, 0.0);
        psi_adj_.assign(static_cast<std::size_t>(L_) * n_, 0.0);
        psi_etr_.assign(L_, {});
        for (int l = 0; l < L_; ++l) {
            psi_etr_[l].resize(static_cast<std::size_t>(n_) * tr_t_);
            for (int i = 0; i < n_; ++i)
                psi_e_[static_cast<std::size_t>(l) * n_ + i] = m_.psi[l].eval_traced(
                    std::span<const double>(&times_[i], 1), psi_etr_[l].data() + i * tr_t_);
        }
        if (sdim_ > 0) {
            u_e_.assign(static_cast<std::size_t>(Re_) * n_, 0.0);
            u_adj_.assign(static_cast<std::size_t>(Re_) * n_, 0.0);
            u_etr_.assign(Re_, {});
            for (int r = 0; r < Re_; ++r) {
                u_etr_[r].resize(static_cast<std::size_t>(n_) * tr_s_);
                for (int i = 0; i < n_; ++i)
                    u_e_[static_cast<std::size_t>(r) * n_ + i] = m_.u[r].eval_traced(
                        std::span<const double>(seq.events[i].s.data(), sdim_),
                        u_etr_[r].data() + i * tr_s_);
            }
        }
    }

    // Pair collection for one target; records v traces so the adjoint pass
    // can run backward immediately after the target's lambda is known.
    void fq_target_traced(double t_c, const std::array<double, 2>& s_c, int jmax, double* fq) {
        std::fill(fq, fq + Qe_, 0.0);
        pair_j_.clear();
        pair_node_.clear();
        pair_frac_.clear();
        pair_v_.clear();
        pair_tr_.clear();
        const int jlo = static_cast<int>(
            std::lower_bound(times_.begin(), times_.begin() + jmax, t_c - m_.spec.tau_max) -
            times_.begin());
        const double a2 = m_.spec.a_max * m_.spec.a_max;
        for (int j = jlo; j < jmax; ++j) {
            const double tau = t_c - times_[j];
            if (tau > m_.spec.tau_max || tau <= 0.0) continue;
            if (sdim_ > 0) {
                std::array<double, 2> nu{s_c[0] - seq_->events[j].s[0],
                                         s_c[1] - seq_->events[j].s[1]};
                if (sdim_ == 1) nu[1] = 0.0;
                if (nu[0] * nu[0] + nu[1] * nu[1] > a2) continue;
                const std::size_t base = pair_tr_.size();
                pair_tr_.resize(base + static_cast<std::size_t>(Re_) * tr_s_);
                for (int r = 0; r < Re_; ++r)
                    pair_v_.push_back(
                        m_.v[r].eval_traced(std::span<const double>(nu.data(), sdim_),
                                            pair_tr_.data() + base + r * tr_s_));
            }
            const double x = m_.spec.temporal_param == TemporalParam::displacement ? tau : t_c;
            const auto [node, frac] = locate(gr_, x);
            pair_j_.push_back(j);
            pair_node_.push_back(node);
            pair_frac_.push_back(frac);
            const int mj = seq_->events[j].mark;
            for (int l = 0; l < L_; ++l) {
                const double phl = (1.0 - frac) * tb_.phi_vals[l][node] +
                                   frac * tb_.phi_vals[l][node + 1];
                const double tl = psi_e_[static_cast<std::size_t>(l) * n_ + j] * phl;
                for (int r = 0; r < Re_; ++r) {
                    const double sr = sdim_ > 0
                                          ? u_e_[static_cast<std::size_t>(r) * n_ + j] *
                                                pair_v_[(pair_j_.size() - 1) * Re_ + r]
                                          : 1.0;
                    for (int q = 0; q < Qe_; ++q) {
                        const double gq = marked_ ? tb_.g_vals[q][mj] : 1.0;
                        fq[q] += m_.alpha_at(l, r, q) * tl * sr * gq;
                    }
                }
            }
        }
    }

    // Distributes d(objective)/d(fq) over the recorded pairs, then runs the
    // pair v backward passes.
    void distribute(const double* dfq) {
        for (std::size_t p = 0; p < pair_j_.size(); ++p) {
            const int j = pair_j_[p];
            const int node = pair_node_[p];
            const double frac = pair_frac_[p];
            const int mj = seq_->events[j].mark;
            double dv[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            for (int l = 0; l < L_; ++l) {
                const double psv = psi_e_[static_cast<std::size_t>(l) * n_ + j];
                const double phl = (1.0 - frac) * tb_.phi_vals[l][node] +
                                   frac * tb_.phi_vals[l][node + 1];
                double dpsi = 0.0, dphi = 0.0;
                for (int r = 0; r < Re_; ++r) {
                    const double uv = sdim_ > 0 ? u_e_[static_cast<std::size_t>(r) * n_ + j]
                                                : 1.0;
                    const double vv = sdim_ > 0 ? pair_v_[p * Re_ + r] : 1.0;
                    const double sr = uv * vv;
                    for (int q = 0; q < Qe_; ++q) {
                        const double gq = marked_ ? tb_.g_vals[q][mj] : 1.0;
                        const double d = dfq[q];
                        const double al = m_.alpha_at(l, r, q);
                        alpha_bar_[static_cast<std::size_t>(l * Re_ + r) * Qe_ + q] +=
                            d * psv * phl * sr * gq;
                        const double common = d * al * gq;
                        dpsi += common * phl * sr;
                        dphi += common * psv * sr;
                        if (sdim_ > 0) {
                            u_adj_[static_cast<std::size_t>(r) * n_ + j] +=
                                common * psv * phl * vv;
                            dv[r] += common * psv * phl * uv;
                        }
                        if (marked_)
                            g_bar_[q][mj] += d * al * psv * phl * sr;
                    }
                }
                psi_adj_[static_cast<std::size_t>(l) * n_ + j] += dpsi;
                phi_bar_[l][node] += (1.0 - frac) * dphi;
                phi_bar_[l][node + 1] += frac * dphi;
            }
            if (sdim_ > 0)
                for (int r = 0; r < Re_; ++r)
                    m_.v[r].backward(pair_tr_.data() + (p * Re_ + r) * tr_s_, dv[r], v_g_[r]);
        }
    }

    double process_events() {
        double neg_log = 0.0;
        std::vector<double> fq(Qe_), dfq(Qe_);
        for (int i = 0; i < n_; ++i) {
            fq_target_traced(times_[i], seq_->events[i].s, i, fq.data());
            double lam = m_.mu;
            const int mi = seq_->events[i].mark;
            for (int q = 0; q < Qe_; ++q)
                lam += fq[q] * (marked_ ? tb_.h_vals[q][mi] : 1.0);
            if (!(lam > 0.0))
                throw InfeasibilityError("non-positive intensity at event", i, lam);
            neg_log -= std::log(lam);
            const double c = -1.0 / lam;
            mu_bar_ += c;
            for (int q = 0; q < Qe_; ++q) {
                dfq[q] = c * (marked_ ? tb_.h_vals[q][mi] : 1.0);
                if (marked_) h_bar_[q][mi] += c * fq[q];
            }
            distribute(dfq.data());
        }
        return neg_log;
    }

    double process_integral() {
        const double mark_vol = marked_ ? m_.spec.num_marks : 1.0;
        double total = m_.mu * win_.area() * win_.t_end * mark_vol;
        mu_bar_ += win_.area() * win_.t_end * mark_vol;
        std::vector<double> vint(Re_), vbar(Re_);
        for (int i = 0; i < n_; ++i) {
            const int mi = seq_->events[i].mark;
            // spatial integral and its mask
            if (sdim_ > 0) {
                std::fill(vint.begin(), vint.end(), 0.0);
                const auto& s_i = seq_->events[i].s;
                for (std::size_t p = 0; p < gr_.us_nodes.size(); ++p) {
                    if (!spatial_contains(win_, s_i[0] + gr_.us_nodes[p][0],
                                          s_i[1] + gr_.us_nodes[p][1]))
                        continue;
                    for (int r = 0; r < Re_; ++r) vint[r] += tb_.v_vals[r][p];
                }
                for (int r = 0; r < Re_; ++r) vint[r] *= gr_.cell_area;
            } else {
                vint[0] = 1.0;
            }
            std::fill(vbar.begin(), vbar.end(), 0.0);
            for (int l = 0; l < L_; ++l) {
                // temporal integral factor and its interpolation nodes
                double ti;
                int nodes[2] = {-1, -1};
                double nadj[2] = {0.0, 0.0};  // d(ti)/d(F at node), split below
                double fr[2] = {0.0, 0.0};
                if (m_.spec.temporal_param == TemporalParam::displacement) {
                    const double x = win_.t_end - times_[i];
                    const auto [node, frac] = locate(gr_, x);
                    ti = x <= 0.0 ? 0.0
                                  : (1.0 - frac) * tb_.cumint[l][node] +
                                        frac * tb_.cumint[l][node + 1];
                    if (x > 0.0) {
                        nodes[0] = node;
                        fr[0] = frac;
                        nadj[0] = 1.0;
                    }
                } else {
                    const double upper = std::min(times_[i] + m_.spec.tau_max, win_.t_end);
                    const auto [nu_, fu_] = locate(gr_, upper);
                    const auto [nl_, fl_] = locate(gr_, times_[i]);
                    const double fup = (1.0 - fu_) * tb_.cumint[l][nu_] +
                                       fu_ * tb_.cumint[l][nu_ + 1];
                    const double flo = times_[i] <= 0.0
                                           ? 0.0
                                           : (1.0 - fl_) * tb_.cumint[l][nl_] +
                                                 fl_ * tb_.cumint[l][nl_ + 1];
                    ti = fup - flo;
                    nodes[0] = nu_;
                    fr[0] = fu_;
                    nadj[0] = 1.0;
                    if (times_[i] > 0.0) {
                        nodes[1] = nl_;
                        fr[1] = fl_;
                        nadj[1] = -1.0;
                    }
                }
                const double psv = psi_e_[static_cast<std::size_t>(l) * n_ + i];
                double dpsi = 0.0, dti = 0.0;
                for (int r = 0; r < Re_; ++r) {
                    const double ur =
                        sdim_ > 0 ? u_e_[static_cast<std::size_t>(r) * n_ + i] : 1.0;
                    for (int q = 0; q < Qe_; ++q) {
                        const double mk = marked_ ? tb_.g_vals[q][mi] * tb_.h_sum[q] : 1.0;
                        const double al = m_.alpha_at(l, r, q);
                        total += al * psv * ti * ur * vint[r] * mk;
                        alpha_bar_[static_cast<std::size_t>(l * Re_ + r) * Qe_ + q] +=
                            psv * ti * ur * vint[r] * mk;
                        dpsi += al * ti * ur * vint[r] * mk;
                        dti += al * psv * ur * vint[r] * mk;
                        if (sdim_ > 0) {
                            u_adj_[static_cast<std::size_t>(r) * n_ + i] +=
                                al * psv * ti * vint[r] * mk;
                            vbar[r] += al * psv * ti * ur * mk;
                        }
                        if (marked_) {
                            g_bar_[q][mi] += al * psv * ti * ur * vint[r] * tb_.h_sum[q];
                            hsum_bar_[q] += al * psv * ti * ur * vint[r] * tb_.g_vals[q][mi];
                        }
                    }
                }
                psi_adj_[static_cast<std::size_t>(l) * n_ + i] += dpsi;
                for (int k = 0; k < 2; ++k) {
                    if (nodes[k] < 0) continue;
                    F_bar_[l][nodes[k]] += nadj[k] * (1.0 - fr[k]) * dti;
                    F_bar_[l][nodes[k] + 1] += nadj[k] * fr[k] * dti;
                }
            }
            // second mask pass for the tabulated-v adjoints
            if (sdim_ > 0) {
                const auto& s_i = seq_->events[i].s;
                for (std::size_t p = 0; p < gr_.us_nodes.size(); ++p) {
                    if (!spatial_contains(win_, s_i[0] + gr_.us_nodes[p][0],
                                          s_i[1] + gr_.us_nodes[p][1]))
                        continue;
                    for (int r = 0; r < Re_; ++r)
                        vus_bar_[r][p] += gr_.cell_area * vbar[r];
                }
            }
        }
        return total;
    }

    double process_barrier() {
        const std::size_t cells = gr_.barrier_size();
        const double qnorm = marked_ ? m_.Q() : 1.0;
        const double denom = static_cast<double>(cells) * qnorm;
        const double bfac = 1.0 / (w_ * static_cast<double>(bsize_));
        double total = 0.0;
        std::vector<double> fq(Qe_), dfq(Qe_);
        std::size_t idx = 0;
        for (double t_c : gr_.bar_t_nodes) {
            const int jmax = static_cast<int>(
                std::lower_bound(times_.begin(), times_.end(), t_c) - times_.begin());
            for (const auto& s_c : gr_.bar_s_nodes) {
                fq_target_traced(t_c, s_c, jmax, fq.data());
                if (marked_) {
                    for (int q = 0; q < Qe_; ++q) {
                        const double arg = fq[q] - b_;
                        if (!(arg > 0.0))
                            throw InfeasibilityError("barrier infeasible at grid point",
                                                     static_cast<long>(idx), fq[q]);
                        total -= std::log(arg) / denom;
                        dfq[q] = -bfac / (denom * arg);
                    }
                } else {
                    const double lam = m_.mu + fq[0];
                    const double arg = lam - b_;
                    if (!(arg > 0.0))
                        throw InfeasibilityError("barrier infeasible at grid point",
                                                 static_cast<long>(idx), lam);
                    total -= std::log(arg) / denom;
                    dfq[0] = -bfac / (denom * arg);
                    mu_bar_ += dfq[0];
                }
                distribute(dfq.data());
                ++idx;
            }
        }
        return total;
    }

    void finish_sequence() {
        for (int l = 0; l < L_; ++l)
            for (int i = 0; i < n_; ++i)
                m_.psi[l].backward(psi_etr_[l].data() + static_cast<std::size_t>(i) * tr_t_,
                                   psi_adj_[static_cast<std::size_t>(l) * n_ + i], psi_g_[l]);
        if (sdim_ > 0)
            for (int r = 0; r < Re_; ++r)
                for (int i = 0; i < n_; ++i)
                    m_.u[r].backward(u_etr_[r].data() + static_cast<std::size_t>(i) * tr_s_,
                                     u_adj_[static_cast<std::size_t>(r) * n_ + i], u_g_[r]);
    }

    void finish_batch() {
        const int M = gr_.sizes.ut;
        for (int l = 0; l < L_; ++l) {
            // transpose of the cumulative trapezoid: suffix sums of F_bar
            double suffix = 0.0;
            for (int mm = M - 1; mm >= 1; --mm) {
                // phi_bar[mm] receives dt/2 * F_bar[mm] + dt * sum_{k>mm} F_bar[k]
                phi_bar_[l][mm] += gr_.dt * suffix + 0.5 * gr_.dt * F_bar_[l][mm];
                suffix += F_bar_[l][mm];
            }
            phi_bar_[l][0] += 0.5 * gr_.dt * suffix;
            for (int mm = 0; mm < M; ++mm)
                m_.phi[l].backward(phi_traces_[l].data() + static_cast<std::size_t>(mm) * tr_t_,
                                   phi_bar_[l][mm], phi_g_[l]);
        }
        if (sdim_ > 0)
            for (int r = 0; r < m_.R(); ++r)
                for (std::size_t p = 0; p < gr_.us_nodes.size(); ++p)
                    m_.v[r].backward(vus_traces_[r].data() + p * tr_s_, vus_bar_[r][p], v_g_[r]);
        if (marked_) {
            const int C = m_.spec.num_marks;
            for (int q = 0; q < m_.Q(); ++q) {
                for (int c = 0; c < C; ++c) {
                    h_bar_[q][c] += hsum_bar_[q];
                    m_.g[q].backward(g_traces_[q].data() + static_cast<std::size_t>(c) * tr_m_,
                                     g_bar_[q][c], g_g_[q]);
                    m_.h[q].backward(h_traces_[q].data() + static_cast<std::size_t>(c) * tr_m_,
                                     h_bar_[q][c], h_g_[q]);
                }
            }
        }
    }

    void flatten(std::vector<double>& grad) {
        grad.clear();
        grad.reserve(m_.param_count());
        grad.push_back(mu_bar_);
        grad.insert(grad.end(), alpha_bar_.begin(), alpha_bar_.end());
        for (const auto& g : psi_g_) g.append(grad);
        for (const auto& g : phi_g_) g.append(grad);
        for (const auto& g : u_g_) g.append(grad);
        for (const auto& g : v_g_) g.append(grad);
        for (const auto& g : g_g_) g.append(grad);
        for (const auto& g : h_g_) g.append(grad);
    }

    const KernelModel& m_;
    const GridSpec& gr_;
    Window win_;
    double w_, b_;
    std::size_t bsize_;
    int sdim_, L_, Re_, Qe_;
    bool marked_;
    int tr_t_ = 0, tr_s_ = 0, tr_m_ = 0;

    Tables tb_;
    std::vector<std::vector<double>> phi_traces_, vus_traces_, g_traces_, h_traces_;
    std::vector<std::vector<double>> phi_bar_, F_bar_, vus_bar_, g_bar_, h_bar_;
    std::vector<double> hsum_bar_;

    double mu_bar_ = 0.0;
    std::vector<double> alpha_bar_;
    std::vector<MlpGrad> psi_g_, phi_g_, u_g_, v_g_, g_g_, h_g_;

    const EventSequence* seq_ = nullptr;
    int n_ = 0;
    std::vector<double> times_, psi_e_, u_e_, psi_adj_, u_adj_;
    std::vector<std::vector<double>> psi_etr_, u_etr_;

    std::vector<int> pair_j_, pair_node_;
    std::vector<double> pair_frac_, pair_v_, pair_tr_;
};

}  // namespace

ObjectiveParts objective_with_grad(const KernelModel& model, std::span<const EventSequence> batch,
                                   const GridSpec& grids, const Window& window, double w, double b,
                                   std::vector<double>& grad) {
    if (!(w > 0.0)) throw ConfigError("barrier weight must be positive");
    GradEngine engine(model, grids, window, w, b, batch.size());
    ObjectiveParts parts = engine.run(batch, grad);
    if (!std::isfinite(parts.value)) throw NumericalError("non-finite objective");
    for (double g : grad)
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient");
    return parts;
}

}  // namespace stpp
