#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "events.hpp"
#include "mlp.hpp"

namespace stpp {

/// Input convention of the right temporal basis nets: the main model takes
/// the displacement t - t'; the ablation takes the absolute time t.
enum class TemporalParam { displacement, history_time };

TemporalParam temporal_param_from_string(const std::string& s);
std::string to_string(TemporalParam p);

struct ModelSpec {
    int spatial_dim = 0;  // 0 = purely temporal
    int temporal_rank = 1;
    int spatial_rank = 0;  // 0 iff spatial_dim == 0
    int mark_rank = 0;     // 0 = unmarked
    int num_marks = 0;
    double tau_max = 1.0;
    double a_max = 0.0;
    std::vector<int> hidden = {64, 64};
    TemporalParam temporal_param = TemporalParam::displacement;
    double t_ref = 0.0;  // tabulation horizon for the history_time ablation
    double mu_init = 1.0;
    double alpha_init = 0.1;

    void validate() const;
};

/// Influence kernel
///   k(t',t,s',s[,m',m]) = sum_{l,r[,q]} alpha psi_l(t') phi_l(.) u_r(s') v_r(s-s')
///                         [g_q(m') h_q(m)]
/// with hard truncation: zero whenever t-t' > tau_max or ||s-s'|| > a_max.
/// For spatial_dim 0 the spatial factor is fixed to 1 (no u/v nets); the
/// alpha tensor is stored flat with effective ranks Re = max(R,1),
/// Qe = max(Q,1) and layout alpha[(l*Re + r)*Qe + q].
struct KernelModel {
    ModelSpec spec;
    double mu = 0.0;
    std::vector<double> alpha;
    std::vector<Mlp> psi, phi, u, v, g, h;

    KernelModel() = default;
    KernelModel(const ModelSpec& spec, std::uint64_t seed);

    int L() const { return spec.temporal_rank; }
    int R() const { return spec.spatial_rank; }
    int Q() const { return spec.mark_rank; }
    int Re() const { return spec.spatial_rank > 0 ? spec.spatial_rank : 1; }
    int Qe() const { return spec.mark_rank > 0 ? spec.mark_rank : 1; }
    double alpha_at(int l, int r, int q) const {
        return alpha[static_cast<std::size_t>(l * Re() + r) * Qe() + q];
    }

    /// Horizon the right temporal nets are tabulated on: tau_max for the
    /// displacement model, t_ref for the history_time ablation.
    double phi_domain() const {
        return spec.temporal_param == TemporalParam::displacement ? spec.tau_max : spec.t_ref;
    }

    double eval_psi(int l, double t_prev) const;
    double eval_phi(int l, double phi_input) const;  // no truncation applied here
    double eval_u(int r, const std::array<double, 2>& s) const;
    double eval_v(int r, const std::array<double, 2>& nu) const;
    double eval_g(int q, int mark) const;  // one-hot categorical input
    double eval_h(int q, int mark) const;

    /// Direct kernel evaluation (no grids); marks ignored when Q == 0.
    double kernel_eval(double t_prev, double t, const std::array<double, 2>& s_prev,
                       const std::array<double, 2>& s, int m_prev = -1, int m = -1) const;

    /// Conditional intensity mu + sum over history events with t_i < t.
    double intensity(std::span<const Event> history, double t, const std::array<double, 2>& s,
                     int m = -1) const;

    std::size_t param_count() const;
    std::vector<double> get_params() const;
    void set_params(const std::vector<double>& flat);

    std::int64_t total_eval_count() const;
    void reset_eval_counts() const;
};

}  // namespace stpp
