#include "model.hpp"

#include <cmath>

#include "rng.hpp"

namespace stpp {

TemporalParam temporal_param_from_string(const std::string& s) {
    if (s == "displacement") return TemporalParam::displacement;
    if (s == "history_time") return TemporalParam::history_time;
    throw ConfigError("unknown temporal parameterization: " + s);
}

std::string to_string(TemporalParam p) {
    return p == TemporalParam::displacement ? "displacement" : "history_time";
}

void ModelSpec::validate() const {
    if (spatial_dim < 0 || spatial_dim > 2) throw ConfigError("spatial_dim must be 0, 1, or 2");
    if (temporal_rank < 1) throw ConfigError("temporal rank must be at least 1");
    if (spatial_dim == 0 && spatial_rank != 0)
        throw ConfigError("purely temporal model must have spatial rank 0");
    if (spatial_dim > 0 && spatial_rank < 1)
        throw ConfigError("spatial model needs spatial rank at least 1");
    if (spatial_rank > 8) throw ConfigError("spatial rank above 8 is not supported");
    if (mark_rank < 0) throw ConfigError("mark rank must be non-negative");
    if (mark_rank > 0 && num_marks < 1) throw ConfigError("marked model needs num_marks >= 1");
    if (!(tau_max > 0.0)) throw ConfigError("tau_max must be positive");
    if (spatial_dim > 0 && !(a_max > 0.0)) throw ConfigError("a_max must be positive");
    if (temporal_param == TemporalParam::history_time && !(t_ref > 0.0))
        throw ConfigError("history_time parameterization needs t_ref > 0");
    for (int w : hidden)
        if (w < 1) throw ConfigError("hidden widths must be positive");
    if (mu_init < 0.0) throw ConfigError("mu_init must be non-negative");
}

namespace {

std::vector<int> net_dims(int input_dim, const std::vector<int>& hidden) {
    std::vector<int> dims;
    dims.reserve(hidden.size() + 2);
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(1);
    return dims;
}

// Seed stream bases per parameter group; keeps every net on an independent
// deterministic stream of the root seed.
constexpr std::uint64_t kAlphaStream = 700;

}  // namespace

KernelModel::KernelModel(const ModelSpec& s, std::uint64_t seed) : spec(s) {
    spec.validate();
    mu = spec.mu_init;

    alpha.resize(static_cast<std::size_t>(L()) * Re() * Qe());
    Rng arng(derive_seed(seed, kAlphaStream));
    for (double& a : alpha) a = arng.uniform(-spec.alpha_init, spec.alpha_init);

    const auto tdims = net_dims(1, spec.hidden);
    for (int l = 0; l < L(); ++l) {
        psi.emplace_back(tdims, false, derive_seed(seed, 100 + l));
        phi.emplace_back(tdims, false, derive_seed(seed, 200 + l));
    }
    if (spec.spatial_dim > 0) {
        const auto sdims = net_dims(spec.spatial_dim, spec.hidden);
        for (int r = 0; r < R(); ++r) {
            u.emplace_back(sdims, false, derive_seed(seed, 300 + r));
            v.emplace_back(sdims, false, derive_seed(seed, 400 + r));
        }
    }
    if (Q() > 0) {
        const auto mdims = net_dims(spec.num_marks, spec.hidden);
        for (int q = 0; q < Q(); ++q) {
            g.emplace_back(mdims, true, derive_seed(seed, 500 + q));
            h.emplace_back(mdims, true, derive_seed(seed, 600 + q));
        }
    }
}

double KernelModel::eval_psi(int l, double t_prev) const {
    return psi[l].eval(std::span<const double>(&t_prev, 1));
}

double KernelModel::eval_phi(int l, double phi_input) const {
    return phi[l].eval(std::span<const double>(&phi_input, 1));
}

double KernelModel::eval_u(int r, const std::array<double, 2>& s) const {
    return u[r].eval(std::span<const double>(s.data(), spec.spatial_dim));
}

double KernelModel::eval_v(int r, const std::array<double, 2>& nu) const {
    return v[r].eval(std::span<const double>(nu.data(), spec.spatial_dim));
}

namespace {
thread_local std::vector<double> onehot_buf;
}

double KernelModel::eval_g(int q, int mark) const {
    if (mark < 0 || mark >= spec.num_marks) throw DomainError("mark out of range");
    onehot_buf.assign(spec.num_marks, 0.0);
    onehot_buf[mark] = 1.0;
    return g[q].eval(onehot_buf);
}

double KernelModel::eval_h(int q, int mark) const {
    if (mark < 0 || mark >= spec.num_marks) throw DomainError("mark out of range");
    onehot_buf.assign(spec.num_marks, 0.0);
    onehot_buf[mark] = 1.0;
    return h[q].eval(onehot_buf);
}

double KernelModel::kernel_eval(double t_prev, double t, const std::array<double, 2>& s_prev,
                                const std::array<double, 2>& s, int m_prev, int m) const {
    if (t < t_prev) throw DomainError("kernel_eval requires t >= t_prev");
    const double tau = t - t_prev;
    if (tau > spec.tau_max) return 0.0;
    std::array<double, 2> nu{0.0, 0.0};
    if (spec.spatial_dim > 0) {
        double nrm2 = 0.0;
        for (int d = 0; d < spec.spatial_dim; ++d) {
            nu[d] = s[d] - s_prev[d];
            nrm2 += nu[d] * nu[d];
        }
        if (std::sqrt(nrm2) > spec.a_max) return 0.0;
    }

    const double phi_in = spec.temporal_param == TemporalParam::displacement ? tau : t;
    std::vector<double> tfac(L()), sfac(Re(), 1.0), mfac(Qe(), 1.0);
    for (int l = 0; l < L(); ++l) tfac[l] = eval_psi(l, t_prev) * eval_phi(l, phi_in);
    if (spec.spatial_dim > 0)
        for (int r = 0; r < Re(); ++r) sfac[r] = eval_u(r, s_prev) * eval_v(r, nu);
    if (Q() > 0)
        for (int q = 0; q < Qe(); ++q) mfac[q] = eval_g(q, m_prev) * eval_h(q, m);

    double total = 0.0;
    for (int l = 0; l < L(); ++l)
        for (int r = 0; r < Re(); ++r)
            for (int q = 0; q < Qe(); ++q)
                total += alpha_at(l, r, q) * tfac[l] * sfac[r] * mfac[q];
    return total;
}

double KernelModel::intensity(std::span<const Event> history, double t,
                              const std::array<double, 2>& s, int m) const {
    double lam = mu;
    for (const Event& e : history) {
        if (e.t >= t) break;
        lam += kernel_eval(e.t, t, e.s, s, e.mark, m);
    }
    return lam;
}

std::size_t KernelModel::param_count() const {
    std::size_t n = 1 + alpha.size();
    for (const auto& nets : {&psi, &phi, &u, &v, &g, &h})
        for (const auto& net : *nets) n += net.param_count();
    return n;
}

std::vector<double> KernelModel::get_params() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    flat.push_back(mu);
    flat.insert(flat.end(), alpha.begin(), alpha.end());
    for (const auto& nets : {&psi, &phi, &u, &v, &g, &h})
        for (const auto& net : *nets) net.append_params(flat);
    return flat;
}

void KernelModel::set_params(const std::vector<double>& flat) {
    if (flat.size() != param_count()) throw ShapeError("parameter vector size mismatch");
    const double* cur = flat.data();
    mu = *cur++;
    std::copy(cur, cur + alpha.size(), alpha.begin());
    cur += alpha.size();
    for (auto* nets : {&psi, &phi, &u, &v, &g, &h})
        for (auto& net : *nets) net.read_params(cur);
}

std::int64_t KernelModel::total_eval_count() const {
    std::int64_t n = 0;
    for (const auto& nets : {&psi, &phi, &u, &v, &g, &h})
        for (const auto& net : *nets) n += net.eval_count();
    return n;
}

void KernelModel::reset_eval_counts() const {
    for (const auto& nets : {&psi, &phi, &u, &v, &g, &h})
        for (const auto& net : *nets) net.reset_eval_count();
}

}  // namespace stpp
