#include "simulate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "errors.hpp"

namespace stpp {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sq(double x) { return x * x; }

double norm2d(const std::array<double, 2>& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1]); }

// ---- closed-form generating kernels -------------------------------------

double exp_1d(double tp, double t) { return 0.8 * std::exp(-(t - tp)); }

double nonstat_1d(double tp, double t) {
    return 0.3 * (0.5 + 0.5 * std::cos(0.2 * tp)) * std::exp(-2.0 * (t - tp));
}

double infrank_coeff(double tp, int j) {
    return 0.3 + std::cos(2.0 + std::pow(tp / 5.0, 0.7) * 1.3 * (j + 1) * kPi);
}

double infrank_1d(double tp, double t, int terms) {
    const double tau2 = sq(t - tp);
    double total = 0.0;
    double pow2 = 1.0;
    for (int j = 1; j <= terms; ++j) {
        pow2 *= 0.5;
        total += pow2 * infrank_coeff(tp, j) * std::exp(-8.0 * tau2 * j * j / 25.0);
    }
    return 0.3 * total;
}

double exp_2d(double tp, double t, double sp) {
    return 0.5 * std::exp(-1.5 * (t - tp)) * std::exp(-0.8 * sp);
}

// non-stationary inhibition kernel: source density x oscillatory displacement
constexpr double kInhibSigSrc = 0.5;
constexpr double kInhibSigDsp = 0.15;

double inhib_src(const std::array<double, 2>& sp) {
    const double s2 = sq(sp[0]) + sq(sp[1]);
    return std::exp(-s2 / (2.0 * sq(kInhibSigSrc))) / (2.0 * kPi * sq(kInhibSigSrc));
}

double inhib_dsp(const std::array<double, 2>& nu) {
    const double r = norm2d(nu);
    return std::cos(10.0 * r) * std::exp(-sq(r) / (2.0 * sq(kInhibSigDsp))) /
           (2.0 * kPi * sq(kInhibSigDsp) * (1.0 + std::exp(10.0 * (r - 0.5))));
}

double inhib_3d(double tp, double t, const std::array<double, 2>& sp,
                const std::array<double, 2>& s) {
    return 0.3 * (1.0 - 0.01 * t) * std::exp(-2.0 * (t - tp)) * inhib_src(sp) *
           inhib_dsp({s[0] - sp[0], s[1] - sp[1]});
}

// two-component mixture kernel
constexpr double kMixAlpha[2][2] = {{0.6, 0.15}, {0.225, 0.525}};  // [r][l]
constexpr double kMixSig1 = 0.2;
constexpr double kMixSig2 = 0.3;

double mix_u(int r, const std::array<double, 2>& sp) {
    return r == 0 ? 1.0 - 0.3 * (sp[1] + 1.0) : 1.0 - 0.4 * (sp[1] + 1.0);
}

double mix_v(int r, const std::array<double, 2>& nu) {
    if (r == 0) {
        const double s2 = sq(nu[0]) + sq(nu[1]);
        return std::exp(-s2 / (2.0 * sq(kMixSig1))) / (2.0 * kPi * sq(kMixSig1));
    }
    const double s2 = sq(nu[0] - 0.8) + sq(nu[1] - 0.8);
    return std::exp(-s2 / (2.0 * sq(kMixSig2))) / (2.0 * kPi * sq(kMixSig2));
}

double mix_psi(int l, double tp) {
    (void)l;  // both components share the same decay
    return 1.0 - 0.02 * tp;
}

double mix_phi(int l, double tau) {
    if (l == 0) return std::exp(-2.0 * tau);
    return tau < 3.0 ? tau - 1.0 : 0.0;
}

double mixture_3d(double tp, double t, const std::array<double, 2>& sp,
                  const std::array<double, 2>& s) {
    const std::array<double, 2> nu{s[0] - sp[0], s[1] - sp[1]};
    const double tau = t - tp;
    double total = 0.0;
    for (int r = 0; r < 2; ++r)
        for (int l = 0; l < 2; ++l)
            total += kMixAlpha[r][l] * mix_u(r, sp) * mix_v(r, nu) * mix_psi(l, tp) *
                     mix_phi(l, tau);
    return total;
}

enum class Kid { exp_1d, nonstat_1d, infrank_1d, exp_2d, inhib_3d, mixture_3d };

Kid kid_of(const std::string& id) {
    if (id == "1d-exp") return Kid::exp_1d;
    if (id == "1d-nonstat") return Kid::nonstat_1d;
    if (id == "1d-infrank") return Kid::infrank_1d;
    if (id == "2d-exp") return Kid::exp_2d;
    if (id == "3d-inhib") return Kid::inhib_3d;
    if (id == "3d-mixture") return Kid::mixture_3d;
    throw ConfigError("unknown generating kernel id: " + id);
}

/// Midpoint quadrature of f over the observation region S.
template <typename F>
double quad_over_space(const Window& w, int res, F&& f) {
    const double hx = (w.s_bounds[0][1] - w.s_bounds[0][0]) / res;
    const double hy = (w.s_bounds[1][1] - w.s_bounds[1][0]) / res;
    double total = 0.0;
    for (int i = 0; i < res; ++i) {
        const double x = w.s_bounds[0][0] + (i + 0.5) * hx;
        for (int j = 0; j < res; ++j) {
            const double y = w.s_bounds[1][0] + (j + 0.5) * hy;
            total += f(std::array<double, 2>{x, y});
        }
    }
    return total * hx * hy;
}

}  // namespace

double TrueModel::kernel(double t_prev, double t, const std::array<double, 2>& s_prev,
                         const std::array<double, 2>& s) const {
    if (t < t_prev) throw DomainError("generating kernel requires t >= t_prev");
    switch (kid_of(id)) {
        case Kid::exp_1d: return exp_1d(t_prev, t);
        case Kid::nonstat_1d: return nonstat_1d(t_prev, t);
        case Kid::infrank_1d: return infrank_1d(t_prev, t, series_terms);
        case Kid::exp_2d: return exp_2d(t_prev, t, s_prev[0]);
        case Kid::inhib_3d: return inhib_3d(t_prev, t, s_prev, s);
        case Kid::mixture_3d: return mixture_3d(t_prev, t, s_prev, s);
    }
    throw ConfigError("unknown generating kernel id: " + id);
}

double TrueModel::intensity(std::span<const Event> history, double t,
                            const std::array<double, 2>& s) const {
    double lam = mu;
    for (const Event& e : history) {
        if (e.t >= t) break;
        lam += kernel(e.t, t, e.s, s);
    }
    return std::max(lam, 0.0);
}

double TrueModel::event_mass(const Event& e) const {
    const double x = window.t_end - e.t;
    if (x <= 0.0) return 0.0;
    switch (kid_of(id)) {
        case Kid::exp_1d:
            return 0.8 * (1.0 - std::exp(-x));
        case Kid::nonstat_1d:
            return 0.3 * (0.5 + 0.5 * std::cos(0.2 * e.t)) * 0.5 * (1.0 - std::exp(-2.0 * x));
        case Kid::infrank_1d: {
            double total = 0.0;
            double pow2 = 1.0;
            for (int j = 1; j <= series_terms; ++j) {
                pow2 *= 0.5;
                const double a = 8.0 * j * j / 25.0;  // integral of e^{-a tau^2}
                total += pow2 * infrank_coeff(e.t, j) * std::sqrt(kPi / (4.0 * a)) *
                         std::erf(x * std::sqrt(a));
            }
            return 0.3 * total;
        }
        case Kid::exp_2d: {
            const double space = window.s_bounds[0][1] - window.s_bounds[0][0];
            return std::exp(-0.8 * e.s[0]) * (0.5 / 1.5) * (1.0 - std::exp(-1.5 * x)) * space;
        }
        case Kid::inhib_3d: {
            const double i0 = 0.5 * (1.0 - std::exp(-2.0 * x));
            const double i1 = 0.25 * (1.0 - std::exp(-2.0 * x) * (1.0 + 2.0 * x));
            const double time_part = 0.3 * ((1.0 - 0.01 * e.t) * i0 - 0.01 * i1);
            const double space_part = quad_over_space(window, 160, [&](const auto& s) {
                return inhib_dsp({s[0] - e.s[0], s[1] - e.s[1]});
            });
            return time_part * inhib_src(e.s) * space_part;
        }
        case Kid::mixture_3d: {
            const double m = std::min(x, 3.0);
            const double phi_int[2] = {0.5 * (1.0 - std::exp(-2.0 * x)), 0.5 * m * m - m};
            double total = 0.0;
            for (int r = 0; r < 2; ++r) {
                const double v_int = quad_over_space(window, 160, [&](const auto& s) {
                    return mix_v(r, {s[0] - e.s[0], s[1] - e.s[1]});
                });
                for (int l = 0; l < 2; ++l)
                    total += kMixAlpha[r][l] * mix_u(r, e.s) * mix_psi(l, e.t) * phi_int[l] *
                             v_int;
            }
            return total;
        }
    }
    throw ConfigError("unknown generating kernel id: " + id);
}

double TrueModel::loglik(const EventSequence& seq) const {
    double logs = 0.0;
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const double lam =
            intensity({seq.events.data(), i}, seq.events[i].t, seq.events[i].s);
        if (lam <= 0.0)
            throw InfeasibilityError("generating intensity vanished at an event",
                                     static_cast<long>(i), lam);
        logs += std::log(lam);
    }
    double integral = mu * window.area() * window.t_end;
    for (const Event& e : seq.events) integral += event_mass(e);
    return logs - integral;
}

IntensityFn TrueModel::as_intensity_fn() const {
    return [this](std::span<const Event> hist, double t, const std::array<double, 2>& s) {
        return intensity(hist, t, s);
    };
}

TrueModel true_model(const std::string& id) {
    TrueModel tm;
    tm.id = id;
    switch (kid_of(id)) {
        case Kid::exp_1d:
            tm.mu = 0.1;
            tm.window.t_end = 100.0;
            tm.tau_max = 5.0;
            tm.temporal_rank = 1;
            tm.lambda_bar0 = 2.0;
            break;
        case Kid::nonstat_1d:
            tm.mu = 0.2;
            tm.window.t_end = 100.0;
            tm.tau_max = 3.0;
            tm.temporal_rank = 1;
            tm.lambda_bar0 = 2.0;
            break;
        case Kid::infrank_1d:
            tm.mu = 0.3;
            tm.window.t_end = 100.0;
            tm.tau_max = 5.0;
            tm.temporal_rank = 3;
            tm.lambda_bar0 = 3.0;
            break;
        case Kid::exp_2d:
            tm.mu = 0.3;
            tm.window.t_end = 50.0;
            tm.window.spatial_dim = 1;
            tm.window.s_bounds[0] = {0.0, 1.0};
            tm.tau_max = 3.0;
            tm.a_max = 1.0;  // kernel has no displacement decay; cover all of S
            tm.temporal_rank = 1;
            tm.spatial_rank = 1;
            tm.lambda_bar0 = 3.0;
            break;
        case Kid::inhib_3d:
            tm.mu = 0.3;
            tm.window.t_end = 20.0;
            tm.window.spatial_dim = 2;
            tm.window.s_bounds = {{{-1.0, 1.0}, {-1.0, 1.0}}};
            tm.tau_max = 2.0;
            tm.a_max = 0.8;
            tm.temporal_rank = 1;
            tm.spatial_rank = 1;
            tm.lambda_bar0 = 5.0;
            break;
        case Kid::mixture_3d:
            tm.mu = 0.1;
            tm.window.t_end = 40.0;
            tm.window.spatial_dim = 2;
            tm.window.s_bounds = {{{-1.0, 1.0}, {-1.0, 1.0}}};
            tm.tau_max = 3.0;
            tm.a_max = 2.2;
            tm.temporal_rank = 2;
            tm.spatial_rank = 2;
            tm.lambda_bar0 = 5.0;
            break;
    }
    return tm;
}

std::vector<std::string> true_model_ids() {
    return {"1d-exp", "1d-nonstat", "1d-infrank", "2d-exp", "3d-inhib", "3d-mixture"};
}

namespace {

EventSequence thinning_core(const IntensityFn& lambda, const Window& window, double lambda_bar,
                            Rng& rng, bool enforce, double* sup_seen) {
    if (lambda_bar <= 0.0) throw ConfigError("dominating rate must be positive");
    const double ground_rate = lambda_bar * window.area();
    EventSequence seq;
    double t = 0.0;
    while (t < window.t_end) {
        t += rng.exponential(ground_rate);
        std::array<double, 2> s{0.0, 0.0};
        for (int d = 0; d < window.spatial_dim; ++d)
            s[d] = rng.uniform(window.s_bounds[d][0], window.s_bounds[d][1]);
        const double d_accept = rng.uniform();
        const double lam = lambda(seq.events, t, s);
        if (sup_seen) *sup_seen = std::max(*sup_seen, lam);
        if (enforce && lam > lambda_bar * (1.0 + 1e-12))
            throw DominationError("intensity exceeded the dominating rate during thinning", lam);
        if (d_accept * lambda_bar <= lam) seq.events.push_back({t, s, -1});
    }
    // the final accepted event may sit at t >= T; it is outside the window
    if (!seq.events.empty() && seq.events.back().t >= window.t_end) seq.events.pop_back();
    return seq;
}

}  // namespace

EventSequence thinning_sample(const IntensityFn& lambda, const Window& window, double lambda_bar,
                              Rng& rng) {
    return thinning_core(lambda, window, lambda_bar, rng, true, nullptr);
}

double calibrate_lambda_bar(const TrueModel& tm, std::uint64_t seed) {
    const IntensityFn lam = tm.as_intensity_fn();
    double bound = std::max({tm.lambda_bar0, 2.0 * tm.mu, 0.1});
    constexpr int kPilots = 8;
    for (int round = 0; round < 5; ++round) {
        double sup = tm.mu;
        for (int k = 0; k < kPilots; ++k) {
            Rng rng(derive_seed(seed, 3000 + 100 * round + k));
            thinning_core(lam, tm.window, bound, rng, false, &sup);
        }
        const double next = 3.0 * sup;
        if (next <= bound) return next;  // bound already dominated with margin
        bound = next;                    // pilot undersampled; raise and retry
    }
    return bound;
}

Dataset generate_dataset(const TrueModel& tm, int num_sequences, std::uint64_t seed,
                         int threads) {
    if (num_sequences < 0) throw ConfigError("sequence count must be non-negative");
    Dataset ds;
    ds.window = tm.window;
    ds.kernel_id = tm.id;
    ds.mu = tm.mu;
    ds.seed = seed;
    ds.sequences.resize(num_sequences);

    const IntensityFn lam = tm.as_intensity_fn();
    double bound = calibrate_lambda_bar(tm, seed);

    for (int attempt = 0;; ++attempt) {
        try {
            auto run_range = [&](int lo, int hi) {
                for (int i = lo; i < hi; ++i) {
                    Rng rng(derive_seed(seed, 4000 + i));
                    ds.sequences[i] = thinning_sample(lam, tm.window, bound, rng);
                }
            };
            const int workers = std::max(1, threads);
            if (workers == 1 || num_sequences < 2 * workers) {
                run_range(0, num_sequences);
            } else {
                std::vector<std::thread> pool;
                std::vector<std::exception_ptr> errors(workers);
                const int chunk = (num_sequences + workers - 1) / workers;
                for (int wk = 0; wk < workers; ++wk) {
                    const int lo = wk * chunk;
                    const int hi = std::min(num_sequences, lo + chunk);
                    pool.emplace_back([&, wk, lo, hi] {
                        try {
                            run_range(lo, hi);
                        } catch (...) {
                            errors[wk] = std::current_exception();
                        }
                    });
                }
                for (auto& th : pool) th.join();
                for (const auto& err : errors)
                    if (err) std::rethrow_exception(err);
            }
            break;
        } catch (const DominationError&) {
            if (attempt >= 4) throw;
            bound *= 2.0;  // rare: pilot missed the true supremum
        }
    }
    validate_dataset(ds);
    return ds;
}

}  // namespace stpp
