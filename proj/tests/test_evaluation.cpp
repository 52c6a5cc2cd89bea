#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "core/evaluate.hpp"
#include "core/rng.hpp"
#include "core/simulate.hpp"

using namespace stpp;

namespace {

Window temporal_window(double t_end) {
    Window w;
    w.t_end = t_end;
    w.spatial_dim = 0;
    return w;
}

Window planar_window(double t_end, double lo0, double hi0, double lo1, double hi1) {
    Window w;
    w.t_end = t_end;
    w.spatial_dim = 2;
    w.s_bounds = {{{lo0, hi0}, {lo1, hi1}}};
    return w;
}

// kernel identically zero: alpha tensor initialized at zero
KernelModel constant_rate_model(double mu, int spatial_dim = 0, double a_max = 0.0) {
    ModelSpec spec;
    spec.spatial_dim = spatial_dim;
    spec.temporal_rank = 1;
    spec.spatial_rank = spatial_dim > 0 ? 1 : 0;
    spec.tau_max = 2.0;
    spec.a_max = a_max;
    spec.hidden = {8, 8};
    spec.alpha_init = 0.0;
    KernelModel m(spec, 7);
    m.mu = mu;
    return m;
}

EventSequence seq_of_times(std::initializer_list<double> ts) {
    EventSequence s;
    for (double t : ts) s.events.push_back(Event{t, {0.0, 0.0}, -1});
    return s;
}

}  // namespace

TEST_CASE("per-event log-likelihood of a constant-rate model is analytic") {
    const double mu = 0.7, T = 10.0;
    KernelModel m = constant_rate_model(mu);
    const Window w = temporal_window(T);
    std::vector<EventSequence> test{seq_of_times({1.0, 2.0, 3.0}), seq_of_times({4.0, 9.5})};

    const double expected = (5.0 * std::log(mu) - 2.0 * mu * T) / 5.0;
    const double got = test_loglik_per_event(m, test, w, GridSizes{});
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));

    CHECK(test_loglik_per_event(m, test, w, GridSizes{}) == got);

    std::vector<EventSequence> empty_set{EventSequence{}};
    CHECK_THROWS_AS(test_loglik_per_event(m, empty_set, w, GridSizes{}), ConfigError);
}

TEST_CASE("intensity recovery error vanishes for a perfect fit and detects scale") {
    KernelModel m = constant_rate_model(0.6);
    const Window w = temporal_window(20.0);
    EventSequence seq = seq_of_times({2.0, 5.0, 11.0});

    IntensityFn self = [&](std::span<const Event> h, double t, const std::array<double, 2>& s) {
        return m.intensity(h, t, s);
    };
    CHECK(mre(self, m, seq, w, 50, 1).value == 0.0);

    for (double c : {2.0, 0.5}) {
        IntensityFn scaled = [&, c](std::span<const Event>, double, const std::array<double, 2>&) {
            return m.mu / c;  // fitted = c * reference
        };
        CHECK(mre(scaled, m, seq, w, 50, 1).value == doctest::Approx(std::abs(c - 1.0)).epsilon(1e-12));
    }
}

TEST_CASE("non-positive reference intensities are excluded from the recovery error") {
    KernelModel m = constant_rate_model(0.6);
    const Window w = temporal_window(20.0);
    EventSequence seq = seq_of_times({2.0});

    IntensityFn half_dead = [&](std::span<const Event>, double t, const std::array<double, 2>&) {
        return t < 10.0 ? -1.0 : m.mu;
    };
    const MreResult r = mre(half_dead, m, seq, w, 50, 1);
    CHECK(r.excluded == 25);
    CHECK(r.value == 0.0);  // the surviving half matches exactly

    IntensityFn dead = [](std::span<const Event>, double, const std::array<double, 2>&) {
        return 0.0;
    };
    CHECK_THROWS_AS(mre(dead, m, seq, w, 50, 1), ConfigError);
}

TEST_CASE("predictive density matches the exponential waiting law for a constant rate") {
    const double mu = 0.8;
    KernelModel m = constant_rate_model(mu);
    const Window w = temporal_window(15.0);
    EventSequence hist = seq_of_times({1.0, 2.5});

    for (double t : {2.6, 4.0, 10.0}) {
        const double expected = mu * std::exp(-mu * (t - 2.5));
        CHECK(predictive_density(m, hist, w, GridSizes{}, t, {0.0, 0.0}) ==
              doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK_THROWS_AS(predictive_density(m, hist, w, GridSizes{}, 2.5, {0.0, 0.0}), DomainError);
    CHECK_THROWS_AS(predictive_density(m, hist, w, GridSizes{}, 1.7, {0.0, 0.0}), DomainError);
}

TEST_CASE("a zero kernel makes the predictive density independent of location") {
    const double mu = 0.3;
    KernelModel m = constant_rate_model(mu, 2, 1.0);
    const Window w = planar_window(15.0, -1.0, 1.0, -1.0, 1.0);
    EventSequence hist;
    hist.events.push_back(Event{2.0, {0.3, -0.4}, -1});

    const double t = 3.1;
    const double a = predictive_density(m, hist, w, GridSizes{}, t, {0.9, 0.9});
    const double b = predictive_density(m, hist, w, GridSizes{}, t, {-0.5, 0.2});
    CHECK(a == b);
    const double expected = mu * std::exp(-mu * w.area() * (t - 2.0));
    CHECK(a == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("predictive density integrates to one over the survival horizon") {
    ModelSpec spec;
    spec.spatial_dim = 1;
    spec.temporal_rank = 1;
    spec.spatial_rank = 1;
    spec.tau_max = 1.5;
    spec.a_max = 0.8;
    spec.hidden = {8, 8};
    spec.alpha_init = 0.05;
    KernelModel m(spec, 77);
    m.mu = 0.4;

    Window w;
    w.t_end = 8.0;
    w.spatial_dim = 1;
    w.s_bounds[0] = {0.0, 1.0};

    EventSequence hist;
    hist.events.push_back(Event{0.7, {0.2, 0.0}, -1});
    hist.events.push_back(Event{1.4, {0.8, 0.0}, -1});
    hist.events.push_back(Event{2.0, {0.5, 0.0}, -1});
    const double t_n = 2.0;

    const double horizon = 40.0;  // survival < 1e-6 well before this for mu = 0.4
    const int nt = 400, ns = 40;
    double total = 0.0;
    for (int i = 0; i < nt; ++i) {
        const double t = t_n + horizon * (i + 0.5) / nt;
        for (int j = 0; j < ns; ++j) {
            const std::array<double, 2> s{(j + 0.5) / ns, 0.0};
            total += predictive_density(m, hist, w, GridSizes{}, t, s);
        }
    }
    total *= (horizon / nt) * (1.0 / ns);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("next-event prediction recovers the mean of the exponential gap") {
    const double mu = 0.5;
    KernelModel m = constant_rate_model(mu);
    const Window w = temporal_window(10.0);
    EventSequence hist = seq_of_times({0.4, 3.0});

    EvalConfig cfg;
    const PredictionResult p = predict_next_event(m, hist, w, cfg);
    CHECK_FALSE(p.horizon_exceeded);
    CHECK(p.survival_tail <= 1e-6);
    CHECK(p.t_hat == doctest::Approx(3.0 + 1.0 / mu).epsilon(5e-3));

    // empty history starts the clock at zero
    const PredictionResult q = predict_next_event(m, EventSequence{}, w, cfg);
    CHECK(q.t_hat == doctest::Approx(1.0 / mu).epsilon(5e-3));
}

TEST_CASE("predicted location is the spatial centroid when the intensity is flat") {
    KernelModel m = constant_rate_model(0.3, 2, 1.0);
    EventSequence hist;
    hist.events.push_back(Event{1.0, {0.5, 1.5}, -1});

    EvalConfig cfg;
    {
        const Window w = planar_window(10.0, -1.0, 1.0, -1.0, 1.0);
        const PredictionResult p = predict_next_event(m, hist, w, cfg);
        CHECK(std::abs(p.s_hat[0]) < 1e-10);
        CHECK(std::abs(p.s_hat[1]) < 1e-10);
    }
    {
        const Window w = planar_window(10.0, 0.0, 2.0, 1.0, 3.0);
        EventSequence h2;
        h2.events.push_back(Event{1.0, {1.0, 2.0}, -1});
        // midpoint quadrature at the default node count carries ~5e-4 error
        const PredictionResult p = predict_next_event(m, h2, w, cfg);
        CHECK(p.s_hat[0] == doctest::Approx(1.0).epsilon(2e-3));
        CHECK(p.s_hat[1] == doctest::Approx(2.0).epsilon(2e-3));
    }
}

TEST_CASE("prediction flags an unreachable survival cutoff") {
    KernelModel m = constant_rate_model(0.0);
    const Window w = temporal_window(5.0);
    EvalConfig cfg;
    const PredictionResult p = predict_next_event(m, seq_of_times({1.0}), w, cfg);
    CHECK(p.horizon_exceeded);
    CHECK(p.survival_tail == 1.0);
    CHECK(p.t_hat == 0.0);
}

TEST_CASE("next-event prediction matches a dense-quadrature oracle") {
    ModelSpec spec;
    spec.spatial_dim = 1;
    spec.temporal_rank = 1;
    spec.spatial_rank = 1;
    spec.tau_max = 1.5;
    spec.a_max = 0.8;
    spec.hidden = {8, 8};
    spec.alpha_init = 0.05;
    KernelModel m(spec, 401);
    m.mu = 0.4;

    Window w;
    w.t_end = 8.0;
    w.spatial_dim = 1;
    w.s_bounds[0] = {0.0, 1.0};

    EventSequence hist;
    hist.events.push_back(Event{0.5, {0.3, 0.0}, -1});
    hist.events.push_back(Event{1.1, {0.7, 0.0}, -1});
    hist.events.push_back(Event{1.9, {0.4, 0.0}, -1});
    const double t_n = 1.9;

    // dense midpoint quadrature straight from the exact model intensity
    const double horizon = 50.0;
    const int nt = 6000, ns = 100;
    const double dt = horizon / nt, ds = 1.0 / ns;
    double mass = 0.0, t_oracle = 0.0, s_oracle = 0.0;
    for (int i = 0; i < nt; ++i) {
        const double t = t_n + (i + 0.5) * dt;
        double rate = 0.0, moment = 0.0;
        for (int j = 0; j < ns; ++j) {
            const std::array<double, 2> s{(j + 0.5) * ds, 0.0};
            const double lam = m.intensity(hist.events, t, s);
            rate += lam * ds;
            moment += s[0] * lam * ds;
        }
        const double surv = std::exp(-(mass + 0.5 * rate * dt));
        mass += rate * dt;
        t_oracle += dt * t * rate * surv;
        s_oracle += dt * moment * surv;
    }

    EvalConfig cfg;
    const PredictionResult p = predict_next_event(m, hist, w, cfg);
    CHECK(p.t_hat == doctest::Approx(t_oracle).epsilon(0.01));
    CHECK(p.s_hat[0] == doctest::Approx(s_oracle).epsilon(0.01));
}

TEST_CASE("prediction error is near zero when events land on the predicted mean") {
    const double mu = 0.5;
    KernelModel m = constant_rate_model(mu);
    const Window w = temporal_window(12.0);

    std::vector<EventSequence> test;
    for (double t0 : {0.5, 1.0, 2.0}) test.push_back(seq_of_times({t0, t0 + 1.0 / mu}));

    EvalConfig cfg;
    CHECK(prediction_error(m, test, w, cfg, PredTask::time_mae) < 5e-3);
    CHECK(prediction_error(m, test, w, cfg, PredTask::time_rmse) < 5e-3);
}

TEST_CASE("time MAE on exponential data matches the closed form") {
    const double mu = 1.0;
    KernelModel m = constant_rate_model(mu);
    const Window w = temporal_window(50.0);

    Rng rng(2026);
    const int n = 200;
    std::vector<EventSequence> test;
    for (int i = 0; i < n; ++i) {
        const double t = -std::log(1.0 - rng.uniform()) / mu;
        test.push_back(seq_of_times({t}));
    }
    // predicting 1/mu for Exp(mu) data: E|X - 1/mu| = 2/(e*mu)
    const double expected = 2.0 / std::exp(1.0) / mu;
    const double se = 0.677 / std::sqrt(static_cast<double>(n));
    const double got = prediction_error(m, test, w, EvalConfig{}, PredTask::time_mae);
    CHECK(std::abs(got - expected) < 3.0 * se);
}

TEST_CASE("location MAE measures displacement from the predicted centroid") {
    KernelModel m = constant_rate_model(0.4, 2, 1.0);
    const Window w = planar_window(12.0, 0.0, 2.0, 0.0, 2.0);

    std::vector<EventSequence> test;
    EventSequence a;
    a.events.push_back(Event{1.0, {0.5, 0.5}, -1});
    a.events.push_back(Event{2.0, {1.0, 1.0}, -1});  // exactly the centroid
    test.push_back(a);
    CHECK(prediction_error(m, test, w, EvalConfig{}, PredTask::location_mae) < 1e-3);

    EventSequence b;
    b.events.push_back(Event{1.0, {0.5, 0.5}, -1});
    b.events.push_back(Event{2.0, {1.5, 1.0}, -1});  // 0.5 away from the centroid
    test.assign({b});
    CHECK(prediction_error(m, test, w, EvalConfig{}, PredTask::location_mae) ==
          doctest::Approx(0.5).epsilon(1e-2));
}

TEST_CASE("type accuracy is one for single-class marks and rejects unmarked models") {
    ModelSpec spec;
    spec.spatial_dim = 0;
    spec.temporal_rank = 1;
    spec.mark_rank = 1;
    spec.num_marks = 1;
    spec.tau_max = 2.0;
    spec.hidden = {8, 8};
    spec.alpha_init = 0.0;
    KernelModel marked(spec, 3);
    marked.mu = 0.5;

    Window w = temporal_window(10.0);
    w.num_marks = 1;
    EventSequence s;
    s.events.push_back(Event{1.0, {0.0, 0.0}, 0});
    s.events.push_back(Event{2.0, {0.0, 0.0}, 0});
    std::vector<EventSequence> test{s};

    CHECK(prediction_error(marked, test, w, EvalConfig{}, PredTask::type_accuracy) == 1.0);

    KernelModel unmarked = constant_rate_model(0.5);
    CHECK_THROWS_AS(
        prediction_error(unmarked, test, temporal_window(10.0), EvalConfig{},
                         PredTask::type_accuracy),
        ConfigError);

    std::vector<EventSequence> empty{EventSequence{}};
    CHECK_THROWS_AS(
        prediction_error(marked, empty, w, EvalConfig{}, PredTask::time_mae), ConfigError);
}

TEST_CASE("matrix rank identifies separable structure") {
    auto rank1 = [](double x, double y) { return (1.0 + x) * std::exp(-y); };
    CHECK(kernel_matrix_rank(rank1, {0.0, 1.0}, {0.0, 1.0}, 50) == 1);

    auto zero = [](double, double) { return 0.0; };
    CHECK(kernel_matrix_rank(zero, {0.0, 1.0}, {0.0, 1.0}, 40) == 0);

    auto rank2 = [](double x, double y) {
        return std::sin(x) * y + std::cos(x) * std::exp(y);
    };
    CHECK(kernel_matrix_rank(rank2, {0.0, 2.0}, {0.0, 2.0}, 60) == 2);

    auto skew = [](double x, double y) { return std::sin(x + y * y); };
    auto skew_t = [&](double x, double y) { return skew(y, x); };
    CHECK(kernel_matrix_rank(skew, {0.0, 3.0}, {0.0, 3.0}, 60) ==
          kernel_matrix_rank(skew_t, {0.0, 3.0}, {0.0, 3.0}, 60));

    CHECK_THROWS_AS(kernel_matrix_rank(zero, {0.0, 1.0}, {0.0, 1.0}, 1), ConfigError);
    CHECK_THROWS_AS(kernel_matrix_rank(zero, {0.0, 1.0}, {0.0, 1.0}, 10, 0.0), ConfigError);
}

TEST_CASE("displacement coordinates collapse the rank of the series kernel") {
    const TrueModel tm = true_model("1d-infrank");
    const double T = tm.window.t_end;
    const std::array<double, 2> z{0.0, 0.0};

    auto history_form = [&](double t_prev, double t) {
        return t >= t_prev ? tm.kernel(t_prev, t, z, z) : 0.0;
    };
    auto displacement_form = [&](double t_prev, double tau) {
        return tm.kernel(t_prev, t_prev + tau, z, z);
    };

    // both forms sample the same [0, T] x [0, T] domain so the ranks are
    // directly comparable: the displacement matrix is near-constant along
    // rows, the history matrix is a shifting bump of nearly full rank
    const int n = 300;
    const int rank_hist = kernel_matrix_rank(history_form, {0.0, T}, {0.0, T}, n);
    const int rank_disp = kernel_matrix_rank(displacement_form, {0.0, T}, {0.0, T}, n);
    CHECK(rank_hist >= 100);
    CHECK(rank_disp <= 10);
    CHECK(rank_disp >= 1);
}

TEST_CASE("the evaluation report aggregates per-sequence metrics and serializes") {
    const TrueModel tm = true_model("1d-exp");
    Dataset ds = generate_dataset(tm, 4, 12);

    KernelModel m = constant_rate_model(1.0);
    m.spec.tau_max = tm.tau_max;

    EvalConfig cfg;
    const IntensityFn ref = tm.as_intensity_fn();
    const EvalReport report = evaluate(m, ds.sequences, ds.window, cfg, &ref, true);

    CHECK(report.per_seq_loglik.size() == 4);
    CHECK(report.per_seq_mre.size() == 4);
    CHECK(report.num_events == ds.num_events());
    CHECK(report.loglik_per_event ==
          doctest::Approx(test_loglik_per_event(m, ds.sequences, ds.window, cfg.grids)));

    double mre_mean = 0.0;
    for (double v : report.per_seq_mre) mre_mean += v;
    CHECK(report.mre == doctest::Approx(mre_mean / 4.0));

    CHECK(std::isfinite(report.time_rmse));
    CHECK(std::isfinite(report.time_mae));
    CHECK(report.time_mae <= report.time_rmse + 1e-12);

    const auto j = nlohmann::json::parse(eval_report_json(report));
    CHECK(j["loglik_per_event"].get<double>() == doctest::Approx(report.loglik_per_event));
    CHECK(j["per_seq_loglik"].size() == 4);
    CHECK(j["mre"].get<double>() == doctest::Approx(report.mre));
    CHECK(j.contains("time_mae"));
    CHECK_FALSE(j.contains("type_accuracy"));  // unmarked model
}

TEST_CASE("csv artifacts are written atomically with headers") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "stpp_eval_csv_test";
    fs::create_directories(dir);

    KernelModel m = constant_rate_model(0.9);
    const Window w = temporal_window(10.0);
    EventSequence seq = seq_of_times({1.0, 4.0});

    const std::string curve = (dir / "curve.csv").string();
    write_intensity_curve_csv(curve, m, seq, w, GridSizes{}, 20);
    {
        std::ifstream in(curve);
        REQUIRE(in.good());
        std::string header, row;
        std::getline(in, header);
        CHECK(header == "t,fitted");
        int rows = 0;
        while (std::getline(in, row)) ++rows;
        CHECK(rows == 20);
    }

    const std::string heat = (dir / "heat.csv").string();
    write_kernel_heatmap_csv(
        heat, [](double x, double y) { return x + y; }, {0.0, 1.0}, {0.0, 1.0}, 5);
    {
        std::ifstream in(heat);
        REQUIRE(in.good());
        std::string header, row;
        std::getline(in, header);
        CHECK(header == "x,y,value");
        int rows = 0;
        double last = -1.0;
        while (std::getline(in, row)) {
            ++rows;
            last = std::stod(row.substr(row.rfind(',') + 1));
        }
        CHECK(rows == 25);
        CHECK(last == doctest::Approx(2.0));
    }

    for (const auto& entry : fs::directory_iterator(dir))
        CHECK(entry.path().string().find(".tmp.") == std::string::npos);
    fs::remove_all(dir);
}
