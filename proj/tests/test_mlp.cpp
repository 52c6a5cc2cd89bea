#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "core/errors.hpp"
#include "core/mlp.hpp"
#include "oracles.hpp"

using stpp::AdamState;
using stpp::Mlp;
using stpp::MlpGrad;

TEST_CASE("construction fixes shapes and is deterministic in the seed") {
    Mlp net({1, 64, 64, 1}, false, 7);
    CHECK(net.num_layers() == 3);
    CHECK(net.input_dim() == 1);
    CHECK(net.weights[0].size() == 64);
    CHECK(net.weights[1].size() == 64 * 64);
    CHECK(net.weights[2].size() == 64);
    CHECK(net.biases[2].size() == 1);
    CHECK(net.param_count() == 64 + 64 + 64 * 64 + 64 + 64 + 1);

    Mlp again({1, 64, 64, 1}, false, 7);
    CHECK(net.weights[1] == again.weights[1]);
    CHECK(net.biases[0] == again.biases[0]);

    Mlp other({1, 64, 64, 1}, false, 8);
    CHECK(net.weights[0] != other.weights[0]);

    // fan-in bound on the init range
    for (double w : net.weights[1]) CHECK(std::abs(w) <= 1.0 / 8.0);
}

TEST_CASE("invalid shapes are rejected") {
    CHECK_THROWS_AS(Mlp({1}, false, 0), stpp::ConfigError);
    CHECK_THROWS_AS(Mlp({1, 0, 1}, false, 0), stpp::ConfigError);
    CHECK_THROWS_AS(Mlp({1, 8, 2}, false, 0), stpp::ConfigError);  // non-scalar output
}

TEST_CASE("zero weights propagate biases through the activations") {
    Mlp net({1, 3, 1}, false, 1);
    for (auto& wl : net.weights)
        for (double& w : wl) w = 0.0;
    net.biases[0] = {0.0, 0.0, 0.0};
    net.biases[1] = {0.25};
    // hidden = softplus(0) = ln 2 everywhere, but weights into output are 0
    const double x = 3.7;
    CHECK(net.eval(std::span<const double>(&x, 1)) == doctest::Approx(0.25).epsilon(1e-15));

    net.weights[1] = {1.0, 1.0, 1.0};
    CHECK(net.eval(std::span<const double>(&x, 1)) ==
          doctest::Approx(0.25 + 3.0 * std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("forward matches the naive loop oracle") {
    for (bool sp_out : {false, true}) {
        Mlp net({2, 16, 8, 1}, sp_out, 42);
        std::vector<double> x{0.3, -1.1};
        const double got = net.eval(x);
        const double want = oracle::naive_forward(net, x);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("softplus output is strictly positive") {
    Mlp net({1, 8, 1}, true, 5);
    for (double x : {-50.0, -1.0, 0.0, 2.0, 90.0}) {
        CHECK(net.eval(std::span<const double>(&x, 1)) > 0.0);
    }
}

TEST_CASE("batched eval equals mapped eval") {
    Mlp net({2, 8, 1}, false, 3);
    std::vector<double> xs{0.1, 0.2, -0.5, 1.0, 2.0, -2.0};
    auto ys = net.eval_batch(xs, 3);
    REQUIRE(ys.size() == 3);
    for (int i = 0; i < 3; ++i) {
        std::span<const double> row(xs.data() + 2 * i, 2);
        CHECK(ys[i] == net.eval(row));
    }
}

TEST_CASE("backward: constant net exposes the chain rule on the output bias") {
    // f(x) = b with all weights zero; de/db = out_adjoint regardless of x
    Mlp net({1, 4, 1}, false, 2);
    oracle::make_constant_net(net, 3.0);
    std::vector<double> trace(net.trace_size());
    const double x = 0.7;
    const double y = net.eval_traced(std::span<const double>(&x, 1), trace.data());
    CHECK(y == doctest::Approx(3.0));

    MlpGrad grad(net);
    net.backward(trace.data(), 2.0 * y, grad);  // e = f^2 -> de/db = 2f
    CHECK(grad.biases[1][0] == doctest::Approx(6.0).epsilon(1e-14));
    // hidden weights see zero adjoint through the zeroed output weights
    for (double g : grad.weights[0]) CHECK(g == 0.0);
}

TEST_CASE("backward: gradient w.r.t. input-layer weight vanishes at x = 0") {
    Mlp net({1, 8, 1}, false, 11);
    std::vector<double> trace(net.trace_size());
    const double x = 0.0;
    net.eval_traced(std::span<const double>(&x, 1), trace.data());
    MlpGrad grad(net);
    net.backward(trace.data(), 1.0, grad);
    // dy/dW1[j] = delta_j * x = 0, while bias grads are generally nonzero
    for (double g : grad.weights[0]) CHECK(g == 0.0);
    double bias_mag = 0.0;
    for (double g : grad.biases[0]) bias_mag += std::abs(g);
    CHECK(bias_mag > 0.0);
}

TEST_CASE("backward matches central finite differences on every parameter") {
    for (bool sp_out : {false, true}) {
        Mlp net({2, 6, 5, 1}, sp_out, 9);
        const std::vector<double> x{0.4, -0.9};

        std::vector<double> trace(net.trace_size());
        net.eval_traced(x, trace.data());
        MlpGrad grad(net);
        net.backward(trace.data(), 1.0, grad);
        std::vector<double> got;
        grad.append(got);

        std::vector<double> theta;
        net.append_params(theta);
        auto f = [&](const std::vector<double>& p) {
            Mlp probe = net;
            const double* cur = p.data();
            probe.read_params(cur);
            return probe.eval(x);
        };
        const auto want = oracle::finite_diff(f, theta, 1e-6);

        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("param round trip preserves evaluation") {
    Mlp net({2, 8, 1}, false, 21);
    std::vector<double> theta;
    net.append_params(theta);
    REQUIRE(theta.size() == net.param_count());

    Mlp blank({2, 8, 1}, false, 99);
    const double* cur = theta.data();
    blank.read_params(cur);
    CHECK(cur == theta.data() + theta.size());

    std::vector<double> x{0.5, 0.5};
    CHECK(blank.eval(x) == net.eval(x));
}

TEST_CASE("eval counter counts one per input vector") {
    Mlp net({1, 4, 1}, false, 17);
    net.reset_eval_count();
    const double x = 0.2;
    net.eval(std::span<const double>(&x, 1));
    std::vector<double> trace(net.trace_size());
    net.eval_traced(std::span<const double>(&x, 1), trace.data());
    std::vector<double> xs{0.1, 0.2, 0.3};
    net.eval_batch(xs, 3);
    CHECK(net.eval_count() == 5);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.0, -2.0, 0.5};
    std::vector<double> g{0.0, 0.0, 0.0};
    AdamState st;
    st.init(p.size());
    adam_step(p, g, st);
    CHECK(p == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(st.step == 1);
}

TEST_CASE("adam: first step moves by ~learning_rate against the gradient") {
    std::vector<double> p{0.0};
    std::vector<double> g{1.0};
    AdamState st;
    st.learning_rate = 0.1;
    st.init(1);
    adam_step(p, g, st);
    // with bias correction m_hat = g, v_hat = g^2 -> step = lr * g/(|g|+eps)
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: identical inputs give identical trajectories") {
    auto run = [] {
        std::vector<double> p{0.3, -0.7};
        AdamState st;
        st.init(2);
        for (int k = 0; k < 25; ++k) {
            std::vector<double> g{2.0 * p[0], std::cos(p[1])};
            adam_step(p, g, st);
        }
        return p;
    };
    CHECK(run() == run());
}

TEST_CASE("adam rejects mismatched buffer sizes") {
    std::vector<double> p{1.0, 2.0};
    std::vector<double> g{1.0};
    AdamState st;
    st.init(2);
    CHECK_THROWS_AS(adam_step(p, g, st), stpp::ShapeError);
}

TEST_CASE("stable softplus agrees with the naive form and its gradient identity") {
    for (double x : {-40.0, -5.0, 0.0, 1.5, 29.0, 31.0, 700.0}) {
        const double y = stpp::softplus(x);
        if (x < 500.0) {
            CHECK(y == doctest::Approx(oracle::naive_softplus(x)).epsilon(1e-12));
        } else {
            CHECK(y == x);  // naive form overflows here
        }
        const double sig = 1.0 / (1.0 + std::exp(-x));
        CHECK(stpp::softplus_grad_from_output(y) == doctest::Approx(sig).epsilon(1e-10));
    }
}
