#include "mlp.hpp"

#include <cmath>
#include <numeric>

#include "errors.hpp"
#include "rng.hpp"

namespace stpp {

Mlp::Mlp(std::vector<int> layer_dims, bool softplus_output, std::uint64_t seed)
    : dims_(std::move(layer_dims)), softplus_output_(softplus_output) {
    if (dims_.size() < 2) throw ConfigError("mlp needs at least an input and an output layer");
    for (int d : dims_)
        if (d < 1) throw ConfigError("mlp layer widths must be positive");
    if (dims_.back() != 1) throw ConfigError("mlp output must be scalar");

    Rng rng(seed);
    weights.resize(num_layers());
    biases.resize(num_layers());
    for (int k = 0; k < num_layers(); ++k) {
        const int fan_in = dims_[k];
        const int fan_out = dims_[k + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        weights[k].resize(static_cast<std::size_t>(fan_out) * fan_in);
        biases[k].resize(fan_out);
        for (double& w : weights[k]) w = rng.uniform(-bound, bound);
        for (double& b : biases[k]) b = rng.uniform(-bound, bound);
    }

    trace_size_ = dims_.front() + 1;
    for (std::size_t i = 1; i + 1 < dims_.size(); ++i) trace_size_ += dims_[i];
}

Mlp::Mlp(const Mlp& other)
    : weights(other.weights),
      biases(other.biases),
      dims_(other.dims_),
      softplus_output_(other.softplus_output_),
      trace_size_(other.trace_size_),
      evals_(other.evals_.load(std::memory_order_relaxed)) {}

Mlp& Mlp::operator=(const Mlp& other) {
    if (this != &other) {
        weights = other.weights;
        biases = other.biases;
        dims_ = other.dims_;
        softplus_output_ = other.softplus_output_;
        trace_size_ = other.trace_size_;
        evals_.store(other.evals_.load(std::memory_order_relaxed), std::memory_order_relaxed);
    }
    return *this;
}

double Mlp::eval(std::span<const double> x) const {
    thread_local std::vector<double> trace;
    trace.resize(trace_size_);
    return eval_traced(x, trace.data());
}

std::vector<double> Mlp::eval_batch(std::span<const double> xs, int batch) const {
    const int d = input_dim();
    if (static_cast<int>(xs.size()) != batch * d) throw ShapeError("eval_batch size mismatch");
    std::vector<double> out(batch);
    for (int i = 0; i < batch; ++i) out[i] = eval(xs.subspan(static_cast<std::size_t>(i) * d, d));
    return out;
}

double Mlp::eval_traced(std::span<const double> x, double* trace) const {
    if (static_cast<int>(x.size()) != input_dim()) throw ShapeError("mlp input size mismatch");
    evals_.fetch_add(1, std::memory_order_relaxed);

    double* cur = trace;
    for (int i = 0; i < input_dim(); ++i) cur[i] = x[i];
    int cur_n = input_dim();

    const int L = num_layers();
    for (int k = 0; k < L; ++k) {
        const int n_out = dims_[k + 1];
        double* nxt = cur + cur_n;
        const double* W = weights[k].data();
        const double* b = biases[k].data();
        const bool activate = (k + 1 < L) || softplus_output_;
        for (int j = 0; j < n_out; ++j) {
            double a = b[j];
            const double* row = W + static_cast<std::size_t>(j) * cur_n;
            for (int i = 0; i < cur_n; ++i) a += row[i] * cur[i];
            nxt[j] = activate ? softplus(a) : a;
        }
        cur = nxt;
        cur_n = n_out;
    }
    return cur[0];
}

void Mlp::backward(const double* trace, double out_adjoint, MlpGrad& grad) const {
    const int L = num_layers();
    thread_local std::vector<double> delta, delta_prev;
    delta.assign(1, softplus_output_ ? out_adjoint * softplus_grad_from_output(trace[trace_size_ - 1])
                                     : out_adjoint);

    // Offsets of each layer's stored activations within the trace.
    int off_out = trace_size_ - 1;
    for (int k = L - 1; k >= 0; --k) {
        const int n_out = dims_[k + 1];
        const int n_in = dims_[k];
        const int off_in = off_out - n_in;
        const double* h_in = trace + off_in;
        double* gW = grad.weights[k].data();
        double* gb = grad.biases[k].data();
        for (int j = 0; j < n_out; ++j) {
            const double dj = delta[j];
            gb[j] += dj;
            double* grow = gW + static_cast<std::size_t>(j) * n_in;
            for (int i = 0; i < n_in; ++i) grow[i] += dj * h_in[i];
        }
        if (k > 0) {
            delta_prev.assign(n_in, 0.0);
            const double* W = weights[k].data();
            for (int j = 0; j < n_out; ++j) {
                const double dj = delta[j];
                const double* row = W + static_cast<std::size_t>(j) * n_in;
                for (int i = 0; i < n_in; ++i) delta_prev[i] += dj * row[i];
            }
            for (int i = 0; i < n_in; ++i) delta_prev[i] *= softplus_grad_from_output(h_in[i]);
            std::swap(delta, delta_prev);
        }
        off_out = off_in;
    }
}

std::size_t Mlp::param_count() const {
    std::size_t n = 0;
    for (int k = 0; k < num_layers(); ++k) n += weights[k].size() + biases[k].size();
    return n;
}

void Mlp::append_params(std::vector<double>& out) const {
    for (int k = 0; k < num_layers(); ++k) {
        out.insert(out.end(), weights[k].begin(), weights[k].end());
        out.insert(out.end(), biases[k].begin(), biases[k].end());
    }
}

void Mlp::read_params(const double*& cursor) {
    for (int k = 0; k < num_layers(); ++k) {
        std::copy(cursor, cursor + weights[k].size(), weights[k].begin());
        cursor += weights[k].size();
        std::copy(cursor, cursor + biases[k].size(), biases[k].begin());
        cursor += biases[k].size();
    }
}

MlpGrad::MlpGrad(const Mlp& net) {
    weights.resize(net.weights.size());
    biases.resize(net.biases.size());
    for (std::size_t k = 0; k < weights.size(); ++k) {
        weights[k].assign(net.weights[k].size(), 0.0);
        biases[k].assign(net.biases[k].size(), 0.0);
    }
}

void MlpGrad::zero() {
    for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
}

void MlpGrad::append(std::vector<double>& out) const {
    for (std::size_t k = 0; k < weights.size(); ++k) {
        out.insert(out.end(), weights[k].begin(), weights[k].end());
        out.insert(out.end(), biases[k].begin(), biases[k].end());
    }
}

void AdamState::init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step = 0;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adam buffers out of sync");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

}  // namespace stpp
