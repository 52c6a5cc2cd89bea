#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace stpp {

/// Numerically stable softplus. For x > 30 the correction log1p(e^-x) is
/// below double resolution, so the identity branch is exact.
inline double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

/// sigma(a) recovered from y = softplus(a): sigma(a) = 1 - e^{-y}.
inline double softplus_grad_from_output(double y) { return -std::expm1(-y); }

struct MlpGrad;

/// Scalar-output fully connected network: affine layers with softplus hidden
/// activations and a linear (or softplus, for non-negative outputs) output
/// layer. Evaluation is pure and safe to call concurrently; mutation is
/// single-writer.
class Mlp {
public:
    Mlp() = default;

    /// Builds a network with the given layer widths, e.g. {1, 64, 64, 1}.
    /// Weights and biases are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// layer by layer, weights (row-major, row = output unit) before biases,
    /// from an mt19937_64 stream seeded with `seed`. Two calls with equal
    /// arguments produce bitwise-identical networks.
    Mlp(std::vector<int> layer_dims, bool softplus_output, std::uint64_t seed);

    Mlp(const Mlp& other);
    Mlp& operator=(const Mlp& other);
    Mlp(Mlp&&) = default;
    Mlp& operator=(Mlp&&) = default;

    int input_dim() const { return dims_.empty() ? 0 : dims_.front(); }
    const std::vector<int>& dims() const { return dims_; }
    bool softplus_output() const { return softplus_output_; }
    int num_layers() const { return static_cast<int>(dims_.size()) - 1; }

    /// Forward pass for a single input of length input_dim().
    double eval(std::span<const double> x) const;

    /// Batched forward; identical to mapping eval over rows of xs.
    std::vector<double> eval_batch(std::span<const double> xs, int batch) const;

    /// Forward pass that also records the activations needed for backward().
    /// `trace` must have room for trace_size() doubles; layout is
    /// [input | hidden activations layer by layer | output].
    double eval_traced(std::span<const double> x, double* trace) const;

    /// Doubles per trace record.
    int trace_size() const { return trace_size_; }

    /// Reverse pass for one recorded evaluation: accumulates
    /// out_adjoint * d(output)/d(theta) into `grad`.
    void backward(const double* trace, double out_adjoint, MlpGrad& grad) const;

    std::size_t param_count() const;
    void append_params(std::vector<double>& out) const;
    void read_params(const double*& cursor);

    /// Forward-evaluation counter (one count per input vector), used to
    /// verify the engine's O(n) network-evaluation budget.
    std::int64_t eval_count() const { return evals_.load(std::memory_order_relaxed); }
    void reset_eval_count() const { evals_.store(0, std::memory_order_relaxed); }

    // Layer parameters; weights_[k] is dims_[k+1] x dims_[k], row-major.
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

private:
    std::vector<int> dims_;
    bool softplus_output_ = false;
    int trace_size_ = 0;
    mutable std::atomic<std::int64_t> evals_{0};
};

/// Per-layer gradient buffers matching an Mlp's parameter shapes.
struct MlpGrad {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    explicit MlpGrad(const Mlp& net);
    MlpGrad() = default;
    void zero();
    void append(std::vector<double>& out) const;
};

/// Adam optimizer state over a flat parameter vector. Moment buffers always
/// match the parameter vector length; `step` advances by one per update.
struct AdamState {
    double learning_rate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    void init(std::size_t n);
};

/// One Adam update with bias correction; params and grads must match the
/// moment buffers in length.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state);

}  // namespace stpp
