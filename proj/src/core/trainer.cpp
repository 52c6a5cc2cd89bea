#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "errors.hpp"
#include "rng.hpp"

namespace stpp {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (w0 <= 0.0) throw ConfigError("w0 must be positive");
    if (anneal < 1.0) throw ConfigError("anneal factor must be >= 1");
    if (eps_b <= 0.0) throw ConfigError("eps_b must be positive");
    if (min_intensity < 0.0) throw ConfigError("min_intensity must be non-negative");
    grids.validate();
}

void TrainState::init(const KernelModel& model, const TrainConfig& cfg) {
    cfg.validate();
    adam = AdamState{};
    adam.learning_rate = cfg.learning_rate;
    adam.init(model.param_count());
    w = cfg.w0;
    batches_done = 0;
    epochs_done = 0;
    history.clear();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t j = n; j > 1; --j) {
        // uniform() < 1 strictly, so k <= j-1
        const auto k = static_cast<std::size_t>(rng.uniform() * static_cast<double>(j));
        std::swap(idx[j - 1], idx[k]);
    }
    return idx;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_test_split(
    std::size_t n, double train_frac, std::uint64_t seed) {
    if (train_frac < 0.0 || train_frac > 1.0)
        throw ConfigError("train fraction must lie in [0, 1]");
    auto idx = shuffled_indices(n, derive_seed(seed, 2000));
    const auto cut = static_cast<std::size_t>(
        std::llround(train_frac * static_cast<double>(n)));
    std::vector<std::size_t> train(idx.begin(), idx.begin() + cut);
    std::vector<std::size_t> test(idx.begin() + cut, idx.end());
    return {std::move(train), std::move(test)};
}

double compute_b(const KernelModel& model, std::span<const EventSequence> batch,
                 const Tables& tables, const GridSpec& grids, double eps) {
    if (batch.empty()) throw ConfigError("cannot compute a barrier bound for an empty batch");
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& seq : batch) {
        const auto vals = barrier_grid_values(model, seq, tables, grids);
        for (double v : vals) lo = std::min(lo, v);
    }
    return lo - eps;
}

double min_grid_intensity(const KernelModel& model, std::span<const EventSequence> seqs,
                          const GridSpec& grids) {
    const Tables tables = build_tables(model, grids);
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& seq : seqs) {
        const auto vals = barrier_grid_values(model, seq, tables, grids);
        for (double v : vals) lo = std::min(lo, v);
    }
    return lo;
}

namespace {

/// Event intensities must stay strictly positive after a step so the next
/// objective's log terms remain defined; the floor keeps iterates off the
/// boundary, where momentum could otherwise pin an intensity at 0. Grid
/// intensities may dip negative mid-training; the barrier bound b tracks
/// them from below.
bool step_feasible(const KernelModel& model, std::span<const EventSequence> batch,
                   const GridSpec& grids, double floor) {
    if (batch.empty()) return true;
    const Tables tables = build_tables(model, grids);
    for (const auto& seq : batch)
        if (!(min_event_intensity(model, seq, tables, grids) > floor)) return false;
    return true;
}

}  // namespace

void train(KernelModel& model, TrainState& state, std::span<const EventSequence> train_seqs,
           const Window& window, const TrainConfig& cfg) {
    cfg.validate();
    if (train_seqs.empty()) throw ConfigError("training requires at least one sequence");
    if (state.adam.m.size() != model.param_count())
        throw ShapeError("optimizer state does not match the model's parameter count");

    const GridSpec grids = GridSpec::build(model.spec, window, cfg.grids);
    const std::size_t n = train_seqs.size();
    constexpr int kMaxRetries = 12;

    // Epoch shuffles are pure functions of (seed, epoch), so each accepted
    // step can also be validated against the upcoming batch — including the
    // first batch of the following epoch — without disturbing resumability.
    auto epoch_order = [&](int e) { return shuffled_indices(n, derive_seed(cfg.seed, 1000 + e)); };
    auto gather = [&](const std::vector<std::size_t>& order, std::size_t start) {
        const std::size_t stop = std::min(n, start + cfg.batch_size);
        std::vector<EventSequence> batch;
        batch.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) batch.push_back(train_seqs[order[i]]);
        return batch;
    };

    for (int pass = 0; pass < cfg.epochs; ++pass) {
        const int epoch = state.epochs_done;
        const auto order = epoch_order(epoch);

        EpochStats stats;
        stats.epoch = epoch;
        int batches = 0;
        double barrier_sum = 0.0;

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::vector<EventSequence> batch = gather(order, start);
            const std::vector<EventSequence> upcoming =
                start + cfg.batch_size < n ? gather(order, start + cfg.batch_size)
                                           : gather(epoch_order(epoch + 1), 0);

            const Tables tables = build_tables(model, grids);
            const double b = compute_b(model, batch, tables, grids, cfg.eps_b);

            std::vector<double> grad;
            const ObjectiveParts parts =
                objective_with_grad(model, batch, grids, window, state.w, b, grad);
            if (cfg.freeze_kernel)
                std::fill(grad.begin() + 1, grad.end(), 0.0);

            const std::vector<double> saved_params = model.get_params();
            const AdamState saved_adam = state.adam;

            bool accepted = false;
            for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
                state.adam = saved_adam;
                state.adam.learning_rate = cfg.learning_rate / std::pow(2.0, attempt);
                std::vector<double> params = saved_params;
                adam_step(params, grad, state.adam);
                params[0] = std::max(params[0], 0.0);  // background rate stays non-negative
                model.set_params(params);
                if (step_feasible(model, batch, grids, cfg.min_intensity) &&
                    step_feasible(model, upcoming, grids, cfg.min_intensity)) {
                    accepted = true;
                    if (attempt > 0) ++stats.step_retries;
                    break;
                }
            }
            state.adam.learning_rate = cfg.learning_rate;
            if (!accepted) {
                model.set_params(saved_params);
                state.adam = saved_adam;
                throw NumericalError(
                    "no feasible optimizer step after 12 learning-rate halvings; "
                    "lower the learning rate or strengthen the barrier (smaller w0)");
            }

            state.w *= cfg.anneal;
            ++state.batches_done;
            ++batches;
            stats.neg_loglik += parts.neg_loglik;
            barrier_sum += parts.barrier;
            stats.b_last = b;
        }

        stats.barrier = batches > 0 ? barrier_sum / batches : 0.0;
        stats.w_end = state.w;
        state.history.push_back(stats);
        ++state.epochs_done;
    }
}

void write_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open history file for writing: " + path);
    out << "epoch,neg_loglik,barrier,w,b,step_retries\n";
    char buf[256];
    for (const auto& row : history) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%d\n", row.epoch,
                      row.neg_loglik, row.barrier, row.w_end, row.b_last, row.step_retries);
        out << buf;
    }
}

}  // namespace stpp
