#include "stpp/stpp.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/dataset_io.hpp"
#include "core/errors.hpp"
#include "core/evaluate.hpp"
#include "core/events.hpp"
#include "core/model.hpp"
#include "core/simulate.hpp"
#include "core/trainer.hpp"

using nlohmann::json;

struct stpp_dataset {
    stpp::Dataset ds;
};

struct stpp_model {
    stpp::KernelModel model;
    std::uint64_t seed = 0;
    bool has_state = false;
    stpp::TrainState state;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename Fn>
stpp_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return STPP_OK;
    } catch (const stpp::ConfigError& e) {
        g_last_error = e.what();
        return STPP_USAGE_ERROR;
    } catch (const stpp::ShapeError& e) {
        g_last_error = e.what();
        return STPP_USAGE_ERROR;
    } catch (const stpp::DomainError& e) {
        g_last_error = e.what();
        return STPP_USAGE_ERROR;
    } catch (const json::exception& e) {
        g_last_error = std::string("invalid JSON parameters: ") + e.what();
        return STPP_USAGE_ERROR;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return STPP_RUNTIME_ERROR;
    } catch (...) {
        g_last_error = "unknown failure";
        return STPP_RUNTIME_ERROR;
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw stpp::ConfigError(what);
}

json parse_params(const char* s) {
    if (s == nullptr || *s == '\0') return json::object();
    return json::parse(s);  // json::exception maps to STPP_USAGE_ERROR
}

stpp::GridSizes parse_grids(const json& j) {
    stpp::GridSizes g;
    g.ut = j.value("ut", g.ut);
    g.us_target = j.value("us_target", g.us_target);
    g.bar_t = j.value("bar_t", g.bar_t);
    g.bar_s_axis = j.value("bar_s_axis", g.bar_s_axis);
    return g;
}

stpp::ModelSpec parse_spec(const json& j) {
    stpp::ModelSpec s;
    s.spatial_dim = j.value("spatial_dim", s.spatial_dim);
    s.temporal_rank = j.value("temporal_rank", s.temporal_rank);
    s.spatial_rank = j.value("spatial_rank", s.spatial_rank);
    s.mark_rank = j.value("mark_rank", s.mark_rank);
    s.num_marks = j.value("num_marks", s.num_marks);
    s.tau_max = j.value("tau_max", s.tau_max);
    s.a_max = j.value("a_max", s.a_max);
    if (j.contains("hidden")) s.hidden = j["hidden"].get<std::vector<int>>();
    if (j.contains("temporal_param"))
        s.temporal_param =
            stpp::temporal_param_from_string(j["temporal_param"].get<std::string>());
    s.t_ref = j.value("t_ref", s.t_ref);
    s.mu_init = j.value("mu_init", s.mu_init);
    s.alpha_init = j.value("alpha_init", s.alpha_init);
    return s;
}

stpp::TrainConfig parse_train(const json& j) {
    stpp::TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.w0 = j.value("w0", c.w0);
    c.anneal = j.value("anneal", c.anneal);
    c.eps_b = j.value("eps_b", c.eps_b);
    c.min_intensity = j.value("min_intensity", c.min_intensity);
    c.seed = j.value("seed", c.seed);
    c.freeze_kernel = j.value("freeze_kernel", c.freeze_kernel);
    c.grids = parse_grids(j.value("grids", json::object()));
    return c;
}

stpp::EvalConfig parse_eval(const json& j) {
    stpp::EvalConfig c;
    c.grids = parse_grids(j.value("grids", json::object()));
    c.mre_time_nodes = j.value("mre_time_nodes", c.mre_time_nodes);
    c.mre_space_axis = j.value("mre_space_axis", c.mre_space_axis);
    c.predict_time_nodes = j.value("predict_time_nodes", c.predict_time_nodes);
    c.predict_space_axis = j.value("predict_space_axis", c.predict_space_axis);
    c.survival_cutoff = j.value("survival_cutoff", c.survival_cutoff);
    c.max_horizon_factor = j.value("max_horizon_factor", c.max_horizon_factor);
    return c;
}

json window_json(const stpp::Window& w) {
    json s = json::array();
    for (int d = 0; d < w.spatial_dim; ++d)
        s.push_back(json::array({w.s_bounds[d][0], w.s_bounds[d][1]}));
    return json{{"T", w.t_end}, {"S", std::move(s)}, {"num_marks", w.num_marks}};
}

/// Reference generating model aligned with the dataset it is compared
/// against: the formulas come from the preset, the window (and, when the
/// dataset was simulated from this very kernel, the background rate) from
/// the dataset metadata.
stpp::TrueModel reference_model(const std::string& id, const stpp::Dataset& ds) {
    stpp::TrueModel tm = stpp::true_model(id);
    require(tm.window.spatial_dim == ds.window.spatial_dim,
            "reference kernel dimensionality differs from the dataset");
    tm.window = ds.window;
    if (ds.kernel_id == id && ds.mu > 0.0) tm.mu = ds.mu;
    return tm;
}

std::array<double, 2> window_center(const stpp::Window& w) {
    std::array<double, 2> c{0.0, 0.0};
    for (int d = 0; d < w.spatial_dim; ++d) c[d] = 0.5 * (w.s_bounds[d][0] + w.s_bounds[d][1]);
    return c;
}

}  // namespace

extern "C" {

const char* stpp_last_error(void) { return g_last_error.c_str(); }

void stpp_string_free(char* s) { std::free(s); }

const char* stpp_version(void) { return "1.0.0"; }

stpp_status stpp_dataset_simulate(const char* params_json, stpp_dataset** out) {
    return guarded([&] {
        require(out != nullptr, "null output handle");
        const json p = parse_params(params_json);
        require(p.contains("kernel"), "simulate parameters need a \"kernel\" id");
        stpp::TrueModel tm = stpp::true_model(p["kernel"].get<std::string>());
        tm.mu = p.value("mu", tm.mu);
        tm.window.t_end = p.value("T", tm.window.t_end);
        require(tm.mu > 0.0, "background rate mu must be positive");
        require(tm.window.t_end > 0.0, "window length T must be positive");
        const int n = p.value("sequences", 0);
        require(n >= 0, "sequence count must be non-negative");
        const auto seed = p.value("seed", std::uint64_t{0});
        const int threads = p.value("threads", 1);
        require(threads >= 1, "threads must be >= 1");
        auto handle = std::make_unique<stpp_dataset>();
        handle->ds = stpp::generate_dataset(tm, n, seed, threads);
        *out = handle.release();
    });
}

stpp_status stpp_dataset_load(const char* path, stpp_dataset** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "null argument");
        auto handle = std::make_unique<stpp_dataset>();
        handle->ds = stpp::load_dataset(path);
        *out = handle.release();
    });
}

stpp_status stpp_dataset_save(const stpp_dataset* ds, const char* path) {
    return guarded([&] {
        require(ds != nullptr && path != nullptr, "null argument");
        stpp::save_dataset(path, ds->ds);
    });
}

stpp_status stpp_dataset_info(const stpp_dataset* ds, char** json_out) {
    return guarded([&] {
        require(ds != nullptr && json_out != nullptr, "null argument");
        json j = window_json(ds->ds.window);
        j["kernel"] = ds->ds.kernel_id;
        j["mu"] = ds->ds.mu;
        j["seed"] = ds->ds.seed;
        j["sequences"] = ds->ds.sequences.size();
        j["events"] = ds->ds.num_events();
        *json_out = dup_string(j.dump(2));
    });
}

stpp_status stpp_dataset_split(const stpp_dataset* ds, double train_frac, uint64_t seed,
                               stpp_dataset** train_out, stpp_dataset** test_out) {
    return guarded([&] {
        require(ds != nullptr && train_out != nullptr && test_out != nullptr, "null argument");
        require(train_frac >= 0.0 && train_frac <= 1.0, "train fraction must lie in [0, 1]");
        const auto [train_idx, test_idx] =
            stpp::train_test_split(ds->ds.sequences.size(), train_frac, seed);
        auto make_half = [&](const std::vector<std::size_t>& idx) {
            auto h = std::make_unique<stpp_dataset>();
            h->ds.window = ds->ds.window;
            h->ds.kernel_id = ds->ds.kernel_id;
            h->ds.mu = ds->ds.mu;
            h->ds.seed = ds->ds.seed;
            for (std::size_t i : idx) h->ds.sequences.push_back(ds->ds.sequences[i]);
            return h;
        };
        auto train = make_half(train_idx);
        auto test = make_half(test_idx);
        *train_out = train.release();
        *test_out = test.release();
    });
}

void stpp_dataset_free(stpp_dataset* ds) { delete ds; }

stpp_status stpp_model_create(const char* spec_json, uint64_t seed, stpp_model** out) {
    return guarded([&] {
        require(out != nullptr, "null output handle");
        const stpp::ModelSpec spec = parse_spec(parse_params(spec_json));
        auto handle = std::make_unique<stpp_model>();
        handle->model = stpp::KernelModel(spec, seed);
        handle->seed = seed;
        *out = handle.release();
    });
}

stpp_status stpp_model_load(const char* path, stpp_model** out) {
    return guarded([&] {
        require(path != nullptr && out != nullptr, "null argument");
        stpp::Checkpoint ck = stpp::load_checkpoint(path);
        auto handle = std::make_unique<stpp_model>();
        handle->model = std::move(ck.model);
        handle->seed = ck.model_seed;
        handle->has_state = ck.has_state;
        handle->state = std::move(ck.state);
        *out = handle.release();
    });
}

stpp_status stpp_model_save(const stpp_model* m, const char* path) {
    return guarded([&] {
        require(m != nullptr && path != nullptr, "null argument");
        stpp::save_checkpoint(path, m->model, m->has_state ? &m->state : nullptr, m->seed);
    });
}

stpp_status stpp_model_info(const stpp_model* m, char** json_out) {
    return guarded([&] {
        require(m != nullptr && json_out != nullptr, "null argument");
        const stpp::ModelSpec& s = m->model.spec;
        json j;
        j["spec"] = {{"spatial_dim", s.spatial_dim},
                     {"temporal_rank", s.temporal_rank},
                     {"spatial_rank", s.spatial_rank},
                     {"mark_rank", s.mark_rank},
                     {"num_marks", s.num_marks},
                     {"tau_max", s.tau_max},
                     {"a_max", s.a_max},
                     {"hidden", s.hidden},
                     {"temporal_param", stpp::to_string(s.temporal_param)},
                     {"t_ref", s.t_ref}};
        j["seed"] = m->seed;
        j["mu"] = m->model.mu;
        j["param_count"] = m->model.param_count();
        if (m->has_state) {
            j["train"] = {{"epochs_done", m->state.epochs_done},
                          {"batches_done", m->state.batches_done},
                          {"w", m->state.w}};
        }
        *json_out = dup_string(j.dump(2));
    });
}

stpp_status stpp_model_fit(stpp_model* m, const stpp_dataset* train, const char* train_json,
                           const char* history_csv_path) {
    return guarded([&] {
        require(m != nullptr && train != nullptr, "null argument");
        const stpp::TrainConfig cfg = parse_train(parse_params(train_json));
        cfg.validate();
        if (!m->has_state) {
            m->state.init(m->model, cfg);
            m->has_state = true;
        }
        stpp::train(m->model, m->state, train->ds.sequences, train->ds.window, cfg);
        if (history_csv_path != nullptr && *history_csv_path != '\0')
            stpp::write_history_csv(history_csv_path, m->state.history);
    });
}

stpp_status stpp_model_evaluate(const stpp_model* m, const stpp_dataset* test,
                                const char* eval_json, char** report_json_out) {
    return guarded([&] {
        require(m != nullptr && test != nullptr && report_json_out != nullptr, "null argument");
        const json p = parse_params(eval_json);
        const stpp::EvalConfig cfg = parse_eval(p);
        cfg.validate();
        const bool with_prediction = p.value("with_prediction", false);

        std::optional<stpp::TrueModel> ref;
        stpp::IntensityFn ref_fn;
        const stpp::IntensityFn* ref_ptr = nullptr;
        if (p.contains("reference_kernel")) {
            ref = reference_model(p["reference_kernel"].get<std::string>(), test->ds);
            ref_fn = ref->as_intensity_fn();
            ref_ptr = &ref_fn;
        }

        const stpp::EvalReport report = stpp::evaluate(m->model, test->ds.sequences,
                                                       test->ds.window, cfg, ref_ptr,
                                                       with_prediction);
        json out = json::parse(stpp::eval_report_json(report));
        if (ref) {
            double ll = 0.0;
            std::size_t n = 0;
            for (const auto& seq : test->ds.sequences) {
                ll += ref->loglik(seq);
                n += seq.size();
            }
            if (n > 0) out["reference_loglik_per_event"] = ll / static_cast<double>(n);
        }
        *report_json_out = dup_string(out.dump(2));
    });
}

stpp_status stpp_model_predict(const stpp_model* m, const stpp_dataset* prefix,
                               const char* eval_json, char** json_out) {
    return guarded([&] {
        require(m != nullptr && prefix != nullptr && json_out != nullptr, "null argument");
        require(!prefix->ds.sequences.empty(), "prefix dataset carries no sequence");
        const stpp::EvalConfig cfg = parse_eval(parse_params(eval_json));
        cfg.validate();
        const stpp::EventSequence& seq = prefix->ds.sequences.front();
        const stpp::PredictionResult pred =
            stpp::predict_next_event(m->model, seq, prefix->ds.window, cfg);

        json out;
        out["t_hat"] = pred.t_hat;
        json s_hat = json::array();
        for (int d = 0; d < prefix->ds.window.spatial_dim; ++d) s_hat.push_back(pred.s_hat[d]);
        out["s_hat"] = std::move(s_hat);
        out["survival_tail"] = pred.survival_tail;
        out["horizon_exceeded"] = pred.horizon_exceeded;
        if (m->model.spec.num_marks > 0) {
            std::vector<double> probs(m->model.spec.num_marks, 0.0);
            double total = 0.0;
            for (int mk = 0; mk < m->model.spec.num_marks; ++mk) {
                probs[mk] = std::max(
                    0.0, m->model.intensity({seq.events.data(), seq.events.size()}, pred.t_hat,
                                            pred.s_hat, mk));
                total += probs[mk];
            }
            if (total <= 0.0)
                throw stpp::NumericalError("intensity vanished at the predicted point");
            for (double& v : probs) v /= total;
            out["mark_probs"] = probs;
        }
        *json_out = dup_string(out.dump(2));
    });
}

stpp_status stpp_model_export_curves(const stpp_model* m, const stpp_dataset* ds,
                                     const char* params_json, const char* out_dir) {
    return guarded([&] {
        require(m != nullptr && ds != nullptr && out_dir != nullptr, "null argument");
        const json p = parse_params(params_json);
        const int n_grid = p.value("heatmap_grid", 60);
        const int curve_nodes = p.value("curve_time_nodes", 400);
        const std::size_t seq_idx = p.value("sequence_index", std::size_t{0});
        const stpp::GridSizes sizes = parse_grids(p.value("grids", json::object()));
        std::filesystem::create_directories(out_dir);
        const std::filesystem::path dir(out_dir);

        const stpp::Window& w = ds->ds.window;
        const double t_end = w.t_end;
        const std::array<double, 2> center = window_center(w);

        auto fitted = [&](double t_prev, double t) {
            return t >= t_prev ? m->model.kernel_eval(t_prev, t, center, center) : 0.0;
        };
        stpp::write_kernel_heatmap_csv((dir / "kernel_fitted.csv").string(), fitted,
                                       {0.0, t_end}, {0.0, t_end}, n_grid);

        std::optional<stpp::TrueModel> ref;
        stpp::IntensityFn ref_fn;
        const stpp::IntensityFn* ref_ptr = nullptr;
        if (p.contains("reference_kernel")) {
            ref = reference_model(p["reference_kernel"].get<std::string>(), ds->ds);
            ref_fn = ref->as_intensity_fn();
            ref_ptr = &ref_fn;
            auto truth = [&](double t_prev, double t) {
                return t >= t_prev ? ref->kernel(t_prev, t, center, center) : 0.0;
            };
            stpp::write_kernel_heatmap_csv((dir / "kernel_true.csv").string(), truth,
                                           {0.0, t_end}, {0.0, t_end}, n_grid);
        }

        if (!ds->ds.sequences.empty()) {
            require(seq_idx < ds->ds.sequences.size(), "sequence_index out of range");
            stpp::write_intensity_curve_csv(
                (dir / ("intensity_seq" + std::to_string(seq_idx) + ".csv")).string(),
                m->model, ds->ds.sequences[seq_idx], w, sizes, curve_nodes, ref_ptr);
        }
    });
}

void stpp_model_free(stpp_model* m) { delete m; }

stpp_status stpp_rank_analysis(const char* params_json, char** json_out) {
    return guarded([&] {
        require(json_out != nullptr, "null output handle");
        const json p = parse_params(params_json);
        require(p.contains("kernel"), "rank parameters need a \"kernel\" id");
        const stpp::TrueModel tm = stpp::true_model(p["kernel"].get<std::string>());
        const int n = p.value("grid", 300);
        const double tol = p.value("tol", 1e-10);
        const double t_end = tm.window.t_end;
        const std::array<double, 2> center = window_center(tm.window);

        auto history_form = [&](double t_prev, double t) {
            return t >= t_prev ? tm.kernel(t_prev, t, center, center) : 0.0;
        };
        auto displacement_form = [&](double t_prev, double dt) {
            return tm.kernel(t_prev, t_prev + dt, center, center);
        };
        // both matrices sample the same [0, T] x [0, T] domain so their ranks
        // are directly comparable
        const int rank_hist =
            stpp::kernel_matrix_rank(history_form, {0.0, t_end}, {0.0, t_end}, n, tol);
        const int rank_disp = stpp::kernel_matrix_rank(displacement_form, {0.0, t_end},
                                                       {0.0, t_end}, n, tol);
        json out{{"kernel", tm.id},       {"grid", n},
                 {"tol", tol},            {"rank_history", rank_hist},
                 {"rank_displacement", rank_disp}};
        *json_out = dup_string(out.dump(2));
    });
}

}  // extern "C"
