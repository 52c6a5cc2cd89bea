#include "dataset_io.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "errors.hpp"
#include "io_util.hpp"

namespace stpp {

using nlohmann::json;

namespace {

json window_bounds(const Window& w) {
    json s = json::array();
    for (int d = 0; d < w.spatial_dim; ++d)
        s.push_back(json::array({w.s_bounds[d][0], w.s_bounds[d][1]}));
    return s;
}

void read_bounds(const json& s, Window& w) {
    if (!s.is_array() || s.size() > 2) throw ConfigError("dataset: S must list at most 2 axes");
    w.spatial_dim = static_cast<int>(s.size());
    for (int d = 0; d < w.spatial_dim; ++d) {
        const auto& axis = s[d];
        if (!axis.is_array() || axis.size() != 2)
            throw ConfigError("dataset: each S axis needs [lo, hi]");
        w.s_bounds[d] = {axis[0].get<double>(), axis[1].get<double>()};
    }
}

json sequence_record(const Window& w, const EventSequence& seq) {
    json rec;
    rec["T"] = w.t_end;
    rec["S"] = window_bounds(w);
    json events = json::array();
    for (const Event& e : seq.events) {
        json row = json::array({e.t});
        for (int d = 0; d < w.spatial_dim; ++d) row.push_back(e.s[d]);
        if (w.num_marks > 0) row.push_back(e.mark);
        events.push_back(std::move(row));
    }
    rec["events"] = std::move(events);
    return rec;
}

EventSequence parse_sequence(const json& rec, const Window& w, std::size_t line) {
    const auto fail = [line](const std::string& msg) {
        throw ConfigError("dataset line " + std::to_string(line) + ": " + msg);
    };
    if (!rec.contains("events") || !rec["events"].is_array()) fail("missing events array");
    if (rec.value("T", w.t_end) != w.t_end) fail("sequence window disagrees with header");
    Window rw = w;
    if (rec.contains("S")) read_bounds(rec["S"], rw);
    if (rw.spatial_dim != w.spatial_dim || (w.spatial_dim > 0 && rw.s_bounds != w.s_bounds))
        fail("sequence bounds disagree with header");

    const std::size_t row_len =
        1 + static_cast<std::size_t>(w.spatial_dim) + (w.num_marks > 0 ? 1 : 0);
    EventSequence seq;
    for (const auto& row : rec["events"]) {
        if (!row.is_array() || row.size() != row_len)
            fail("event rows need " + std::to_string(row_len) + " entries");
        Event e;
        e.t = row[0].get<double>();
        for (int d = 0; d < w.spatial_dim; ++d) e.s[d] = row[1 + d].get<double>();
        if (w.num_marks > 0) {
            if (!row[row_len - 1].is_number_integer()) fail("marks must be integers");
            e.mark = row[row_len - 1].get<int>();
        }
        seq.events.push_back(e);
    }
    return seq;
}

}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    validate_dataset(ds);
    std::ostringstream out;
    json header;
    header["kernel"] = ds.kernel_id;
    header["mu"] = ds.mu;
    header["seed"] = ds.seed;
    header["T"] = ds.window.t_end;
    header["S"] = window_bounds(ds.window);
    header["num_marks"] = ds.window.num_marks;
    header["sequences"] = ds.sequences.size();
    out << header.dump() << "\n";
    for (const auto& seq : ds.sequences) out << sequence_record(ds.window, seq).dump() << "\n";
    atomic_write_text(path, out.str());
}

Dataset load_dataset(const std::string& path) {
    std::istringstream in(read_text(path));
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("dataset file is empty: " + path);

    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw ConfigError("dataset header is not valid JSON: " + std::string(e.what()));
    }
    if (!header.contains("kernel") || !header.contains("T"))
        throw ConfigError("dataset header must carry kernel id and window");

    Dataset ds;
    ds.kernel_id = header["kernel"].get<std::string>();
    ds.mu = header.value("mu", 0.0);
    ds.seed = header.value("seed", std::uint64_t{0});
    ds.window.t_end = header["T"].get<double>();
    if (header.contains("S")) read_bounds(header["S"], ds.window);
    ds.window.num_marks = header.value("num_marks", 0);

    const std::size_t declared = header.value("sequences", std::size_t{0});
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ConfigError("dataset line " + std::to_string(line_no) +
                              " is not valid JSON: " + std::string(e.what()));
        }
        ds.sequences.push_back(parse_sequence(rec, ds.window, line_no));
    }
    if (header.contains("sequences") && ds.sequences.size() != declared)
        throw ConfigError("dataset header declares " + std::to_string(declared) +
                          " sequences but the file carries " +
                          std::to_string(ds.sequences.size()));
    validate_dataset(ds);
    return ds;
}

namespace {

json spec_to_json(const ModelSpec& s) {
    json j;
    j["spatial_dim"] = s.spatial_dim;
    j["temporal_rank"] = s.temporal_rank;
    j["spatial_rank"] = s.spatial_rank;
    j["mark_rank"] = s.mark_rank;
    j["num_marks"] = s.num_marks;
    j["tau_max"] = s.tau_max;
    j["a_max"] = s.a_max;
    j["hidden"] = s.hidden;
    j["temporal_param"] = to_string(s.temporal_param);
    j["t_ref"] = s.t_ref;
    j["mu_init"] = s.mu_init;
    j["alpha_init"] = s.alpha_init;
    return j;
}

ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.spatial_dim = j.at("spatial_dim").get<int>();
    s.temporal_rank = j.at("temporal_rank").get<int>();
    s.spatial_rank = j.at("spatial_rank").get<int>();
    s.mark_rank = j.at("mark_rank").get<int>();
    s.num_marks = j.at("num_marks").get<int>();
    s.tau_max = j.at("tau_max").get<double>();
    s.a_max = j.at("a_max").get<double>();
    s.hidden = j.at("hidden").get<std::vector<int>>();
    s.temporal_param = temporal_param_from_string(j.at("temporal_param").get<std::string>());
    s.t_ref = j.at("t_ref").get<double>();
    s.mu_init = j.value("mu_init", 1.0);
    s.alpha_init = j.value("alpha_init", 0.1);
    return s;
}

json adam_to_json(const AdamState& a) {
    json j;
    j["learning_rate"] = a.learning_rate;
    j["beta1"] = a.beta1;
    j["beta2"] = a.beta2;
    j["epsilon"] = a.epsilon;
    j["step"] = a.step;
    j["m"] = a.m;
    j["v"] = a.v;
    return j;
}

AdamState adam_from_json(const json& j) {
    AdamState a;
    a.learning_rate = j.at("learning_rate").get<double>();
    a.beta1 = j.at("beta1").get<double>();
    a.beta2 = j.at("beta2").get<double>();
    a.epsilon = j.at("epsilon").get<double>();
    a.step = j.at("step").get<std::int64_t>();
    a.m = j.at("m").get<std::vector<double>>();
    a.v = j.at("v").get<std::vector<double>>();
    return a;
}

}  // namespace

void save_checkpoint(const std::string& path, const KernelModel& model, const TrainState* state,
                     std::uint64_t model_seed) {
    json j;
    j["format_version"] = 1;
    j["model_seed"] = model_seed;
    j["spec"] = spec_to_json(model.spec);
    j["params"] = model.get_params();
    if (state != nullptr) {
        json t;
        t["w"] = state->w;
        t["batches_done"] = state->batches_done;
        t["epochs_done"] = state->epochs_done;
        t["adam"] = adam_to_json(state->adam);
        json hist = json::array();
        for (const EpochStats& row : state->history) {
            json r;
            r["epoch"] = row.epoch;
            r["neg_loglik"] = row.neg_loglik;
            r["barrier"] = row.barrier;
            r["w_end"] = row.w_end;
            r["b_last"] = row.b_last;
            r["step_retries"] = row.step_retries;
            hist.push_back(std::move(r));
        }
        t["history"] = std::move(hist);
        j["train"] = std::move(t);
    }
    atomic_write_text(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("checkpoint is not valid JSON: " + std::string(e.what()));
    }
    const int version = j.value("format_version", -1);
    if (version != 1)
        throw ConfigError("unsupported checkpoint format_version: " + std::to_string(version));

    Checkpoint ck;
    ck.model_seed = j.value("model_seed", std::uint64_t{0});
    const ModelSpec spec = spec_from_json(j.at("spec"));
    ck.model = KernelModel(spec, ck.model_seed);
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != ck.model.param_count())
        throw ShapeError("checkpoint parameter count does not match its spec");
    ck.model.set_params(params);

    if (j.contains("train")) {
        const json& t = j["train"];
        ck.has_state = true;
        ck.state.w = t.at("w").get<double>();
        ck.state.batches_done = t.at("batches_done").get<std::int64_t>();
        ck.state.epochs_done = t.at("epochs_done").get<int>();
        ck.state.adam = adam_from_json(t.at("adam"));
        for (const auto& r : t.value("history", json::array())) {
            EpochStats row;
            row.epoch = r.at("epoch").get<int>();
            row.neg_loglik = r.at("neg_loglik").get<double>();
            row.barrier = r.at("barrier").get<double>();
            row.w_end = r.at("w_end").get<double>();
            row.b_last = r.at("b_last").get<double>();
            row.step_retries = r.at("step_retries").get<int>();
            ck.state.history.push_back(row);
        }
    }
    return ck;
}

}  // namespace stpp
