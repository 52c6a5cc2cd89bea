// Command-line front end. Talks to the library exclusively through the C API;
// configuration is a JSON file whose sections individual flags can override,
// and every run leaves the resolved configuration next to its outputs.

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <stpp/stpp.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsageExit = 1;
constexpr int kRuntimeExit = 2;

[[noreturn]] void usage_fail(const std::string& msg) {
    std::cerr << "error: " << msg << "\n";
    std::exit(kUsageExit);
}

void check(stpp_status st) {
    if (st == STPP_OK) return;
    std::cerr << "error: " << stpp_last_error() << "\n";
    std::exit(st == STPP_USAGE_ERROR ? kUsageExit : kRuntimeExit);
}

std::string take_string(char* s) {
    std::string out = s == nullptr ? "" : s;
    stpp_string_free(s);
    return out;
}

struct DatasetHandle {
    stpp_dataset* p = nullptr;
    ~DatasetHandle() { stpp_dataset_free(p); }
    DatasetHandle() = default;
    DatasetHandle(const DatasetHandle&) = delete;
    DatasetHandle& operator=(const DatasetHandle&) = delete;
};

struct ModelHandle {
    stpp_model* p = nullptr;
    ~ModelHandle() { stpp_model_free(p); }
    ModelHandle() = default;
    ModelHandle(const ModelHandle&) = delete;
    ModelHandle& operator=(const ModelHandle&) = delete;
};

void atomic_write(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) usage_fail("cannot open for writing: " + tmp.string());
        out << content;
        if (!out.flush()) usage_fail("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        usage_fail("cannot move output into place: " + path.string());
    }
}

/// Flags shared by every subcommand.
struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
};

void add_common(CLI::App* sub, CommonOpts& c) {
    sub->add_option("--config", c.config_path, "JSON configuration file");
    sub->add_option("--seed", c.seed, "root seed (overrides the config)");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--threads", c.threads, "worker threads where supported");
}

/// Config file merged with the shared flag overrides. Per-command flags are
/// merged into their sections by the command handlers.
json load_config(const CommonOpts& c) {
    json cfg = json::object();
    if (!c.config_path.empty()) {
        std::ifstream in(c.config_path);
        if (!in) usage_fail("cannot open config file: " + c.config_path);
        try {
            cfg = json::parse(in);
        } catch (const json::exception& e) {
            usage_fail("config file is not valid JSON: " + std::string(e.what()));
        }
        if (!cfg.is_object()) usage_fail("config root must be a JSON object");
    }
    if (c.seed) cfg["seed"] = *c.seed;
    if (c.out) cfg["out"] = *c.out;
    if (c.threads) cfg["threads"] = *c.threads;
    if (!cfg.contains("seed")) cfg["seed"] = 0;
    if (!cfg.contains("threads")) cfg["threads"] = 1;
    if (!cfg.contains("out")) cfg["out"] = "stpp_out";
    return cfg;
}

fs::path out_dir_of(const json& cfg) {
    const fs::path dir(cfg["out"].get<std::string>());
    fs::create_directories(dir);
    return dir;
}

void write_resolved(const fs::path& dir, const std::string& command, json cfg) {
    cfg["command"] = command;
    atomic_write(dir / "config.resolved.json", cfg.dump(2) + "\n");
}

json section(const json& cfg, const char* name) {
    json s = cfg.value(name, json::object());
    if (!s.is_object()) usage_fail(std::string("config section \"") + name + "\" must be an object");
    return s;
}

/// Loads (or splits) the dataset a command works on. train_frac < 1 selects
/// the deterministic shuffle split; `use_train` picks which half.
stpp_dataset* open_split(const json& dataset_cfg, std::uint64_t seed, bool use_train,
                         stpp_dataset** whole_out) {
    if (!dataset_cfg.contains("path")) usage_fail("dataset path is required (--data)");
    stpp_dataset* whole = nullptr;
    check(stpp_dataset_load(dataset_cfg["path"].get<std::string>().c_str(), &whole));
    *whole_out = whole;
    const double frac = dataset_cfg.value("train_frac", 1.0);
    if (frac >= 1.0) return nullptr;
    stpp_dataset* train = nullptr;
    stpp_dataset* test = nullptr;
    check(stpp_dataset_split(whole, frac, seed, &train, &test));
    if (use_train) {
        stpp_dataset_free(test);
        return train;
    }
    stpp_dataset_free(train);
    return test;
}

// ---- commands --------------------------------------------------------------

int cmd_simulate(json cfg, const json& overrides) {
    json ds = section(cfg, "dataset");
    for (const auto& [k, v] : overrides.items()) ds[k] = v;
    if (!ds.contains("kernel")) usage_fail("simulate needs a kernel id (--kernel)");
    if (!ds.contains("sequences")) ds["sequences"] = 100;

    json params = ds;
    params.erase("path");
    params.erase("train_frac");
    params["seed"] = cfg["seed"];
    params["threads"] = cfg["threads"];

    DatasetHandle data;
    check(stpp_dataset_simulate(params.dump().c_str(), &data.p));

    const fs::path dir = out_dir_of(cfg);
    const fs::path file = dir / "dataset.jsonl";
    check(stpp_dataset_save(data.p, file.string().c_str()));

    char* info = nullptr;
    check(stpp_dataset_info(data.p, &info));
    std::cout << take_string(info) << "\n";
    std::cerr << "dataset written to " << file.string() << "\n";

    cfg["dataset"] = ds;
    write_resolved(dir, "simulate", cfg);
    return 0;
}

int cmd_fit(json cfg, const json& ds_over, const json& train_over,
            const std::string& init_path) {
    json ds = section(cfg, "dataset");
    for (const auto& [k, v] : ds_over.items()) ds[k] = v;
    json train_cfg = section(cfg, "train");
    for (const auto& [k, v] : train_over.items()) train_cfg[k] = v;
    if (!train_cfg.contains("seed")) train_cfg["seed"] = cfg["seed"];
    json model_cfg = section(cfg, "model");
    if (!model_cfg.contains("seed")) model_cfg["seed"] = cfg["seed"];

    DatasetHandle whole, part;
    part.p = open_split(ds, cfg["seed"].get<std::uint64_t>(), /*use_train=*/true, &whole.p);
    stpp_dataset* train_data = part.p != nullptr ? part.p : whole.p;

    ModelHandle model;
    if (!init_path.empty()) {
        check(stpp_model_load(init_path.c_str(), &model.p));
    } else {
        json spec = model_cfg;
        spec.erase("seed");
        spec.erase("checkpoint");
        check(stpp_model_create(spec.dump().c_str(),
                                model_cfg["seed"].get<std::uint64_t>(), &model.p));
    }

    const fs::path dir = out_dir_of(cfg);
    const fs::path history = dir / "history.csv";
    check(stpp_model_fit(model.p, train_data, train_cfg.dump().c_str(),
                         history.string().c_str()));

    const fs::path ckpt = dir / "model.json";
    check(stpp_model_save(model.p, ckpt.string().c_str()));

    char* info = nullptr;
    check(stpp_model_info(model.p, &info));
    std::cout << take_string(info) << "\n";
    std::cerr << "checkpoint written to " << ckpt.string() << "\n";

    cfg["dataset"] = ds;
    cfg["train"] = train_cfg;
    cfg["model"] = model_cfg;
    if (!init_path.empty()) cfg["model"]["init"] = init_path;
    write_resolved(dir, "fit", cfg);
    return 0;
}

int cmd_eval(json cfg, const json& ds_over, const json& eval_over,
             const std::string& checkpoint) {
    json ds = section(cfg, "dataset");
    for (const auto& [k, v] : ds_over.items()) ds[k] = v;
    json eval_cfg = section(cfg, "eval");
    for (const auto& [k, v] : eval_over.items()) eval_cfg[k] = v;
    if (checkpoint.empty()) usage_fail("eval needs a model checkpoint (--checkpoint)");

    DatasetHandle whole, part;
    part.p = open_split(ds, cfg["seed"].get<std::uint64_t>(), /*use_train=*/false, &whole.p);
    stpp_dataset* test_data = part.p != nullptr ? part.p : whole.p;

    ModelHandle model;
    check(stpp_model_load(checkpoint.c_str(), &model.p));

    char* report_raw = nullptr;
    check(stpp_model_evaluate(model.p, test_data, eval_cfg.dump().c_str(), &report_raw));
    const std::string report = take_string(report_raw);

    const fs::path dir = out_dir_of(cfg);
    json export_cfg = section(cfg, "export");
    if (eval_cfg.contains("reference_kernel") && !export_cfg.contains("reference_kernel"))
        export_cfg["reference_kernel"] = eval_cfg["reference_kernel"];
    check(stpp_model_export_curves(model.p, test_data, export_cfg.dump().c_str(),
                                   dir.string().c_str()));

    atomic_write(dir / "report.json", report + "\n");
    std::cout << report << "\n";
    std::cerr << "report written to " << (dir / "report.json").string() << "\n";

    cfg["dataset"] = ds;
    cfg["eval"] = eval_cfg;
    cfg["export"] = export_cfg;
    cfg["model"] = section(cfg, "model");
    cfg["model"]["checkpoint"] = checkpoint;
    write_resolved(dir, "eval", cfg);
    return 0;
}

int cmd_rank(json cfg, const json& rank_over) {
    json rank_cfg = section(cfg, "rank");
    for (const auto& [k, v] : rank_over.items()) rank_cfg[k] = v;
    if (!rank_cfg.contains("kernel")) usage_fail("rank needs a kernel id (--kernel)");

    char* result_raw = nullptr;
    check(stpp_rank_analysis(rank_cfg.dump().c_str(), &result_raw));
    const std::string result = take_string(result_raw);

    const fs::path dir = out_dir_of(cfg);
    atomic_write(dir / "rank.json", result + "\n");
    std::cout << result << "\n";

    cfg["rank"] = rank_cfg;
    write_resolved(dir, "rank", cfg);
    return 0;
}

int cmd_predict(json cfg, const json& ds_over, const std::string& checkpoint) {
    json ds = section(cfg, "dataset");
    for (const auto& [k, v] : ds_over.items()) ds[k] = v;
    if (!ds.contains("path")) usage_fail("predict needs an event-prefix file (--data)");
    if (checkpoint.empty()) usage_fail("predict needs a model checkpoint (--checkpoint)");

    DatasetHandle prefix;
    check(stpp_dataset_load(ds["path"].get<std::string>().c_str(), &prefix.p));
    ModelHandle model;
    check(stpp_model_load(checkpoint.c_str(), &model.p));

    char* result_raw = nullptr;
    check(stpp_model_predict(model.p, prefix.p, section(cfg, "eval").dump().c_str(),
                             &result_raw));
    const std::string result = take_string(result_raw);

    const fs::path dir = out_dir_of(cfg);
    atomic_write(dir / "prediction.json", result + "\n");
    std::cout << result << "\n";

    cfg["dataset"] = ds;
    cfg["model"] = section(cfg, "model");
    cfg["model"]["checkpoint"] = checkpoint;
    write_resolved(dir, "predict", cfg);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spatio-temporal point process toolkit"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* sim = app.add_subcommand("simulate", "sample sequences from a ground-truth kernel");
    add_common(sim, common);
    std::string sim_kernel;
    std::optional<int> sim_sequences;
    std::optional<double> sim_mu, sim_T;
    sim->add_option("--kernel", sim_kernel, "generating kernel id");
    sim->add_option("--sequences", sim_sequences, "number of sequences");
    sim->add_option("--mu", sim_mu, "background rate override");
    sim->add_option("--T", sim_T, "window length override");

    auto* fit = app.add_subcommand("fit", "train a model by penalized maximum likelihood");
    add_common(fit, common);
    std::string fit_data, fit_init;
    std::optional<int> fit_epochs, fit_batch;
    std::optional<double> fit_lr, fit_frac;
    fit->add_option("--data", fit_data, "training dataset file");
    fit->add_option("--init", fit_init, "checkpoint to resume from");
    fit->add_option("--epochs", fit_epochs, "training epochs");
    fit->add_option("--batch-size", fit_batch, "sequences per optimizer step");
    fit->add_option("--lr", fit_lr, "learning rate");
    fit->add_option("--train-frac", fit_frac, "train on this fraction (rest held out)");

    auto* ev = app.add_subcommand("eval", "score a checkpoint on a test dataset");
    add_common(ev, common);
    std::string eval_data, eval_ckpt, eval_ref;
    std::optional<double> eval_frac;
    bool eval_predict = false;
    ev->add_option("--data", eval_data, "evaluation dataset file");
    ev->add_option("--checkpoint", eval_ckpt, "model checkpoint");
    ev->add_option("--reference", eval_ref, "ground-truth kernel id for intensity recovery");
    ev->add_option("--train-frac", eval_frac, "evaluate on the held-out remainder");
    ev->add_flag("--predict", eval_predict, "also run next-event prediction metrics");

    auto* rk = app.add_subcommand("rank", "numerical rank of a kernel under both parameterizations");
    add_common(rk, common);
    std::string rank_kernel;
    std::optional<int> rank_grid;
    std::optional<double> rank_tol;
    rk->add_option("--kernel", rank_kernel, "kernel id");
    rk->add_option("--grid", rank_grid, "grid resolution per axis");
    rk->add_option("--tol", rank_tol, "singular value cutoff relative to the largest");

    auto* pr = app.add_subcommand("predict", "expected next event after an observed prefix");
    add_common(pr, common);
    std::string pred_data, pred_ckpt;
    pr->add_option("--data", pred_data, "event-prefix dataset file");
    pr->add_option("--checkpoint", pred_ckpt, "model checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageExit;
    }

    const json cfg = load_config(common);

    if (sim->parsed()) {
        json over = json::object();
        if (!sim_kernel.empty()) over["kernel"] = sim_kernel;
        if (sim_sequences) over["sequences"] = *sim_sequences;
        if (sim_mu) over["mu"] = *sim_mu;
        if (sim_T) over["T"] = *sim_T;
        return cmd_simulate(cfg, over);
    }
    if (fit->parsed()) {
        json ds_over = json::object();
        if (!fit_data.empty()) ds_over["path"] = fit_data;
        if (fit_frac) ds_over["train_frac"] = *fit_frac;
        json train_over = json::object();
        if (fit_epochs) train_over["epochs"] = *fit_epochs;
        if (fit_batch) train_over["batch_size"] = *fit_batch;
        if (fit_lr) train_over["learning_rate"] = *fit_lr;
        std::string init = fit_init;
        if (init.empty() && cfg.contains("model") && cfg["model"].contains("init"))
            init = cfg["model"]["init"].get<std::string>();
        return cmd_fit(cfg, ds_over, train_over, init);
    }
    if (ev->parsed()) {
        json ds_over = json::object();
        if (!eval_data.empty()) ds_over["path"] = eval_data;
        if (eval_frac) ds_over["train_frac"] = *eval_frac;
        json eval_over = json::object();
        if (!eval_ref.empty()) eval_over["reference_kernel"] = eval_ref;
        if (eval_predict) eval_over["with_prediction"] = true;
        std::string ckpt = eval_ckpt;
        if (ckpt.empty() && cfg.contains("model") && cfg["model"].contains("checkpoint"))
            ckpt = cfg["model"]["checkpoint"].get<std::string>();
        return cmd_eval(cfg, ds_over, eval_over, ckpt);
    }
    if (rk->parsed()) {
        json over = json::object();
        if (!rank_kernel.empty()) over["kernel"] = rank_kernel;
        if (rank_grid) over["grid"] = *rank_grid;
        if (rank_tol) over["tol"] = *rank_tol;
        return cmd_rank(cfg, over);
    }
    if (pr->parsed()) {
        json ds_over = json::object();
        if (!pred_data.empty()) ds_over["path"] = pred_data;
        std::string ckpt = pred_ckpt;
        if (ckpt.empty() && cfg.contains("model") && cfg["model"].contains("checkpoint"))
            ckpt = cfg["model"]["checkpoint"].get<std::string>();
        return cmd_predict(cfg, ds_over, ckpt);
    }
    return kUsageExit;
}
