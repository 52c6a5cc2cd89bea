#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <stpp/stpp.h>

#include "core/dataset_io.hpp"
#include "core/errors.hpp"
#include "core/io_util.hpp"
#include "core/simulate.hpp"
#include "core/trainer.hpp"

using namespace stpp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "stpp_io_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(STPP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Dataset handmade_marked_dataset() {
    Dataset ds;
    ds.kernel_id = "handmade";
    ds.mu = 0.37;
    ds.seed = 99;
    ds.window.t_end = 10.0;
    ds.window.spatial_dim = 2;
    ds.window.s_bounds = {{{-1.0, 1.0}, {0.0, 2.0}}};
    ds.window.num_marks = 3;
    EventSequence a;
    a.events.push_back({0.1 + 1.0 / 3.0, {-0.123456789012345, 1.0 / 7.0}, 0});
    a.events.push_back({2.718281828459045, {0.5, 1.999999999999}, 2});
    EventSequence b;  // stays empty
    EventSequence c;
    c.events.push_back({9.999, {1.0, 0.0}, 1});
    ds.sequences = {a, b, c};
    return ds;
}

bool same_dataset(const Dataset& x, const Dataset& y) {
    if (x.kernel_id != y.kernel_id || x.mu != y.mu || x.seed != y.seed) return false;
    if (x.window.t_end != y.window.t_end || x.window.spatial_dim != y.window.spatial_dim ||
        x.window.num_marks != y.window.num_marks)
        return false;
    for (int d = 0; d < x.window.spatial_dim; ++d)
        if (x.window.s_bounds[d] != y.window.s_bounds[d]) return false;
    if (x.sequences.size() != y.sequences.size()) return false;
    for (std::size_t i = 0; i < x.sequences.size(); ++i) {
        const auto& ex = x.sequences[i].events;
        const auto& ey = y.sequences[i].events;
        if (ex.size() != ey.size()) return false;
        for (std::size_t j = 0; j < ex.size(); ++j) {
            if (ex[j].t != ey[j].t || ex[j].mark != ey[j].mark) return false;
            for (int d = 0; d < x.window.spatial_dim; ++d)
                if (ex[j].s[d] != ey[j].s[d]) return false;
        }
    }
    return true;
}

std::vector<EventSequence> tiny_sequences(int count, double rate, double t_end,
                                          std::uint64_t seed) {
    TrueModel tm = true_model("1d-exp");
    tm.mu = rate;
    tm.window.t_end = t_end;
    Dataset ds = generate_dataset(tm, count, seed);
    return ds.sequences;
}

}  // namespace

TEST_CASE("a dataset survives the file round trip bit for bit") {
    const fs::path dir = fresh_dir("roundtrip");
    const Dataset ds = handmade_marked_dataset();
    const std::string path = (dir / "data.jsonl").string();
    save_dataset(path, ds);

    const Dataset back = load_dataset(path);
    CHECK(same_dataset(ds, back));

    // and the re-serialization is byte-identical
    const std::string path2 = (dir / "data2.jsonl").string();
    save_dataset(path2, back);
    CHECK(read_text(path) == read_text(path2));
}

TEST_CASE("simulated datasets of every preset round trip exactly") {
    const fs::path dir = fresh_dir("roundtrip_sim");
    int i = 0;
    for (const auto& id : {"1d-nonstat", "2d-exp", "3d-inhib"}) {
        const Dataset ds = generate_dataset(true_model(id), 4, 11 + i);
        const std::string path = (dir / ("d" + std::to_string(i++) + ".jsonl")).string();
        save_dataset(path, ds);
        CHECK(same_dataset(ds, load_dataset(path)));
    }
}

TEST_CASE("an empty dataset is a single header line") {
    const fs::path dir = fresh_dir("empty");
    Dataset ds;
    ds.kernel_id = "1d-exp";
    ds.mu = 0.1;
    ds.window.t_end = 100.0;
    const std::string path = (dir / "empty.jsonl").string();
    save_dataset(path, ds);

    const std::string text = read_text(path);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
    const Dataset back = load_dataset(path);
    CHECK(back.sequences.empty());
    CHECK(back.kernel_id == "1d-exp");
}

TEST_CASE("malformed dataset files are rejected with a line diagnosis") {
    const fs::path dir = fresh_dir("malformed");
    auto write = [&](const std::string& name, const std::string& text) {
        const std::string p = (dir / name).string();
        std::ofstream(p) << text;
        return p;
    };

    CHECK_THROWS_AS(load_dataset(write("garbage.jsonl", "not json\n")), ConfigError);
    CHECK_THROWS_AS(load_dataset(write("nokernel.jsonl", R"({"T":1.0})" "\n")), ConfigError);
    CHECK_THROWS_AS(load_dataset((dir / "absent.jsonl").string()), ConfigError);

    const std::string head =
        R"({"kernel":"k","mu":1.0,"seed":0,"T":5.0,"S":[[0.0,1.0]],"num_marks":0,"sequences":1})";
    CHECK_THROWS_AS(
        load_dataset(write("shortrow.jsonl", head + "\n" + R"({"events":[[1.0]]})" + "\n")),
        ConfigError);
    CHECK_THROWS_AS(
        load_dataset(write("badcount.jsonl", head + "\n")),  // declares 1, carries 0
        ConfigError);
    CHECK_THROWS_AS(
        load_dataset(write("badbounds.jsonl",
                           head + "\n" + R"({"S":[[0.0,2.0]],"events":[]})" + "\n")),
        ConfigError);
    CHECK_THROWS_AS(
        load_dataset(write("outside.jsonl",
                           head + "\n" + R"({"events":[[7.0,0.5]]})" + "\n")),
        DomainError);
    CHECK_THROWS_AS(
        load_dataset(write("unordered.jsonl",
                           head + "\n" + R"({"events":[[2.0,0.5],[1.0,0.5]]})" + "\n")),
        DomainError);
}

TEST_CASE("checkpoints restore parameters exactly") {
    const fs::path dir = fresh_dir("ckpt");
    ModelSpec spec;
    spec.spatial_dim = 1;
    spec.temporal_rank = 2;
    spec.spatial_rank = 2;
    spec.tau_max = 3.0;
    spec.a_max = 1.0;
    spec.hidden = {8, 8};
    KernelModel model(spec, 42);

    // scramble the parameters so the test is not about the initializer
    std::vector<double> params = model.get_params();
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i] += std::sin(0.7 * static_cast<double>(i)) / 3.0;
    model.set_params(params);

    const std::string path = (dir / "model.json").string();
    save_checkpoint(path, model, nullptr, 42);
    const Checkpoint back = load_checkpoint(path);

    CHECK(back.model_seed == 42);
    CHECK_FALSE(back.has_state);
    CHECK(back.model.spec.spatial_dim == 1);
    CHECK(back.model.spec.temporal_rank == 2);
    CHECK(back.model.spec.hidden == std::vector<int>{8, 8});
    CHECK(back.model.get_params() == params);
}

TEST_CASE("training resumed from a checkpoint file matches the uninterrupted run") {
    const fs::path dir = fresh_dir("resume");
    const auto seqs = tiny_sequences(6, 0.4, 40.0, 5);

    ModelSpec spec;
    spec.tau_max = 5.0;
    spec.hidden = {8, 8};
    Window window;
    window.t_end = 40.0;

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.learning_rate = 0.02;
    cfg.seed = 5;

    KernelModel straight(spec, 7);
    TrainState straight_state;
    straight_state.init(straight, cfg);
    cfg.epochs = 4;
    train(straight, straight_state, seqs, window, cfg);

    KernelModel first(spec, 7);
    TrainState first_state;
    first_state.init(first, cfg);
    cfg.epochs = 2;
    train(first, first_state, seqs, window, cfg);
    const std::string path = (dir / "half.json").string();
    save_checkpoint(path, first, &first_state, 7);

    Checkpoint resumed = load_checkpoint(path);
    REQUIRE(resumed.has_state);
    CHECK(resumed.state.epochs_done == 2);
    CHECK(resumed.state.adam.m == first_state.adam.m);
    CHECK(resumed.state.adam.v == first_state.adam.v);
    CHECK(resumed.state.adam.step == first_state.adam.step);
    CHECK(resumed.state.w == first_state.w);
    train(resumed.model, resumed.state, seqs, window, cfg);

    CHECK(resumed.model.get_params() == straight.get_params());
    CHECK(resumed.state.w == straight_state.w);
    CHECK(resumed.state.batches_done == straight_state.batches_done);
    REQUIRE(resumed.state.history.size() == straight_state.history.size());
    for (std::size_t i = 0; i < straight_state.history.size(); ++i) {
        CHECK(resumed.state.history[i].epoch == straight_state.history[i].epoch);
        CHECK(resumed.state.history[i].neg_loglik ==
              doctest::Approx(straight_state.history[i].neg_loglik).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint loading rejects foreign or inconsistent files") {
    const fs::path dir = fresh_dir("ckpt_bad");
    auto write = [&](const std::string& name, const std::string& text) {
        const std::string p = (dir / name).string();
        std::ofstream(p) << text;
        return p;
    };
    CHECK_THROWS_AS(load_checkpoint(write("garbage.json", "nope")), ConfigError);
    CHECK_THROWS_AS(load_checkpoint(write("v2.json", R"({"format_version":2})")), ConfigError);

    ModelSpec spec;
    spec.hidden = {4, 4};
    KernelModel model(spec, 1);
    const std::string good = (dir / "good.json").string();
    save_checkpoint(good, model);
    json j = json::parse(read_text(good));
    j["params"].push_back(0.0);
    CHECK_THROWS_AS(load_checkpoint(write("extra_param.json", j.dump())), ShapeError);
}

TEST_CASE("writers leave no temporary files behind") {
    const fs::path dir = fresh_dir("atomic");
    save_dataset((dir / "d.jsonl").string(), handmade_marked_dataset());
    ModelSpec spec;
    spec.hidden = {4, 4};
    KernelModel model(spec, 3);
    save_checkpoint((dir / "m.json").string(), model);
    for (const auto& entry : fs::directory_iterator(dir))
        CHECK(entry.path().string().find(".tmp.") == std::string::npos);
}

TEST_CASE("the C API flags bad input without touching out-parameters") {
    CHECK(std::string(stpp_version()) == "1.0.0");

    stpp_dataset* ds = nullptr;
    CHECK(stpp_dataset_simulate("{broken", &ds) == STPP_USAGE_ERROR);
    CHECK(ds == nullptr);
    CHECK_FALSE(std::string(stpp_last_error()).empty());

    CHECK(stpp_dataset_simulate(R"({"sequences":3})", &ds) == STPP_USAGE_ERROR);
    CHECK(ds == nullptr);
    CHECK(stpp_dataset_simulate(R"({"kernel":"1d-exp"})", nullptr) == STPP_USAGE_ERROR);
    CHECK(stpp_dataset_load("/definitely/not/here.jsonl", &ds) == STPP_USAGE_ERROR);

    stpp_model* m = nullptr;
    CHECK(stpp_model_create(R"({"hidden":[0]})", 1, &m) == STPP_USAGE_ERROR);
    CHECK(m == nullptr);
}

TEST_CASE("the C API simulate/split/save/load cycle is consistent") {
    const fs::path dir = fresh_dir("capi");
    stpp_dataset* ds = nullptr;
    REQUIRE(stpp_dataset_simulate(R"({"kernel":"1d-exp","sequences":10,"seed":3,"T":30.0})",
                                  &ds) == STPP_OK);
    char* info_raw = nullptr;
    REQUIRE(stpp_dataset_info(ds, &info_raw) == STPP_OK);
    const json info = json::parse(info_raw);
    stpp_string_free(info_raw);
    CHECK(info["sequences"] == 10);
    CHECK(info["T"] == 30.0);

    stpp_dataset* train = nullptr;
    stpp_dataset* test = nullptr;
    REQUIRE(stpp_dataset_split(ds, 0.8, 3, &train, &test) == STPP_OK);
    char* a = nullptr;
    char* b = nullptr;
    REQUIRE(stpp_dataset_info(train, &a) == STPP_OK);
    REQUIRE(stpp_dataset_info(test, &b) == STPP_OK);
    const json ja = json::parse(a);
    const json jb = json::parse(b);
    stpp_string_free(a);
    stpp_string_free(b);
    CHECK(ja["sequences"] == 8);
    CHECK(jb["sequences"] == 2);
    CHECK(ja["events"].get<int>() + jb["events"].get<int>() == info["events"].get<int>());

    const std::string path = (dir / "d.jsonl").string();
    REQUIRE(stpp_dataset_save(ds, path.c_str()) == STPP_OK);
    stpp_dataset* back = nullptr;
    REQUIRE(stpp_dataset_load(path.c_str(), &back) == STPP_OK);
    char* c = nullptr;
    REQUIRE(stpp_dataset_info(back, &c) == STPP_OK);
    CHECK(json::parse(c)["events"] == info["events"]);
    stpp_string_free(c);

    stpp_dataset_free(ds);
    stpp_dataset_free(train);
    stpp_dataset_free(test);
    stpp_dataset_free(back);
}

TEST_CASE("the command line simulates reproducibly") {
    const fs::path dir = fresh_dir("cli_sim");
    const std::string base = "simulate --kernel 1d-exp --sequences 6 --T 30 --seed ";
    CHECK(run_cli(base + "9 --out " + (dir / "a").string()) == 0);
    CHECK(run_cli(base + "9 --out " + (dir / "b").string()) == 0);
    CHECK(run_cli(base + "10 --out " + (dir / "c").string()) == 0);

    const std::string bytes_a = read_text((dir / "a/dataset.jsonl").string());
    CHECK(bytes_a == read_text((dir / "b/dataset.jsonl").string()));
    CHECK(bytes_a != read_text((dir / "c/dataset.jsonl").string()));

    // the resolved config alone reproduces the dataset
    CHECK(run_cli("simulate --config " + (dir / "a/config.resolved.json").string() +
                  " --out " + (dir / "rep").string()) == 0);
    CHECK(bytes_a == read_text((dir / "rep/dataset.jsonl").string()));

    const json resolved = json::parse(read_text((dir / "a/config.resolved.json").string()));
    CHECK(resolved["command"] == "simulate");
    CHECK(resolved["seed"] == 9);
    CHECK(resolved["dataset"]["kernel"] == "1d-exp");
}

TEST_CASE("the command line distinguishes usage from runtime failures") {
    const fs::path dir = fresh_dir("cli_codes");
    CHECK(run_cli("") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("simulate --sequences 3") == 1);                      // no kernel
    CHECK(run_cli("simulate --kernel unknown-id --sequences 1") == 1);  // bad kernel
    CHECK(run_cli("rank") == 1);

    // prepare a dataset and a checkpoint whose background rate is negative:
    // evaluation hits a non-positive intensity, a runtime failure
    REQUIRE(run_cli("simulate --kernel 1d-exp --sequences 4 --T 20 --seed 2 --out " +
                    (dir / "sim").string()) == 0);
    ModelSpec spec;
    spec.tau_max = 5.0;
    spec.hidden = {4, 4};
    KernelModel model(spec, 1);
    std::vector<double> params = model.get_params();
    params[0] = -5.0;  // background rate
    model.set_params(params);
    save_checkpoint((dir / "bad_model.json").string(), model);

    const fs::path out = dir / "eval_bad";
    CHECK(run_cli("eval --data " + (dir / "sim/dataset.jsonl").string() + " --checkpoint " +
                  (dir / "bad_model.json").string() + " --out " + out.string()) == 2);
    CHECK_FALSE(fs::exists(out / "report.json"));

    // missing checkpoint: usage failure, nothing written
    const fs::path out2 = dir / "eval_missing";
    CHECK(run_cli("eval --data " + (dir / "sim/dataset.jsonl").string() +
                  " --checkpoint /no/such/model.json --out " + out2.string()) == 1);
    CHECK_FALSE(fs::exists(out2));
}

TEST_CASE("the command line pipeline runs end to end and resumes exactly") {
    const fs::path dir = fresh_dir("cli_pipeline");
    REQUIRE(run_cli("simulate --kernel 1d-exp --sequences 8 --T 30 --seed 3 --out " +
                    (dir / "sim").string()) == 0);
    const std::string data = (dir / "sim/dataset.jsonl").string();

    json cfg;
    cfg["model"] = {{"tau_max", 5.0}, {"hidden", {8, 8}}};
    const std::string cfg_path = (dir / "cfg.json").string();
    std::ofstream(cfg_path) << cfg.dump();

    const std::string fit_base = "fit --config " + cfg_path + " --data " + data +
                                 " --seed 5 --lr 0.02 --batch-size 8 ";

    // uninterrupted: four epochs in one run
    REQUIRE(run_cli(fit_base + "--epochs 4 --out " + (dir / "full").string()) == 0);
    // interrupted: two epochs, then two more from the checkpoint
    REQUIRE(run_cli(fit_base + "--epochs 2 --out " + (dir / "half").string()) == 0);
    REQUIRE(run_cli(fit_base + "--epochs 2 --init " + (dir / "half/model.json").string() +
                    " --out " + (dir / "resumed").string()) == 0);

    CHECK(read_text((dir / "full/model.json").string()) ==
          read_text((dir / "resumed/model.json").string()));

    // history rows: 4 epochs + header
    const std::string hist = read_text((dir / "full/history.csv").string());
    CHECK(std::count(hist.begin(), hist.end(), '\n') == 5);

    // zero further epochs change nothing
    REQUIRE(run_cli(fit_base + "--epochs 0 --init " + (dir / "full/model.json").string() +
                    " --out " + (dir / "noop").string()) == 0);
    CHECK(read_text((dir / "full/model.json").string()) ==
          read_text((dir / "noop/model.json").string()));

    // evaluation emits a parseable report plus plotting files
    REQUIRE(run_cli("eval --data " + data + " --checkpoint " +
                    (dir / "full/model.json").string() + " --reference 1d-exp --seed 5" +
                    " --out " + (dir / "eval").string()) == 0);
    const json report = json::parse(read_text((dir / "eval/report.json").string()));
    CHECK(report.contains("loglik_per_event"));
    CHECK(report.contains("mre"));
    CHECK(report.contains("reference_loglik_per_event"));
    CHECK(fs::exists(dir / "eval/kernel_fitted.csv"));
    CHECK(fs::exists(dir / "eval/kernel_true.csv"));
    CHECK(fs::exists(dir / "eval/intensity_seq0.csv"));
    CHECK(fs::exists(dir / "eval/config.resolved.json"));

    // prediction emits finite coordinates
    REQUIRE(run_cli("predict --data " + data + " --checkpoint " +
                    (dir / "full/model.json").string() + " --out " +
                    (dir / "pred").string()) == 0);
    const json pred = json::parse(read_text((dir / "pred/prediction.json").string()));
    CHECK(std::isfinite(pred["t_hat"].get<double>()));

    // rank analysis through the command line
    REQUIRE(run_cli("rank --kernel 1d-infrank --grid 80 --tol 1e-6 --out " +
                    (dir / "rank").string()) == 0);
    const json rank = json::parse(read_text((dir / "rank/rank.json").string()));
    CHECK(rank["rank_history"].get<int>() > rank["rank_displacement"].get<int>());
}
