#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "tsarag/cli.hpp"

using namespace tsarag;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "tsarag");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

/// Exit status of the installed binary; output goes to `log`.
int run_binary(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(TSARAG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("tsarag_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

/// Small forecasting config so each run takes a fraction of a second.
fs::path write_small_config(const fs::path& dir, const std::string& task) {
    dataio::ExperimentConfig c;
    c.task = parse_task_kind(task);
    c.set_seed(3);
    dataio::SyntheticSpec s;
    s.generator = dataio::default_generator(c.task);
    s.n = 2;
    s.t = 400;
    s.segments = 2;
    c.synthetic = s;
    c.hyper.epochs = 15;
    c.pool = {6, 2, 2, 8};
    c.out_dir = (dir / "out").string();
    const fs::path path = dir / "c.json";
    dataio::write_file(path, dataio::config_to_json(c).dump(2));
    return path;
}

}  // namespace

TEST_CASE("ask prints the routed task", "[cli]") {
    const auto r = run({"ask", "--text", "forecast tomorrow"});
    CHECK(r.code == 0);
    CHECK(r.out == "Forecast\n");
    const auto amb = run({"ask", "--text", "predict missing values"});
    CHECK(amb.code == 2);
    CHECK(amb.err.find("AmbiguousRequest") != std::string::npos);
}

TEST_CASE("usage errors exit with 1", "[cli]") {
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({}).code == 1);
    CHECK(run({"ask"}).code == 1);
    CHECK(run({"forecast", "--generator", "walk"}).code == 1);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("the binary maps errors to exit codes", "[cli]") {
    const fs::path dir = scratch("binary");
    CHECK(run_binary("ask --text \"fill the gaps\"", dir / "log") == 0);
    CHECK(dataio::read_file(dir / "log") == "Impute\n");
    CHECK(run_binary("no-such-command", dir / "log") == 1);
    CHECK(run_binary("forecast --config " + (dir / "absent.json").string(), dir / "log") == 2);
    const std::string log = dataio::read_file(dir / "log");
    CHECK(log.rfind("error: ", 0) == 0);
    CHECK(std::count(log.begin(), log.end(), '\n') == 1);
}

TEST_CASE("forecast runs are byte-for-byte reproducible", "[cli]") {
    const fs::path dir = scratch("determinism");
    const fs::path cfg = write_small_config(dir, "forecast");
    const auto a = run({"forecast", "--config", cfg.string(), "--seed", "7", "--out", (dir / "a").string()});
    REQUIRE(a.code == 0);
    const auto b = run({"forecast", "--config", cfg.string(), "--seed", "7", "--out", (dir / "b").string()});
    REQUIRE(b.code == 0);
    CHECK(a.out.find("Forecast: MAE=") == 0);
    const std::string pa = dataio::read_file(dir / "a" / "payload.csv");
    CHECK(pa == dataio::read_file(dir / "b" / "payload.csv"));
    CHECK(pa.rfind("t,series_id,prediction,truth\n", 0) == 0);
    const auto resp = dataio::parse_response(dataio::read_file(dir / "a" / "response.json"));
    CHECK(resp.kind == TaskKind::Forecast);
    const auto saved = dataio::load_config(dir / "a" / "config.json");
    CHECK(saved.seed == 7);
    CHECK(saved.synthetic->seed == 7);

    const auto c = run({"forecast", "--config", cfg.string(), "--seed", "8", "--out", (dir / "c").string()});
    REQUIRE(c.code == 0);
    CHECK(pa != dataio::read_file(dir / "c" / "payload.csv"));
}

TEST_CASE("each task subcommand writes its payload", "[cli]") {
    const fs::path dir = scratch("tasks");
    for (const std::string task : {"impute", "anomaly", "classify"}) {
        const fs::path cfg = write_small_config(dir, task);
        const fs::path out = dir / task;
        const auto r = run({task, "--config", cfg.string(), "--out", out.string()});
        INFO(task << ": " << r.err);
        REQUIRE(r.code == 0);
        const auto resp = dataio::parse_response(dataio::read_file(out / "response.json"));
        CHECK(resp.kind == parse_task_kind(task));
        CHECK(fs::exists(out / "payload.csv"));
    }
}

TEST_CASE("ask --execute runs the routed sub-agent", "[cli]") {
    const fs::path dir = scratch("execute");
    const fs::path cfg = write_small_config(dir, "anomaly");
    const auto r = run({"ask", "--text", "find faults", "--execute", "--config", cfg.string(), "--no-train"});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("Anomaly\nAnomaly:", 0) == 0);
    const auto resp = dataio::parse_response(dataio::read_file(dir / "out" / "response.json"));
    CHECK(resp.trace[1].observation == "skipped");
}

TEST_CASE("gen-synthetic and mask subcommands", "[cli]") {
    const fs::path dir = scratch("gen");
    const auto g = run({"gen-synthetic", "--generator", "regime_switch", "--n", "3", "--t", "300", "--out",
                        (dir / "d.csv").string(), "--labels-out", (dir / "l.csv").string()});
    REQUIRE(g.code == 0);
    const auto csv = dataio::read_csv(dir / "d.csv");
    CHECK(csv.data.num_series() == 3);
    CHECK(csv.data.num_timestamps() == 300);
    CHECK(dataio::read_labels_csv(dir / "l.csv").size() == 300);
    CHECK(run({"gen-synthetic", "--out", (dir / "s.csv").string(), "--labels-out", (dir / "x.csv").string()}).code ==
          2);

    const auto m = run({"mask", "--data", (dir / "d.csv").string(), "--rate", "0.3", "--out",
                        (dir / "m.csv").string()});
    REQUIRE(m.code == 0);
    const auto mask = dataio::read_mask_csv(dir / "m.csv");
    CHECK(mask.num_series() == 3);
    CHECK(std::abs(mask.missing_fraction() - 0.3) < 0.05);

    // impute from files: data with a mask file
    const auto i = run({"impute", "--data", (dir / "d.csv").string(), "--mask", (dir / "m.csv").string(), "--epochs",
                        "5", "--out", (dir / "imp").string()});
    INFO(i.err);
    CHECK(i.code == 0);
}

TEST_CASE("pool file is reused across runs", "[cli]") {
    const fs::path dir = scratch("pool");
    const fs::path cfg = write_small_config(dir, "forecast");
    const std::string pool = (dir / "pool.json").string();
    REQUIRE(run({"forecast", "--config", cfg.string(), "--pool-file", pool}).code == 0);
    REQUIRE(fs::exists(pool));
    const auto first = dataio::read_file(pool);
    REQUIRE(run({"forecast", "--config", cfg.string(), "--pool-file", pool, "--no-train", "--out",
                 (dir / "o2").string()})
                .code == 0);
    // an untrained run loads and writes back the same pool
    CHECK(dataio::read_file(pool) == first);
}
