// Runs the command-line binary in child processes.

#include "proton/checkpoint.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using proton::read_file;

namespace {

// Keeps each child run to a few seconds.
const std::string kFast =
    " --preset tiny --synthetic 10x20 --set train.episodes_per_epoch=4 --set train.eval_episodes=3"
    " --set eval.episodes=5 --set eval.pairs_per_kind=20";

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("proton_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

struct Outcome {
    int code = -1;
    std::string err;
};

Outcome run_cli(const std::string& args, const fs::path& dir) {
    fs::create_directories(dir.parent_path());
    const fs::path log = dir.string() + ".stderr";
    const std::string cmd = std::string(PROTON_CLI_PATH) + " " + args + " > /dev/null 2> " + log.string();
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.err = fs::exists(log) ? read_file(log) : "";
    return o;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

// Trains once and shares the checkpoint between the eval cases.
const fs::path& trained_dir() {
    static const fs::path dir = [] {
        const fs::path d = scratch("trained");
        const Outcome o = run_cli("train" + kFast + " --epochs 1 --out-dir " + d.string(), d);
        REQUIRE(o.code == 0);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("train writes one report row per epoch and a manifest") {
    const fs::path d = scratch("three");
    const Outcome o = run_cli("train" + kFast + " --epochs 3 --out-dir " + d.string(), d);
    REQUIRE(o.code == 0);
    const auto rows = lines(read_file(d / "report.csv"));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "epoch,loss,episodic_acc,overall_acc");
    CHECK(rows[3].rfind("3,", 0) == 0);
    const auto m = nlohmann::json::parse(read_file(d / "manifest.json"));
    CHECK(m["status"] == "ok");
    CHECK(m["exit_code"] == 0);
    CHECK(m["config"]["train.epochs"] == "3");
    CHECK(m.contains("revision"));
    for (const auto& name : m["outputs"]) CHECK(fs::exists(d / name.get<std::string>()));
    for (const auto& e : fs::directory_iterator(d)) CHECK(e.path().extension() != ".tmp");
}

TEST_CASE("same config and seed give identical outputs, also from the echoed config") {
    const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    REQUIRE(run_cli("train" + kFast + " --epochs 2 --seed 5 --out-dir " + a.string(), a).code == 0);
    REQUIRE(run_cli("train" + kFast + " --epochs 2 --seed 5 --out-dir " + b.string(), b).code == 0);
    CHECK(read_file(a / "report.csv") == read_file(b / "report.csv"));
    CHECK(read_file(a / "checkpoint.ckpt") == read_file(b / "checkpoint.ckpt"));

    // the echoed config reproduces the run; only the output directory differs
    REQUIRE(run_cli("train --config " + (a / "config.txt").string() + " --out-dir " + c.string(), c).code == 0);
    CHECK(read_file(a / "report.csv") == read_file(c / "report.csv"));
    CHECK(read_file(a / "checkpoint_final.ckpt") == read_file(c / "checkpoint_final.ckpt"));
}

TEST_CASE("missing dataset path exits 3 and names the path") {
    const fs::path d = scratch("missing");
    const Outcome o = run_cli("train --preset tiny --data /no/such/folder --out-dir " + d.string(), d);
    CHECK(o.code == 3);
    CHECK(o.err.find("/no/such/folder") != std::string::npos);
    CHECK_FALSE(fs::exists(d / "report.csv"));
    CHECK_FALSE(fs::exists(d / "checkpoint.ckpt"));
    CHECK(nlohmann::json::parse(read_file(d / "manifest.json"))["status"] == "failed");
}

TEST_CASE("invalid configuration exits 2") {
    const fs::path d = scratch("badkey");
    Outcome o = run_cli("train" + kFast + " --set train.warmup=3 --out-dir " + d.string(), d);
    CHECK(o.code == 2);
    CHECK(o.err.find("train.warmup") != std::string::npos);
    o = run_cli("train" + kFast + " --set train.lambda=2 --out-dir " + d.string(), d);
    CHECK(o.code == 2);
    o = run_cli("train --config /no/such.conf --out-dir " + d.string(), d);
    CHECK(o.code == 2);
    CHECK(o.err.find("/no/such.conf") != std::string::npos);
    CHECK(run_cli("frobnicate", d).code == 1);
}

TEST_CASE("identify mode writes a monotone CMC ending at one") {
    const fs::path& t = trained_dir();
    const fs::path d = scratch("identify");
    const Outcome o =
        run_cli("eval" + kFast + " --mode identify --checkpoint " + (t / "checkpoint.ckpt").string() + " --out-dir " +
                    d.string(),
                d);
    REQUIRE(o.code == 0);
    const auto rows = lines(read_file(d / "cmc.csv"));
    REQUIRE(rows.size() >= 2);
    CHECK(rows[0] == "rank,accuracy");
    double prev = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double y = std::stod(rows[i].substr(rows[i].find(',') + 1));
        CHECK(y >= prev);
        prev = y;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("verify mode reports eer and auc in the unit interval") {
    const fs::path& t = trained_dir();
    const fs::path d = scratch("verify");
    REQUIRE(run_cli("eval" + kFast + " --mode verify --checkpoint " + (t / "checkpoint.ckpt").string() +
                        " --out-dir " + d.string(),
                    d)
                .code == 0);
    const auto j = nlohmann::json::parse(read_file(d / "verify.json"));
    REQUIRE(j.contains("eer"));
    REQUIRE(j.contains("auc"));
    CHECK(j["eer"].get<double>() >= 0.0);
    CHECK(j["eer"].get<double>() <= 1.0);
    CHECK(j["auc"].get<double>() >= 0.0);
    CHECK(j["auc"].get<double>() <= 1.0);
    CHECK(lines(read_file(d / "roc.csv"))[0] == "far,tpr");
}

TEST_CASE("checkpoint and config widths must agree") {
    const fs::path& t = trained_dir();
    const fs::path d = scratch("mismatch");
    const Outcome o = run_cli("eval" + kFast + " --set model.layer_dims=64,64,16 --checkpoint " +
                                  (t / "checkpoint.ckpt").string() + " --out-dir " + d.string(),
                              d);
    CHECK(o.code == 2);
    CHECK(o.err.find("64,64,32,32") != std::string::npos);
    CHECK(o.err.find("64,64,16") != std::string::npos);

    const Outcome missing =
        run_cli("eval" + kFast + " --checkpoint /no/such.ckpt --out-dir " + d.string(), d);
    CHECK(missing.code == 3);
}

TEST_CASE("lambda sweep validates its list and writes one row per weight") {
    const fs::path d = scratch("sweep");
    CHECK(run_cli("sweep-lambda" + kFast + " --lambdas 0,0.4,0 --out-dir " + d.string(), d).code == 2);
    CHECK(run_cli("sweep-lambda" + kFast + " --lambdas 0,1.2 --out-dir " + d.string(), d).code == 2);
    REQUIRE(run_cli("sweep-lambda" + kFast + " --set train.epochs=1 --lambdas 0,1 --out-dir " + d.string(), d).code == 0);
    const auto rows = lines(read_file(d / "lambda_sweep.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "lambda,overall_acc");
    CHECK(rows[1].rfind("0,", 0) == 0);
    CHECK(rows[2].rfind("1,", 0) == 0);
}

TEST_CASE("ablation table has the baseline and the variant") {
    const fs::path d = scratch("ablate");
    REQUIRE(run_cli("ablate" + kFast + " --set train.epochs=1 --variant no_prototype_node --out-dir " + d.string(), d)
                .code == 0);
    const auto rows = lines(read_file(d / "ablation.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "model,rank1,rank5,eer,auc,episodic_acc");
    CHECK(rows[1].rfind("baseline,", 0) == 0);
    CHECK(rows[2].rfind("no_prototype_node,", 0) == 0);
    CHECK(run_cli("ablate" + kFast + " --variant nothing --out-dir " + d.string(), d).code == 2);
}

TEST_CASE("generated synthetic images load back as a dataset") {
    const fs::path g = scratch("gen");
    REQUIRE(run_cli("gen-synthetic --preset tiny --synthetic 8x3 --out-dir " + g.string(), g).code == 0);
    int folders = 0;
    for (const auto& e : fs::directory_iterator(g / "images")) folders += e.is_directory();
    CHECK(folders == 8);

    const fs::path d = scratch("from_folder");
    const Outcome o = run_cli("train --preset tiny --data " + (g / "images").string() +
                                  " --set episode.ways=2 --set train.train_fraction=0.5 --set train.test_fraction=0.25"
                                  " --set train.episodes_per_epoch=2 --set train.eval_episodes=2 --epochs 1 --out-dir " +
                                  d.string(),
                              d);
    CHECK(o.code == 0);
    CHECK(lines(read_file(d / "report.csv")).size() == 2);
}

}  // TEST_SUITE
