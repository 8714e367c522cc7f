// End-to-end tests for the command-line tool: every test shells out to the
// built binary (path injected via ZSL_BIN_PATH) and checks exit codes, the
// JSON/CSV/SVG artifacts, and agreement with the library called directly.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "bpl/dataset.hpp"
#include "bpl/matrix.hpp"
#include "bpl/solver.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

fs::path scratch_dir(const std::string& name) {
    fs::path dir = fs::path("cli_scratch") / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path io = fs::path("cli_scratch") / ("io_" + std::to_string(counter++));
    fs::create_directories(io);
    fs::path out_path = io / "stdout.txt";
    fs::path err_path = io / "stderr.txt";
    std::string cmd = std::string("\"") + ZSL_BIN_PATH + "\" " + args + " >" +
                      out_path.string() + " 2>" + err_path.string();
    int raw = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

json error_family(const CliResult& r) {
    json j = json::parse(r.err);
    REQUIRE(j.contains("error"));
    REQUIRE(j["error"].contains("message"));
    return j["error"]["family"];
}

std::string gen_args(const fs::path& out, const std::string& split, double noise,
                     std::uint64_t seed) {
    std::ostringstream os;
    os << "gen --d 12 --k 6 --p 6 --q 3 --n 8 --noise " << noise << " --seed " << seed
       << " --split " << split << " --out " << out.string();
    return os.str();
}

}  // namespace

TEST_CASE("gen writes a reproducible bundle", "[cli]") {
    fs::path dir = scratch_dir("gen_repro");
    CliResult a = run_cli(gen_args(dir / "a", "pure", 0.05, 42));
    CliResult b = run_cli(gen_args(dir / "b", "pure", 0.05, 42));
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);

    for (const char* name : {"manifest.json", "seen_features.zslb", "seen_labels.zslb",
                             "seen_prototypes.zslb", "unseen_prototypes.zslb",
                             "test_features.zslb", "test_labels.zslb", "ground_truth_W.zslb"})
        REQUIRE(slurp(dir / "a" / name) == slurp(dir / "b" / name));

    json summary = json::parse(a.out);
    REQUIRE(summary["p"] == 6);
    REQUIRE(summary["split"] == "pure_zsl");

    bpl::DatasetBundle loaded = bpl::as_zsl(bpl::load_bundle(dir / "a"));
    REQUIRE(loaded.seen_features.rows == 12);
    REQUIRE(loaded.seen_features.cols == 6 * 8);
    REQUIRE(loaded.unseen_prototypes.cols == 3);
}

TEST_CASE("gen rejects an invalid noise level", "[cli]") {
    fs::path dir = scratch_dir("gen_bad_noise");
    CliResult r = run_cli(gen_args(dir / "x", "pure", -1.0, 1));
    REQUIRE(r.exit_code == 2);
    REQUIRE(error_family(r) == "validation");
    REQUIRE(!fs::exists(dir / "x" / "manifest.json"));
}

TEST_CASE("cli bpl0 training matches the library", "[cli]") {
    fs::path dir = scratch_dir("bpl0_parity");
    REQUIRE(run_cli(gen_args(dir / "bundle", "pure", 0.05, 7)).exit_code == 0);

    CliResult t = run_cli("train-zsl --bundle " + (dir / "bundle").string() +
                          " --mode bpl0 --out " + (dir / "run").string());
    REQUIRE(t.exit_code == 0);
    bpl::Matrix cli_w = bpl::load_matrix(dir / "run" / "W.zslb");

    bpl::DatasetBundle b = bpl::as_zsl(bpl::load_bundle(dir / "bundle"));
    bpl::SolverConfig cfg;
    bpl::Matrix lib_w = bpl::fit_bpl0(b, cfg).w;

    REQUIRE(cli_w.rows == lib_w.rows);
    REQUIRE(cli_w.cols == lib_w.cols);
    REQUIRE(bpl::max_abs(bpl::sub(cli_w, lib_w)) <= 1e-12);
}

TEST_CASE("training reruns and config round-trips reproduce the model", "[cli]") {
    fs::path dir = scratch_dir("train_repro");
    REQUIRE(run_cli(gen_args(dir / "bundle", "pure", 0.05, 11)).exit_code == 0);

    std::string flags = "train-zsl --bundle " + (dir / "bundle").string() +
                        " --mode full --alpha 0.6 --mu 0.4 --rho 0.3 --seed 5 --out ";
    REQUIRE(run_cli(flags + (dir / "r1").string()).exit_code == 0);
    REQUIRE(run_cli(flags + (dir / "r2").string()).exit_code == 0);
    REQUIRE(slurp(dir / "r1" / "W.zslb") == slurp(dir / "r2" / "W.zslb"));

    // The emitted config alone must reproduce the run.
    CliResult c = run_cli("train-zsl --config " + (dir / "r1" / "config.json").string() +
                          " --out " + (dir / "r3").string());
    REQUIRE(c.exit_code == 0);
    REQUIRE(slurp(dir / "r1" / "W.zslb") == slurp(dir / "r3" / "W.zslb"));

    json cfg = json::parse(slurp(dir / "r1" / "config.json"));
    REQUIRE(cfg["command"] == "train-zsl");
    REQUIRE(cfg["alpha"] == 0.6);

    // Objectives in the trace are reproducible even though wall times differ.
    std::istringstream t1(slurp(dir / "r1" / "trace.jsonl"));
    std::istringstream t2(slurp(dir / "r2" / "trace.jsonl"));
    std::string l1, l2;
    int rows = 0;
    while (std::getline(t1, l1) && std::getline(t2, l2)) {
        REQUIRE(json::parse(l1)["objective"] == json::parse(l2)["objective"]);
        ++rows;
    }
    REQUIRE(rows >= 1);
}

TEST_CASE("evaluating the generating projection scores perfectly", "[cli]") {
    fs::path dir = scratch_dir("eval_truth");
    REQUIRE(run_cli(gen_args(dir / "pure", "pure", 0.0, 3)).exit_code == 0);
    std::string model = (dir / "pure" / "ground_truth_W.zslb").string();

    CliResult pure = run_cli("eval --model " + model + " --bundle " + (dir / "pure").string() +
                             " --protocol pure --out " + (dir / "metrics.json").string());
    REQUIRE(pure.exit_code == 0);
    json m = json::parse(pure.out);
    REQUIRE(m["per_class_top1"] == 1.0);
    REQUIRE(!m.contains("acc_s"));
    REQUIRE(json::parse(slurp(dir / "metrics.json")) == m);

    CliResult hit = run_cli("eval --model " + model + " --bundle " + (dir / "pure").string() +
                            " --protocol hit_at_k --hit-k 3");
    REQUIRE(hit.exit_code == 0);
    REQUIRE(json::parse(hit.out)["hit_at"]["3"] == 1.0);

    REQUIRE(run_cli(gen_args(dir / "gzsl", "generalized", 0.0, 3)).exit_code == 0);
    CliResult gen = run_cli("eval --model " + (dir / "gzsl" / "ground_truth_W.zslb").string() +
                            " --bundle " + (dir / "gzsl").string() + " --protocol generalized");
    REQUIRE(gen.exit_code == 0);
    json g = json::parse(gen.out);
    REQUIRE(g["acc_s"] == 1.0);
    REQUIRE(g["acc_u"] == 1.0);
    REQUIRE(g["hm"] == 1.0);
}

TEST_CASE("tune reports the only grid cell as best", "[cli]") {
    fs::path dir = scratch_dir("tune_single");
    REQUIRE(run_cli(gen_args(dir / "bundle", "pure", 0.05, 21)).exit_code == 0);

    CliResult r = run_cli("tune --bundle " + (dir / "bundle").string() +
                          " --rho-values 0.5 --alpha-values 0.5 --mu-values 0.5 --folds 2" +
                          " --kg 2 --seed 9 --out " + (dir / "cells.csv").string());
    REQUIRE(r.exit_code == 0);
    json summary = json::parse(r.out);
    REQUIRE(summary["best"]["rho"] == 0.5);
    REQUIRE(summary["cells"] == 1);
    REQUIRE(summary["failed"] == 0);

    std::istringstream csv(slurp(dir / "cells.csv"));
    std::string header, row, extra;
    REQUIRE(std::getline(csv, header));
    REQUIRE(header.rfind("index,rho,alpha,mu,status,score", 0) == 0);
    REQUIRE(std::getline(csv, row));
    REQUIRE(row.find(",ok,") != std::string::npos);
    REQUIRE(!std::getline(csv, extra));
}

TEST_CASE("report renders tables, plots, and verifies traces", "[cli]") {
    fs::path dir = scratch_dir("report");
    REQUIRE(run_cli(gen_args(dir / "bundle", "pure", 0.05, 13)).exit_code == 0);
    REQUIRE(run_cli("train-zsl --bundle " + (dir / "bundle").string() +
                    " --mode full --out " + (dir / "run").string())
                .exit_code == 0);

    std::string trace = (dir / "run" / "trace.jsonl").string();
    CliResult r = run_cli("report " + trace + " --svg " + (dir / "plot.svg").string() +
                          " --verify --out " + (dir / "table.txt").string());
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("trace: ") != std::string::npos);
    REQUIRE(r.out.find("objective") != std::string::npos);
    REQUIRE(r.out.find("\"verified\": true") != std::string::npos);
    REQUIRE(slurp(dir / "table.txt").find("rel_change") != std::string::npos);

    std::string svg = slurp(dir / "plot.svg");
    REQUIRE(svg.find("<svg") != std::string::npos);
    REQUIRE(svg.find("<polyline") != std::string::npos);

    // Tampering with an objective must break verification.
    std::istringstream lines(slurp(trace));
    std::ostringstream tampered;
    std::string line;
    bool first = true;
    while (std::getline(lines, line)) {
        json j = json::parse(line);
        if (first) j["objective"] = j["objective"].get<double>() + 1.0;
        first = false;
        tampered << j.dump() << "\n";
    }
    fs::create_directories(dir / "bad");
    fs::copy_file(dir / "run" / "config.json", dir / "bad" / "config.json");
    std::ofstream(dir / "bad" / "trace.jsonl") << tampered.str();
    CliResult bad = run_cli("report " + (dir / "bad" / "trace.jsonl").string() + " --verify");
    REQUIRE(bad.exit_code == 2);
    REQUIRE(error_family(bad) == "validation");
}

TEST_CASE("missing inputs map to the io exit code", "[cli]") {
    fs::path dir = scratch_dir("missing");
    CliResult eval = run_cli("eval --model " + (dir / "no.zslb").string() + " --bundle " +
                             (dir / "nowhere").string());
    REQUIRE(eval.exit_code == 3);
    REQUIRE(error_family(eval) == "io");

    CliResult train = run_cli("train-zsl --bundle " + (dir / "nowhere").string() + " --out " +
                              (dir / "out").string());
    REQUIRE(train.exit_code == 3);

    CliResult report = run_cli("report " + (dir / "no.jsonl").string());
    REQUIRE(report.exit_code == 3);
}

TEST_CASE("bad arguments map to the validation exit code", "[cli]") {
    fs::path dir = scratch_dir("bad_args");
    REQUIRE(run_cli(gen_args(dir / "bundle", "pure", 0.05, 2)).exit_code == 0);

    CliResult mode = run_cli("train-zsl --bundle " + (dir / "bundle").string() +
                             " --mode nonsense --out " + (dir / "o1").string());
    REQUIRE(mode.exit_code == 2);
    REQUIRE(error_family(mode) == "validation");

    std::ofstream(dir / "bad.json") << R"({"command": "train-zsl", "bogus": 1})";
    CliResult key = run_cli("train-zsl --bundle " + (dir / "bundle").string() + " --config " +
                            (dir / "bad.json").string() + " --out " + (dir / "o2").string());
    REQUIRE(key.exit_code == 2);
    REQUIRE(json::parse(key.err)["error"]["message"].get<std::string>().find("bogus") !=
            std::string::npos);

    CliResult flag = run_cli("eval --wat 1");
    REQUIRE(flag.exit_code == 2);
    REQUIRE(error_family(flag) == "validation");
}
