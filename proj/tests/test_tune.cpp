#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "bpl/tune.hpp"
#include "testutil.hpp"

using bpl::DatasetBundle;
using bpl::TuneGrid;
using bpl::TuneResult;

namespace {

DatasetBundle tune_bundle(std::uint64_t seed, int p = 6, double noise = 0.05) {
    bpl::SyntheticSpec spec;
    spec.d = 8;
    spec.k = 5;
    spec.p = p;
    spec.q = 2;
    spec.samples_per_class = 8;
    spec.noise_sigma = noise;
    spec.seed = seed;
    return bpl::as_zsl(bpl::make_synthetic_problem(spec).bundle);
}

// Deterministic fake scorer: depends only on the cell coordinates, so the
// expected winner is known in closed form.
double fake_score(double rho, double alpha, double mu) {
    return -(std::abs(rho - 0.5) + std::abs(alpha - 0.3) + std::abs(mu - 0.7));
}

}  // namespace

TEST_CASE("grid validation enforces ranges and the cell-count guard", "[tune]") {
    TuneGrid g;
    CHECK_NOTHROW(bpl::require_valid(g));
    CHECK(g.cell_count() == 125);

    TuneGrid empty = g;
    empty.mu_values.clear();
    CHECK_THROWS_AS(bpl::require_valid(empty), bpl::ValidationError);

    TuneGrid out_of_range = g;
    out_of_range.rho_values = {0.5, 1.0};
    CHECK_THROWS_AS(bpl::require_valid(out_of_range), bpl::ValidationError);

    TuneGrid one_fold = g;
    one_fold.folds = 1;
    CHECK_THROWS_AS(bpl::require_valid(one_fold), bpl::ValidationError);

    TuneGrid huge = g;
    huge.rho_values.assign(21, 0.5);
    for (std::size_t i = 0; i < huge.rho_values.size(); ++i)
        huge.rho_values[i] = static_cast<double>(i + 1) / 22.0;
    CHECK(huge.cell_count() > 500);
    CHECK_THROWS_AS(bpl::require_valid(huge), bpl::ValidationError);
    huge.force = true;
    CHECK_NOTHROW(bpl::require_valid(huge));
}

TEST_CASE("cells are enumerated rho-major and scored with per-fold seeds", "[tune]") {
    DatasetBundle b = tune_bundle(21);
    TuneGrid g;
    g.rho_values = {0.2, 0.8};
    g.alpha_values = {0.3, 0.6};
    g.mu_values = {0.1, 0.9};
    g.folds = 2;

    std::vector<std::uint64_t> seen_seeds;
    auto runner = [&](const DatasetBundle& fold, double rho, double alpha, double mu,
                      std::uint64_t seed) {
        bpl::require_valid(fold);
        seen_seeds.push_back(seed);
        return fake_score(rho, alpha, mu);
    };
    TuneResult r = bpl::run_tune(b, g, /*seed=*/5, /*jobs=*/1, runner);

    REQUIRE(r.cells.size() == 8);
    // rho-major, then alpha, then mu.
    CHECK(r.cells[0].rho == 0.2);
    CHECK(r.cells[0].alpha == 0.3);
    CHECK(r.cells[0].mu == 0.1);
    CHECK(r.cells[1].mu == 0.9);
    CHECK(r.cells[2].alpha == 0.6);
    CHECK(r.cells[4].rho == 0.8);
    for (int i = 0; i < 8; ++i) CHECK(r.cells[i].index == i);

    // Every cell sees the same two fold seeds, distinct from each other.
    REQUIRE(seen_seeds.size() == 16);
    CHECK(seen_seeds[0] == bpl::derive_seed(5, 0));
    CHECK(seen_seeds[1] == bpl::derive_seed(5, 1));
    CHECK(seen_seeds[0] != seen_seeds[1]);
    for (std::size_t i = 2; i < seen_seeds.size(); i += 2) {
        CHECK(seen_seeds[i] == seen_seeds[0]);
        CHECK(seen_seeds[i + 1] == seen_seeds[1]);
    }

    // Winner matches the closed-form optimum of the fake scorer.
    CHECK(r.best_rho == 0.2);
    CHECK(r.best_alpha == 0.3);
    CHECK(r.best_mu == 0.9);
}

TEST_CASE("score ties pick the lexicographically smallest triple", "[tune]") {
    DatasetBundle b = tune_bundle(22);
    TuneGrid g;
    g.rho_values = {0.9, 0.1};  // deliberately unsorted
    g.alpha_values = {0.7, 0.2};
    g.mu_values = {0.5};
    g.folds = 2;
    auto runner = [](const DatasetBundle&, double, double, double, std::uint64_t) {
        return 0.25;  // all cells tie
    };
    TuneResult r = bpl::run_tune(b, g, 5, 1, runner);
    CHECK(r.best_rho == 0.1);
    CHECK(r.best_alpha == 0.2);
    CHECK(r.best_mu == 0.5);
    // The winner is not the first enumerated cell, so the tie-break really
    // compared values rather than grid positions.
    CHECK(r.best_index == 3);
}

TEST_CASE("failing cells are recorded and excluded from the argmax", "[tune]") {
    DatasetBundle b = tune_bundle(23);
    TuneGrid g;
    g.rho_values = {0.3, 0.6};
    g.alpha_values = {0.4, 0.8};
    g.mu_values = {0.5};
    g.folds = 2;
    auto runner = [](const DatasetBundle&, double rho, double alpha, double,
                     std::uint64_t) -> double {
        if (alpha == 0.8) throw bpl::SingularPencilError("engineered failure");
        return rho;  // best surviving cell has the larger rho
    };
    TuneResult r = bpl::run_tune(b, g, 5, 1, runner);
    REQUIRE(r.cells.size() == 4);
    CHECK_FALSE(r.cells[0].failed);
    CHECK(r.cells[1].failed);
    CHECK(r.cells[1].error.find("engineered failure") != std::string::npos);
    CHECK(r.cells[1].fold_scores.empty());
    CHECK(r.best_rho == 0.6);
    CHECK(r.best_alpha == 0.4);

    auto always_fail = [](const DatasetBundle&, double, double, double,
                          std::uint64_t) -> double {
        throw bpl::SingularPencilError("engineered failure");
    };
    CHECK_THROWS_AS(bpl::run_tune(b, g, 5, 1, always_fail), bpl::UndefinedMetricError);
}

TEST_CASE("concurrent execution reproduces the serial result", "[tune]") {
    DatasetBundle b = tune_bundle(24);
    TuneGrid g;
    g.rho_values = {0.1, 0.3, 0.5, 0.7};
    g.alpha_values = {0.2, 0.4, 0.6};
    g.mu_values = {0.3, 0.9};
    g.folds = 2;
    std::atomic<int> calls{0};
    auto runner = [&](const DatasetBundle& fold, double rho, double alpha, double mu,
                      std::uint64_t seed) {
        calls.fetch_add(1);
        double bits = static_cast<double>(seed % 97) / 97.0;
        return fake_score(rho, alpha, mu) + 1e-3 * bits + 1e-6 * fold.q;
    };
    TuneResult serial = bpl::run_tune(b, g, 9, 1, runner);
    int serial_calls = calls.exchange(0);
    TuneResult parallel = bpl::run_tune(b, g, 9, 4, runner);
    CHECK(serial_calls == calls.load());

    REQUIRE(serial.cells.size() == parallel.cells.size());
    for (std::size_t i = 0; i < serial.cells.size(); ++i) {
        CHECK(serial.cells[i].index == parallel.cells[i].index);
        CHECK(serial.cells[i].score == parallel.cells[i].score);
        CHECK(serial.cells[i].fold_scores == parallel.cells[i].fold_scores);
    }
    CHECK(serial.best_index == parallel.best_index);
    CHECK(bpl::tune_csv(serial, g.folds) == bpl::tune_csv(parallel, g.folds));
}

TEST_CASE("singleton grid returns its only triple", "[tune]") {
    DatasetBundle b = tune_bundle(25);
    TuneGrid g;
    g.rho_values = {0.5};
    g.alpha_values = {0.5};
    g.mu_values = {0.5};
    g.folds = 2;
    bpl::SolverConfig cfg;
    bpl::SynthConfig sc;
    TuneResult r = bpl::run_tune(b, g, cfg, sc, 31, 1);
    REQUIRE(r.cells.size() == 1);
    CHECK_FALSE(r.cells[0].failed);
    CHECK(r.best_rho == 0.5);
    CHECK(r.best_alpha == 0.5);
    CHECK(r.best_mu == 0.5);
    CHECK(r.cells[0].fold_scores.size() == 2);
    for (double s : r.cells[0].fold_scores) {
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("default pipeline scores are reproducible and fold count is enforced", "[tune]") {
    DatasetBundle b = tune_bundle(26, /*p=*/4);
    TuneGrid g;
    g.rho_values = {0.3, 0.7};
    g.alpha_values = {0.5};
    g.mu_values = {0.5};
    g.folds = 2;
    bpl::SolverConfig cfg;
    bpl::SynthConfig sc;
    sc.k_g = 2;  // fold bundles keep only two seen classes
    TuneResult a = bpl::run_tune(b, g, cfg, sc, 42, 1);
    TuneResult c = bpl::run_tune(b, g, cfg, sc, 42, 2);
    REQUIRE(a.cells.size() == c.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i)
        CHECK(a.cells[i].score == c.cells[i].score);
    CHECK(a.best_index == c.best_index);

    TuneGrid too_many_folds = g;
    too_many_folds.folds = 5;  // p = 4
    CHECK_THROWS_AS(bpl::run_tune(b, too_many_folds, cfg, sc, 42, 1), bpl::ValidationError);
}

TEST_CASE("csv output is rectangular with one row per cell", "[tune]") {
    DatasetBundle b = tune_bundle(27);
    TuneGrid g;
    g.rho_values = {0.2, 0.4};
    g.alpha_values = {0.5};
    g.mu_values = {0.5};
    g.folds = 2;
    auto runner = [](const DatasetBundle&, double rho, double, double,
                     std::uint64_t) -> double {
        if (rho == 0.4) throw bpl::DecompositionError("boom");
        return 0.5;
    };
    TuneResult r = bpl::run_tune(b, g, 3, 1, runner);
    std::string csv = bpl::tune_csv(r, g.folds);

    std::vector<std::string> lines;
    std::string line;
    std::istringstream is(csv);
    while (std::getline(is, line)) lines.push_back(line);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "index,rho,alpha,mu,status,score,fold_0,fold_1");
    for (const auto& l : lines) {
        CHECK(std::count(l.begin(), l.end(), ',') == 7);
    }
    CHECK(lines[1].find(",ok,") != std::string::npos);
    CHECK(lines[2].find(",failed,") != std::string::npos);
    // Failed rows carry empty score and fold columns.
    CHECK(lines[2].substr(lines[2].find(",failed,")) == ",failed,,,");
}
