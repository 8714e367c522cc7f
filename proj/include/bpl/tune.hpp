#pragma once

// Grid search over (rho, alpha, mu) scored by class-wise cross-validation:
// each fold turns a slice of the seen classes into pseudo-unseen validation
// classes, the full synthesis + competitive fit pipeline runs on the rest,
// and cells are ranked by mean validation per-class top-1.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "bpl/dataset.hpp"
#include "bpl/errors.hpp"
#include "bpl/metrics.hpp"
#include "bpl/rng.hpp"
#include "bpl/solver.hpp"
#include "bpl/synthesis.hpp"

namespace bpl {

struct TuneGrid {
    std::vector<double> rho_values{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> alpha_values{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> mu_values{0.1, 0.3, 0.5, 0.7, 0.9};
    int folds = 3;
    bool force = false;  // required to run more than 500 cells

    int cell_count() const {
        return static_cast<int>(rho_values.size() * alpha_values.size() * mu_values.size());
    }
};

inline void require_valid(const TuneGrid& g) {
    auto check_axis = [](const std::vector<double>& vals, const char* name) {
        if (vals.empty())
            throw ValidationError(std::string("tune grid: ") + name + " values must be nonempty");
        for (double v : vals)
            if (!(v > 0.0 && v < 1.0))
                throw ValidationError(std::string("tune grid: ") + name +
                                      " values must lie in (0, 1)");
    };
    check_axis(g.rho_values, "rho");
    check_axis(g.alpha_values, "alpha");
    check_axis(g.mu_values, "mu");
    if (g.folds < 2) throw ValidationError("tune grid: folds must be >= 2");
    if (g.cell_count() > 500 && !g.force)
        throw ValidationError("tune grid: " + std::to_string(g.cell_count()) +
                              " cells exceed the safety limit of 500; pass --force to proceed");
}

struct TuneCell {
    int index = 0;  // position in rho-major, then alpha, then mu order
    double rho = 0.0;
    double alpha = 0.0;
    double mu = 0.0;
    bool failed = false;
    std::string error;
    double score = 0.0;               // mean of fold_scores when not failed
    std::vector<double> fold_scores;  // validation per-class top-1 per fold
};

struct TuneResult {
    std::vector<TuneCell> cells;  // always in grid-index order
    int best_index = -1;
    double best_rho = 0.0;
    double best_alpha = 0.0;
    double best_mu = 0.0;
};

/// Scores one (fold bundle, hyperparameter triple) combination and returns
/// the validation per-class top-1. Injectable so failure accounting can be
/// tested without engineering a numerically degenerate grid.
using CellRunner = std::function<double(const DatasetBundle& fold, double rho, double alpha,
                                        double mu, std::uint64_t seed)>;

inline CellRunner default_cell_runner(const SolverConfig& base_cfg, const SynthConfig& base_sc) {
    return [base_cfg, base_sc](const DatasetBundle& fold, double rho, double alpha, double mu,
                               std::uint64_t seed) {
        SynthConfig sc = base_sc;
        sc.rho = rho;
        sc.seed = seed;
        SolverConfig cfg = base_cfg;
        cfg.alpha = alpha;
        cfg.mu = mu;
        cfg.mode = SolverMode::full;
        FitResult warm = fit_bpl0(fold, cfg);
        SynthSet synth = synthesize_zsl(fold, warm.w, sc);
        CompetitiveFitResult fit = fit_competitive_bpl(fold, synth, cfg);
        return evaluate_pure(fit.w, fold, {}).per_class_top1;
    };
}

inline TuneResult run_tune(const DatasetBundle& b, const TuneGrid& grid, std::uint64_t seed,
                           int jobs, const CellRunner& runner) {
    require_valid(b);
    require_valid(grid);
    if (!runner) throw ValidationError("run_tune: cell runner must be callable");
    if (jobs < 1) throw ValidationError("run_tune: jobs must be >= 1");

    std::vector<CvSplit> splits = class_cv_splits(b, grid.folds, seed);
    std::vector<DatasetBundle> folds;
    folds.reserve(splits.size());
    for (const auto& split : splits) folds.push_back(cv_fold_bundle(b, split));
    std::vector<std::uint64_t> fold_seeds(folds.size());
    for (std::size_t f = 0; f < folds.size(); ++f)
        fold_seeds[f] = derive_seed(seed, static_cast<std::uint64_t>(f));

    TuneResult result;
    result.cells.resize(grid.cell_count());
    int index = 0;
    for (double rho : grid.rho_values)
        for (double alpha : grid.alpha_values)
            for (double mu : grid.mu_values) {
                TuneCell& cell = result.cells[index];
                cell.index = index;
                cell.rho = rho;
                cell.alpha = alpha;
                cell.mu = mu;
                ++index;
            }

    auto score_cell = [&](TuneCell& cell) {
        try {
            cell.fold_scores.reserve(folds.size());
            double sum = 0.0;
            for (std::size_t f = 0; f < folds.size(); ++f) {
                double s = runner(folds[f], cell.rho, cell.alpha, cell.mu, fold_seeds[f]);
                cell.fold_scores.push_back(s);
                sum += s;
            }
            cell.score = sum / static_cast<double>(folds.size());
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
            cell.score = 0.0;
            cell.fold_scores.clear();
        }
    };

    int workers = std::min(jobs, grid.cell_count());
    if (workers <= 1) {
        for (TuneCell& cell : result.cells) score_cell(cell);
    } else {
        // Cells pull work from a shared counter; every result lands in its
        // preassigned slot, so output order never depends on scheduling.
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&]() {
                while (true) {
                    int i = next.fetch_add(1);
                    if (i >= static_cast<int>(result.cells.size())) break;
                    score_cell(result.cells[i]);
                }
            });
        for (auto& th : pool) th.join();
    }

    for (const TuneCell& cell : result.cells) {
        if (cell.failed) continue;
        bool better = false;
        if (result.best_index < 0) {
            better = true;
        } else {
            const TuneCell& best = result.cells[result.best_index];
            if (cell.score > best.score) {
                better = true;
            } else if (cell.score == best.score) {
                auto candidate = std::make_tuple(cell.rho, cell.alpha, cell.mu);
                auto incumbent = std::make_tuple(best.rho, best.alpha, best.mu);
                better = candidate < incumbent;
            }
        }
        if (better) result.best_index = cell.index;
    }
    if (result.best_index < 0)
        throw UndefinedMetricError("run_tune: every grid cell failed; nothing to select");
    result.best_rho = result.cells[result.best_index].rho;
    result.best_alpha = result.cells[result.best_index].alpha;
    result.best_mu = result.cells[result.best_index].mu;
    return result;
}

inline TuneResult run_tune(const DatasetBundle& b, const TuneGrid& grid,
                           const SolverConfig& base_cfg, const SynthConfig& base_sc,
                           std::uint64_t seed, int jobs = 1) {
    return run_tune(b, grid, seed, jobs, default_cell_runner(base_cfg, base_sc));
}

/// Rectangular CSV of every cell: grid coordinates, status, mean score, and
/// the per-fold scores (blank for failed cells).
inline std::string tune_csv(const TuneResult& r, int folds) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "index,rho,alpha,mu,status,score";
    for (int f = 0; f < folds; ++f) os << ",fold_" << f;
    os << "\n";
    for (const TuneCell& cell : r.cells) {
        os << cell.index << "," << cell.rho << "," << cell.alpha << "," << cell.mu << ","
           << (cell.failed ? "failed" : "ok") << ",";
        if (!cell.failed) os << cell.score;
        for (int f = 0; f < folds; ++f) {
            os << ",";
            if (f < static_cast<int>(cell.fold_scores.size())) os << cell.fold_scores[f];
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace bpl
