#pragma once

// Episodic few-shot training: base-class statistics are summed once, then
// each episode synthesizes a fresh query set, runs the competitive loop with
// support + query terms, and the per-episode projections are averaged.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bpl/dataset.hpp"
#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"
#include "bpl/rng.hpp"
#include "bpl/solver.hpp"
#include "bpl/synthesis.hpp"

namespace bpl {

// The base-class sums are exactly the seen-data statistics of the base
// bundle; they are computed once and shared by every episode.
using BaseStats = SeenStats;

inline BaseStats precompute_base_stats(const DatasetBundle& base) {
    require_valid(base);
    return compute_seen_stats(base);
}

struct EpisodePlan {
    int episodes = 10;
    std::uint64_t seed = 0;
};

inline void require_valid(const EpisodePlan& p) {
    if (p.episodes < 1) throw ValidationError("episode plan: episodes must be >= 1");
}

/// One competitive solve over novel classes. The system blends three groups:
/// base sums weighted (1 - alpha_t), support sums (true novel labels)
/// weighted alpha_t, and query min-function terms weighted alpha_t; the
/// ridge beta I is applied once. The query set plays the synthesized-sample
/// role: eta/xi/delta are computed only over its columns against the novel
/// prototypes. The trailing seed parameter is accepted for call-site
/// symmetry with the synthesis step; the episode itself is deterministic in
/// (stats, support, query, cfg).
inline Matrix run_episode(const BaseStats& stats, const FSLBundle& fsl, const SynthSet& query,
                          const SolverConfig& cfg, std::uint64_t /*seed*/ = 0,
                          FitTrace* trace_out = nullptr,
                          const IterationObserver& observer = {}) {
    require_valid(cfg);
    // Only the support side is validated here: the base data is summarized
    // by `stats` (validated when they were computed), and rescanning it
    // would make episode cost grow with the base-set size.
    require_valid_support(fsl);
    const DatasetBundle& base = fsl.base;
    if (cfg.mode != SolverMode::full && cfg.mode != SolverMode::bpl1 &&
        cfg.mode != SolverMode::no_ambiguity)
        throw ValidationError("run_episode: mode must be full, bpl1, or no_ambiguity");
    if (cfg.mode == SolverMode::full && base.q < 2)
        throw ValidationError("run_episode: full mode needs at least two novel classes");
    if (stats.sxx.rows != base.d || stats.syy.rows != base.k)
        throw DimensionError("run_episode: stats shape does not match the base bundle");
    detail::require_synth_consistent(query, base.d, base.q);

    // Support sums use the true novel labels, shifted to local indices.
    std::vector<int> local_labels(fsl.support_labels.size());
    for (std::size_t i = 0; i < local_labels.size(); ++i)
        local_labels[i] = fsl.support_labels[i] - base.p;
    SeenStats support =
        compute_seen_stats(fsl.support_features, local_labels, fsl.novel_prototypes());

    const Matrix& y_u = base.unseen_prototypes;
    NormalEquations ne0 =
        assemble_from_stats(stats, y_u, Matrix(), Matrix(), 0.0, 0.0, cfg.beta);
    Matrix w0 = solve_sylvester(ne0.A, ne0.B, ne0.C);

    auto assemble = [&](const Matrix& delta, double alpha_t, double mu_eff) {
        NormalEquations ne = assemble_from_stats(stats, y_u, query.features, delta, alpha_t,
                                                 mu_eff, cfg.beta);
        if (alpha_t != 0.0) {
            axpy(ne.A, alpha_t, support.sxx);
            axpy(ne.B, alpha_t, support.syy);
            axpy(ne.C, 2.0 * alpha_t, support.sxy);
        }
        return ne;
    };
    auto objective = [&](const Matrix& w, double mu_eff, double alpha_t) {
        double gamma = alpha_t / (1.0 - alpha_t);
        double nu = cfg.beta / (1.0 - alpha_t);
        double base_term = quadratic_reconstruction_value(w, stats);
        double support_term = quadratic_reconstruction_value(w, support);
        double query_term = competitive_min_sum(w, query.features, y_u, mu_eff);
        double fro = frobenius_norm(w);
        return base_term + gamma * (support_term + query_term) + 2.0 * nu * fro * fro;
    };
    auto loop = detail::competitive_loop(std::move(w0), query.features, y_u,
                                         query.guiding_class, cfg, assemble, objective,
                                         observer);
    if (trace_out) *trace_out = std::move(loop.trace);
    return std::move(loop.w);
}

struct FslFitResult {
    Matrix w;                       // arithmetic mean over episodes
    std::vector<Matrix> episode_w;  // ascending episode index
    std::vector<FitTrace> traces;
};

/// Full episodic training: a seen-only base fit drives the query synthesis,
/// episode h uses seed derive_seed(plan.seed, h), and the returned
/// projection is the unweighted mean of the per-episode results combined in
/// ascending episode order.
inline FslFitResult fit_fsl(const FSLBundle& bundle, const EpisodePlan& plan,
                            const SynthConfig& synth_cfg, const SolverConfig& solver_cfg) {
    require_valid(plan);
    require_valid(bundle);
    require_valid(synth_cfg);
    require_valid(solver_cfg);

    FSLBundle holder;
    const FSLBundle* f = &bundle;
    SolverConfig cfg = solver_cfg;
    if (cfg.normalize_inputs) {
        holder = bundle;
        holder.base = normalized_inputs(bundle.base);
        holder.support_features = l2_normalized_columns(bundle.support_features);
        f = &holder;
        cfg.normalize_inputs = false;
    }

    BaseStats stats = precompute_base_stats(f->base);
    Matrix w_init = fit_bpl0(f->base, cfg).w;

    FslFitResult result;
    for (int h = 0; h < plan.episodes; ++h) {
        std::uint64_t episode_seed = derive_seed(plan.seed, static_cast<std::uint64_t>(h));
        std::string where = "episode " + std::to_string(h) + ": ";
        try {
            SynthConfig sc = synth_cfg;
            sc.seed = episode_seed;
            SynthSet query = synthesize_fsl(*f, w_init, sc);
            FitTrace trace;
            Matrix w_h = run_episode(stats, *f, query, cfg, episode_seed, &trace);
            result.episode_w.push_back(std::move(w_h));
            result.traces.push_back(std::move(trace));
        } catch (const ValidationFamilyError& e) {
            throw ValidationError(where + e.what());
        } catch (const IoFamilyError& e) {
            throw IoError(where + e.what());
        } catch (const NumericFamilyError& e) {
            throw DecompositionError(where + e.what());
        }
    }

    // Mean written as w_0 + mean of differences: averaging identical
    // episodes then reproduces their W bit-for-bit.
    Matrix mean = result.episode_w.front();
    if (plan.episodes > 1) {
        Matrix diff_sum(mean.rows, mean.cols);
        for (int h = 1; h < plan.episodes; ++h)
            axpy(diff_sum, 1.0, sub(result.episode_w[h], result.episode_w.front()));
        if (max_abs(diff_sum) != 0.0)
            axpy(mean, 1.0 / static_cast<double>(plan.episodes), diff_sum);
    }
    result.w = std::move(mean);
    return result;
}

}  // namespace bpl
