#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "bpl/dataset.hpp"
#include "bpl/episodes.hpp"
#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"
#include "bpl/rng.hpp"
#include "bpl/solver.hpp"
#include "bpl/synthesis.hpp"
#include "oracles.hpp"

namespace {

bpl::FSLBundle make_fsl(std::uint64_t seed, int shots = 3, int d = 8, int k = 5, int p = 6,
                        int q = 3, int n = 10, double noise = 0.05) {
    bpl::SyntheticSpec spec;
    spec.d = d;
    spec.k = k;
    spec.p = p;
    spec.q = q;
    spec.samples_per_class = n;
    spec.noise_sigma = noise;
    spec.seed = seed;
    spec.split_kind = bpl::SplitKind::fsl;
    spec.shots = shots;
    return bpl::as_fsl(bpl::make_synthetic_problem(spec).bundle);
}

bool bitwise_equal(const bpl::Matrix& a, const bpl::Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

// From-scratch system assembly over base + support + query with explicit
// loops: base sums weighted (1 - a), support sums (true labels) weighted a,
// query delta-weighted terms weighted a, one shared ridge.
void naive_episode_assemble(const bpl::FSLBundle& f, const bpl::Matrix& qx,
                            const bpl::Matrix& delta, double a, double mu, double beta,
                            bpl::Matrix& a_out, bpl::Matrix& b_out, bpl::Matrix& c_out) {
    const bpl::DatasetBundle& base = f.base;
    const bpl::Matrix& protos = base.unseen_prototypes;
    a_out = bpl::Matrix(base.d, base.d);
    b_out = bpl::Matrix(base.k, base.k);
    c_out = bpl::Matrix(base.d, base.k);
    for (int s = 0; s < base.seen_features.cols; ++s) {
        int l = base.seen_labels[s];
        for (int r = 0; r < base.d; ++r)
            for (int r2 = 0; r2 < base.d; ++r2)
                a_out.at(r, r2) +=
                    (1.0 - a) * base.seen_features.at(r, s) * base.seen_features.at(r2, s);
        for (int c = 0; c < base.k; ++c)
            for (int c2 = 0; c2 < base.k; ++c2)
                b_out.at(c, c2) +=
                    (1.0 - a) * base.seen_prototypes.at(c, l) * base.seen_prototypes.at(c2, l);
        for (int r = 0; r < base.d; ++r)
            for (int c = 0; c < base.k; ++c)
                c_out.at(r, c) += 2.0 * (1.0 - a) * base.seen_features.at(r, s) *
                                  base.seen_prototypes.at(c, l);
    }
    for (int s = 0; s < f.support_features.cols; ++s) {
        int j = f.support_labels[s] - base.p;
        for (int r = 0; r < base.d; ++r)
            for (int r2 = 0; r2 < base.d; ++r2)
                a_out.at(r, r2) +=
                    a * f.support_features.at(r, s) * f.support_features.at(r2, s);
        for (int c = 0; c < base.k; ++c)
            for (int c2 = 0; c2 < base.k; ++c2)
                b_out.at(c, c2) += a * protos.at(c, j) * protos.at(c2, j);
        for (int r = 0; r < base.d; ++r)
            for (int c = 0; c < base.k; ++c)
                c_out.at(r, c) += 2.0 * a * f.support_features.at(r, s) * protos.at(c, j);
    }
    for (int i = 0; i < qx.cols; ++i) {
        for (int r = 0; r < base.d; ++r)
            for (int r2 = 0; r2 < base.d; ++r2)
                a_out.at(r, r2) += a * (1.0 - mu) * qx.at(r, i) * qx.at(r2, i);
        for (int j = 0; j < base.q; ++j) {
            for (int c = 0; c < base.k; ++c)
                for (int c2 = 0; c2 < base.k; ++c2)
                    b_out.at(c, c2) += a * delta.at(i, j) * protos.at(c, j) * protos.at(c2, j);
            for (int r = 0; r < base.d; ++r)
                for (int c = 0; c < base.k; ++c)
                    c_out.at(r, c) += 2.0 * a * delta.at(i, j) * qx.at(r, i) * protos.at(c, j);
        }
    }
    for (int i = 0; i < base.d; ++i) a_out.at(i, i) += beta;
    for (int i = 0; i < base.k; ++i) b_out.at(i, i) += beta;
}

// Fraction of test samples whose nearest projected novel prototype carries
// the right global label.
double novel_top1(const bpl::Matrix& w, const bpl::FSLBundle& f) {
    const bpl::DatasetBundle& base = f.base;
    REQUIRE(base.test_features.has_value());
    const bpl::Matrix& x = *base.test_features;
    bpl::Matrix wy = bpl::matmul(w, base.unseen_prototypes);
    int hits = 0;
    for (int s = 0; s < x.cols; ++s) {
        int best = 0;
        double best_d = 0.0;
        for (int j = 0; j < base.q; ++j) {
            double dist = 0.0;
            for (int r = 0; r < base.d; ++r) {
                double diff = x.at(r, s) - wy.at(r, j);
                dist += diff * diff;
            }
            if (j == 0 || dist < best_d) {
                best_d = dist;
                best = j;
            }
        }
        if (base.p + best == base.test_labels->at(s)) ++hits;
    }
    return static_cast<double>(hits) / x.cols;
}

}  // namespace

TEST_CASE("base statistics match hand values, linearity, and naive loops", "[episodes]") {
    bpl::DatasetBundle b;
    b.d = 2;
    b.k = 1;
    b.p = 1;
    b.q = 1;
    b.split_kind = bpl::SplitKind::pure_zsl;
    b.seen_features = bpl::Matrix::from_data(2, 1, {1.0, 0.0});
    b.seen_labels = {0};
    b.seen_prototypes = bpl::Matrix::from_data(1, 1, {1.0});
    b.unseen_prototypes = bpl::Matrix::from_data(1, 1, {0.5});
    bpl::BaseStats st = bpl::precompute_base_stats(b);
    CHECK(st.sxx.at(0, 0) == 1.0);
    CHECK(st.sxx.at(0, 1) == 0.0);
    CHECK(st.sxx.at(1, 1) == 0.0);
    CHECK(st.syy.at(0, 0) == 1.0);
    CHECK(st.sxy.at(0, 0) == 1.0);
    CHECK(st.sxy.at(1, 0) == 0.0);
    CHECK(st.count == 1);

    // Two identical samples double every entry exactly.
    bpl::DatasetBundle b2 = b;
    b2.seen_features = bpl::Matrix::from_data(2, 2, {1.0, 1.0, 0.0, 0.0});
    b2.seen_labels = {0, 0};
    bpl::BaseStats st2 = bpl::precompute_base_stats(b2);
    CHECK(bitwise_equal(st2.sxx, bpl::scale(st.sxx, 2.0)));
    CHECK(bitwise_equal(st2.syy, bpl::scale(st.syy, 2.0)));
    CHECK(bitwise_equal(st2.sxy, bpl::scale(st.sxy, 2.0)));

    // Random base set against naive loops.
    bpl::FSLBundle f = make_fsl(42);
    bpl::BaseStats str = bpl::precompute_base_stats(f.base);
    CHECK(bpl::max_abs_diff(str.sxx, oracle::naive_gram(f.base.seen_features)) <= 1e-10);
    std::vector<double> counts(f.base.p, 0.0);
    bpl::Matrix csums(f.base.d, f.base.p);
    for (int s = 0; s < f.base.seen_features.cols; ++s) {
        counts[f.base.seen_labels[s]] += 1.0;
        for (int r = 0; r < f.base.d; ++r)
            csums.at(r, f.base.seen_labels[s]) += f.base.seen_features.at(r, s);
    }
    CHECK(bpl::max_abs_diff(str.syy, oracle::naive_gram(f.base.seen_prototypes, &counts)) <=
          1e-10);
    bpl::Matrix cxy(f.base.d, f.base.k);
    for (int s = 0; s < f.base.seen_features.cols; ++s)
        for (int r = 0; r < f.base.d; ++r)
            for (int c = 0; c < f.base.k; ++c)
                cxy.at(r, c) += f.base.seen_features.at(r, s) *
                                f.base.seen_prototypes.at(c, f.base.seen_labels[s]);
    CHECK(bpl::max_abs_diff(str.sxy, cxy) <= 1e-10);
}

TEST_CASE("episode weights stay normalized even on a degenerate query set", "[episodes]") {
    bpl::FSLBundle f = make_fsl(9, 1);
    bpl::BaseStats stats = bpl::precompute_base_stats(f.base);
    bpl::SolverConfig cfg;
    bpl::Matrix w_init = bpl::fit_bpl0(f.base, cfg).w;
    bpl::SynthConfig sc;
    sc.fsl_noise_sigma = 0.0;  // class-deterministic query features
    sc.fsl_copies_per_shot = 1;
    bpl::SynthSet query = bpl::synthesize_fsl(f, w_init, sc);

    bool saw_iteration = false;
    auto observer = [&](const bpl::IterationView& view) {
        saw_iteration = true;
        for (int i = 0; i < view.eta.rows; ++i) {
            double sum = 0.0;
            for (int j = 0; j < view.eta.cols; ++j) sum += view.eta.at(i, j);
            CHECK(sum == Catch::Approx(1.0).margin(1e-12));
        }
    };
    bpl::FitTrace trace;
    bpl::Matrix w = bpl::run_episode(stats, f, query, cfg, 0, &trace, observer);
    CHECK(saw_iteration);
    CHECK(bpl::frobenius_norm(w) > 0.0);
    CHECK(!trace.iterations.empty());
    CHECK(trace.iterations.size() <= static_cast<std::size_t>(cfg.max_iters));
}

TEST_CASE("episodes collapse to the base-only fit when the blend weight is zero", "[episodes]") {
    bpl::FSLBundle f = make_fsl(13);
    bpl::BaseStats stats = bpl::precompute_base_stats(f.base);
    bpl::SolverConfig cfg;
    cfg.mode = bpl::SolverMode::bpl1;
    cfg.alpha = 0.0;
    bpl::SolverConfig init_cfg;
    bpl::Matrix w_init = bpl::fit_bpl0(f.base, init_cfg).w;
    bpl::SynthConfig sc;
    bpl::SynthSet query = bpl::synthesize_fsl(f, w_init, sc);
    bpl::Matrix w = bpl::run_episode(stats, f, query, cfg);
    CHECK(bitwise_equal(w, w_init));
}

TEST_CASE("episode systems match a from-scratch assembly over all three groups", "[episodes]") {
    bpl::FSLBundle f = make_fsl(31, 2, 6, 4, 5, 3, 6);
    bpl::BaseStats stats = bpl::precompute_base_stats(f.base);
    bpl::SolverConfig cfg;
    cfg.mode = bpl::SolverMode::full;
    bpl::Matrix w_init = bpl::fit_bpl0(f.base, cfg).w;
    bpl::SynthConfig sc;
    sc.seed = 5;
    bpl::SynthSet query = bpl::synthesize_fsl(f, w_init, sc);

    int iter = 0;
    auto observer = [&](const bpl::IterationView& view) {
        ++iter;
        bpl::Matrix na, nb, nc;
        naive_episode_assemble(f, query.features, view.delta, view.alpha_t, cfg.mu, cfg.beta,
                               na, nb, nc);
        double tol_a = 1e-10 * std::max(1.0, bpl::max_abs(na));
        double tol_b = 1e-10 * std::max(1.0, bpl::max_abs(nb));
        double tol_c = 1e-10 * std::max(1.0, bpl::max_abs(nc));
        CHECK(bpl::max_abs_diff(view.system.A, na) <= tol_a);
        CHECK(bpl::max_abs_diff(view.system.B, nb) <= tol_b);
        CHECK(bpl::max_abs_diff(view.system.C, nc) <= tol_c);
    };
    bpl::run_episode(stats, f, query, cfg, 0, nullptr, observer);
    CHECK(iter >= 1);
}

TEST_CASE("episodes are deterministic in their inputs", "[episodes]") {
    bpl::FSLBundle f = make_fsl(57);
    bpl::BaseStats stats = bpl::precompute_base_stats(f.base);
    bpl::SolverConfig cfg;
    bpl::Matrix w_init = bpl::fit_bpl0(f.base, cfg).w;
    bpl::SynthConfig sc;
    sc.seed = 8;
    bpl::SynthSet query = bpl::synthesize_fsl(f, w_init, sc);
    bpl::Matrix w1 = bpl::run_episode(stats, f, query, cfg);
    bpl::Matrix w2 = bpl::run_episode(stats, f, query, cfg);
    CHECK(bitwise_equal(w1, w2));
}

TEST_CASE("single-episode training equals one episode run by hand", "[episodes]") {
    bpl::FSLBundle f = make_fsl(77);
    bpl::EpisodePlan plan;
    plan.episodes = 1;
    plan.seed = 777;
    bpl::SynthConfig sc;
    bpl::SolverConfig cfg;
    auto fit = bpl::fit_fsl(f, plan, sc, cfg);

    bpl::BaseStats stats = bpl::precompute_base_stats(f.base);
    bpl::Matrix w_init = bpl::fit_bpl0(f.base, cfg).w;
    bpl::SynthConfig ec = sc;
    ec.seed = bpl::derive_seed(plan.seed, 0);
    bpl::SynthSet query = bpl::synthesize_fsl(f, w_init, ec);
    bpl::Matrix manual = bpl::run_episode(stats, f, query, cfg);

    REQUIRE(fit.episode_w.size() == 1);
    CHECK(bitwise_equal(fit.w, manual));
    CHECK(fit.traces.size() == 1);
}

TEST_CASE("averaging identical episodes returns their projection exactly", "[episodes]") {
    bpl::FSLBundle f = make_fsl(91);
    bpl::EpisodePlan plan;
    plan.episodes = 4;
    plan.seed = 123;
    bpl::SynthConfig sc;
    sc.fsl_noise_sigma = 0.0;  // every episode synthesizes the same query set
    bpl::SolverConfig cfg;
    auto fit = bpl::fit_fsl(f, plan, sc, cfg);
    REQUIRE(fit.episode_w.size() == 4);
    for (int h = 1; h < 4; ++h) CHECK(bitwise_equal(fit.episode_w[h], fit.episode_w[0]));
    CHECK(bitwise_equal(fit.w, fit.episode_w[0]));

    // With noise on, the episodes genuinely differ.
    bpl::SynthConfig noisy;
    noisy.fsl_noise_sigma = 0.4;
    auto fit2 = bpl::fit_fsl(f, plan, noisy, cfg);
    bool any_differ = false;
    for (int h = 1; h < 4; ++h)
        if (!bitwise_equal(fit2.episode_w[h], fit2.episode_w[0])) any_differ = true;
    CHECK(any_differ);
}

TEST_CASE("episode averaging does not hurt novel-class accuracy on average", "[episodes]") {
    double mean_avg = 0.0, mean_single = 0.0;
    const int outer = 10;
    for (int s = 0; s < outer; ++s) {
        bpl::FSLBundle f = make_fsl(1000 + s, 5, 16, 8, 8, 3, 20);
        bpl::SynthConfig sc;
        bpl::SolverConfig cfg;
        bpl::EpisodePlan plan_many;
        plan_many.episodes = 10;
        plan_many.seed = 5000 + s;
        bpl::EpisodePlan plan_one = plan_many;
        plan_one.episodes = 1;
        mean_avg += novel_top1(bpl::fit_fsl(f, plan_many, sc, cfg).w, f);
        mean_single += novel_top1(bpl::fit_fsl(f, plan_one, sc, cfg).w, f);
    }
    mean_avg /= outer;
    mean_single /= outer;
    CHECK(mean_avg >= mean_single - 1e-12);
}

TEST_CASE("episode inputs are validated", "[episodes]") {
    bpl::FSLBundle f = make_fsl(3);
    bpl::BaseStats stats = bpl::precompute_base_stats(f.base);
    bpl::SolverConfig cfg;
    bpl::Matrix w_init = bpl::fit_bpl0(f.base, cfg).w;
    bpl::SynthConfig sc;
    bpl::SynthSet query = bpl::synthesize_fsl(f, w_init, sc);

    bpl::EpisodePlan bad_plan;
    bad_plan.episodes = 0;
    CHECK_THROWS_AS(bpl::require_valid(bad_plan), bpl::ValidationError);

    bpl::SolverConfig bad_mode = cfg;
    bad_mode.mode = bpl::SolverMode::rpl;
    CHECK_THROWS_AS(bpl::run_episode(stats, f, query, bad_mode), bpl::ValidationError);

    bpl::BaseStats wrong = stats;
    wrong.sxx = bpl::Matrix(f.base.d + 1, f.base.d + 1);
    CHECK_THROWS_AS(bpl::run_episode(wrong, f, query, cfg), bpl::DimensionError);

    bpl::SynthSet bad_query = query;
    bad_query.guiding_class[0] = f.base.q;
    CHECK_THROWS_AS(bpl::run_episode(stats, f, bad_query, cfg), bpl::ValidationError);
}

TEST_CASE("episodic training accepts the normalization flag", "[episodes]") {
    bpl::FSLBundle f = make_fsl(19);
    bpl::EpisodePlan plan;
    plan.episodes = 2;
    plan.seed = 4;
    bpl::SynthConfig sc;
    bpl::SolverConfig cfg;
    cfg.normalize_inputs = true;
    auto fit = bpl::fit_fsl(f, plan, sc, cfg);
    CHECK(bpl::frobenius_norm(fit.w) > 0.0);
    for (double v : fit.w.data) CHECK(std::isfinite(v));
    bpl::SolverConfig plain;
    auto fit2 = bpl::fit_fsl(f, plan, sc, plain);
    CHECK(!bitwise_equal(fit.w, fit2.w));
}