#pragma once

// Bidirectional projection solver. Each fit minimizes a mix of seen-data
// reconstruction terms and (for the competitive modes) min-function terms
// over synthesized samples; every iteration reduces to a Sylvester equation
// A W + W B = C assembled from Gram-style sums.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bpl/dataset.hpp"
#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"
#include "bpl/sylvester.hpp"
#include "bpl/synthesis.hpp"

namespace bpl {

using ProjectionMatrix = Matrix;  // d x k, semantic -> visual direction

enum class SolverMode { full, bpl1, bpl0, fpl, rpl, entropy, no_ambiguity };

inline std::string to_string(SolverMode m) {
    switch (m) {
        case SolverMode::full: return "full";
        case SolverMode::bpl1: return "bpl1";
        case SolverMode::bpl0: return "bpl0";
        case SolverMode::fpl: return "fpl";
        case SolverMode::rpl: return "rpl";
        case SolverMode::entropy: return "entropy";
        case SolverMode::no_ambiguity: return "no_ambiguity";
    }
    throw ValidationError("unknown solver mode");
}

inline SolverMode solver_mode_from_string(const std::string& s) {
    if (s == "full") return SolverMode::full;
    if (s == "bpl1") return SolverMode::bpl1;
    if (s == "bpl0") return SolverMode::bpl0;
    if (s == "fpl") return SolverMode::fpl;
    if (s == "rpl") return SolverMode::rpl;
    if (s == "entropy") return SolverMode::entropy;
    if (s == "no_ambiguity") return SolverMode::no_ambiguity;
    throw ParseError("unknown solver mode \"" + s + "\"");
}

struct SolverConfig {
    // alpha and mu are problem-dependent (meant to be tuned by cross
    // validation); the defaults sit in the regime where the iteration
    // contracts even when the synthesized set is a sizable fraction of the
    // training data, which is typical at small scale.
    double alpha = 0.1;        // synth-term weight schedule start, [0, 1)
    double mu = 0.1;           // runner-up push strength, [0, 1)
    double beta = 0.01;        // ridge term
    double epsilon = 0.001;    // relative near-minimum membership threshold
    double alpha_decay = 0.99;
    int max_iters = 5;
    double rel_tol = 1e-4;     // stop when relative W change drops below this
    SolverMode mode = SolverMode::full;
    double entropy_lr = 1e-3;
    int entropy_steps = 50;
    bool normalize_inputs = false;
};

inline void require_valid(const SolverConfig& c) {
    if (!(c.alpha >= 0.0) || !(c.alpha < 1.0))
        throw ValidationError("solver config: alpha must be in [0, 1)");
    if (!(c.mu >= 0.0) || !(c.mu < 1.0))
        throw ValidationError("solver config: mu must be in [0, 1)");
    if (!(c.beta > 0.0)) throw ValidationError("solver config: beta must be positive");
    if (!(c.epsilon > 0.0)) throw ValidationError("solver config: epsilon must be positive");
    if (!(c.alpha_decay > 0.0) || !(c.alpha_decay <= 1.0))
        throw ValidationError("solver config: alpha_decay must be in (0, 1]");
    if (c.max_iters < 1) throw ValidationError("solver config: max_iters must be >= 1");
    if (!(c.rel_tol > 0.0)) throw ValidationError("solver config: rel_tol must be positive");
    if (!(c.alpha * (1.0 - c.mu) < 1.0))
        throw ValidationError("solver config: alpha * (1 - mu) must be < 1");
    if (!(c.entropy_lr > 0.0)) throw ValidationError("solver config: entropy_lr must be positive");
    if (c.entropy_steps < 1)
        throw ValidationError("solver config: entropy_steps must be >= 1");
}

struct GradientWeights {
    Matrix eta;    // N_g x q, best-set weights (rows sum to 1)
    Matrix xi;     // N_g x q, runner-up weights (rows sum to 1 when used)
    Matrix delta;  // eta - mu * xi
};

struct FitIteration {
    int iter = 0;
    double objective = 0.0;
    double rel_change = 0.0;
    int label_changes = 0;
    double wall_seconds = 0.0;
};

struct FitTrace {
    std::vector<FitIteration> iterations;
};

inline std::string to_json_lines(const FitTrace& t) {
    std::string out;
    for (const auto& it : t.iterations) {
        nlohmann::json j;
        j["iter"] = it.iter;
        j["objective"] = it.objective;
        j["rel_change"] = it.rel_change;
        j["label_changes"] = it.label_changes;
        j["wall_seconds"] = it.wall_seconds;
        out += j.dump();
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss and min-function gradient weights.

/// Entry (i, j) = ||W^T x_i - y_j||^2 + ||x_i - W y_j||^2 over the columns of
/// X (d x n) and Y (k x q).
inline Matrix loss_matrix(const Matrix& w, const Matrix& x, const Matrix& y) {
    if (w.rows != x.rows) throw DimensionError("loss_matrix: feature dimension mismatch");
    if (w.cols != y.rows) throw DimensionError("loss_matrix: semantic dimension mismatch");
    Matrix wtx = matmul(transpose(w), x);  // k x n
    Matrix wy = matmul(w, y);              // d x q
    Matrix f(x.cols, y.cols);
    for (int i = 0; i < x.cols; ++i)
        for (int j = 0; j < y.cols; ++j) {
            double fwd = 0.0;
            for (int c = 0; c < y.rows; ++c) {
                double diff = wtx.at(c, i) - y.at(c, j);
                fwd += diff * diff;
            }
            double rev = 0.0;
            for (int r = 0; r < x.rows; ++r) {
                double diff = x.at(r, i) - wy.at(r, j);
                rev += diff * diff;
            }
            f.at(i, j) = fwd + rev;
        }
    return f;
}

namespace detail {

/// Near-minimum membership: relative gap below epsilon, falling back to an
/// absolute threshold of epsilon * 1e-12 when the reference minimum is zero.
inline bool near_minimum(double value, double reference, double epsilon) {
    if (reference > 0.0) return (value - reference) / reference < epsilon;
    return value < epsilon * 1e-12;
}

}  // namespace detail

struct MinGradient {
    Matrix eta;                            // rows sum to 1 over each best set
    std::vector<std::vector<int>> j_sets;  // ascending class indices per row
};

inline MinGradient min_gradient_eta(const Matrix& f, double epsilon) {
    if (!(epsilon > 0.0)) throw ValidationError("min_gradient_eta: epsilon must be positive");
    MinGradient out{Matrix(f.rows, f.cols), {}};
    out.j_sets.resize(f.rows);
    for (int i = 0; i < f.rows; ++i) {
        double m = f.at(i, 0);
        for (int j = 1; j < f.cols; ++j) m = std::min(m, f.at(i, j));
        auto& members = out.j_sets[i];
        for (int j = 0; j < f.cols; ++j)
            if (detail::near_minimum(f.at(i, j), m, epsilon)) members.push_back(j);
        double weight = 1.0 / static_cast<double>(members.size());
        for (int j : members) out.eta.at(i, j) = weight;
    }
    return out;
}

inline Matrix second_min_gradient_xi(const Matrix& f,
                                     const std::vector<std::vector<int>>& j_sets,
                                     double epsilon) {
    if (!(epsilon > 0.0))
        throw ValidationError("second_min_gradient_xi: epsilon must be positive");
    if (static_cast<int>(j_sets.size()) != f.rows)
        throw DimensionError("second_min_gradient_xi: j_sets size differs from rows");
    Matrix xi(f.rows, f.cols);
    std::vector<char> in_best(f.cols);
    for (int i = 0; i < f.rows; ++i) {
        std::fill(in_best.begin(), in_best.end(), 0);
        for (int j : j_sets[i]) in_best[j] = 1;
        bool found = false;
        double m = 0.0;
        for (int j = 0; j < f.cols; ++j)
            if (!in_best[j] && (!found || f.at(i, j) < m)) {
                m = f.at(i, j);
                found = true;
            }
        if (!found)
            throw NoRunnerUpError("no runner-up class for sample " + std::to_string(i) +
                                  ": the best set covers every class (q too small or epsilon "
                                  "too large)");
        int count = 0;
        for (int j = 0; j < f.cols; ++j)
            if (!in_best[j] && detail::near_minimum(f.at(i, j), m, epsilon)) ++count;
        double weight = 1.0 / static_cast<double>(count);
        for (int j = 0; j < f.cols; ++j)
            if (!in_best[j] && detail::near_minimum(f.at(i, j), m, epsilon))
                xi.at(i, j) = weight;
    }
    return xi;
}

/// Sum over the columns of x of the competitive min terms,
/// min_j f_ij - mu * min_{j != argmin} f_ij, with the exact argmin (lowest
/// index on ties).
inline double competitive_min_sum(const Matrix& w, const Matrix& x, const Matrix& y,
                                  double mu) {
    if (x.empty()) return 0.0;
    if (mu != 0.0 && y.cols < 2)
        throw ValidationError("competitive_min_sum: runner-up term needs at least two classes");
    Matrix f = loss_matrix(w, x, y);
    double total = 0.0;
    for (int i = 0; i < f.rows; ++i) {
        int best = 0;
        for (int j = 1; j < f.cols; ++j)
            if (f.at(i, j) < f.at(i, best)) best = j;
        double term = f.at(i, best);
        if (mu != 0.0) {
            bool found = false;
            double second = 0.0;
            for (int j = 0; j < f.cols; ++j)
                if (j != best && (!found || f.at(i, j) < second)) {
                    second = f.at(i, j);
                    found = true;
                }
            term -= mu * second;
        }
        total += term;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Normal-equation assembly.

struct NormalEquations {
    Matrix A;  // d x d
    Matrix B;  // k x k
    Matrix C;  // d x k
};

struct SeenStats {
    Matrix sxx;  // sum x x^T
    Matrix syy;  // sum y_label y_label^T
    Matrix sxy;  // sum x y_label^T
    int count = 0;
};

inline SeenStats compute_seen_stats(const Matrix& features, const std::vector<int>& labels,
                                    const Matrix& prototypes) {
    if (static_cast<int>(labels.size()) != features.cols)
        throw DimensionError("seen stats: label count differs from sample count");
    SeenStats st;
    st.sxx = accumulate_gram(features);
    std::vector<double> class_counts(prototypes.cols, 0.0);
    Matrix class_sums(features.rows, prototypes.cols);
    for (int s = 0; s < features.cols; ++s) {
        int l = labels[s];
        if (l < 0 || l >= prototypes.cols)
            throw ValidationError("seen stats: label out of prototype range");
        class_counts[l] += 1.0;
        for (int r = 0; r < features.rows; ++r) class_sums.at(r, l) += features.at(r, s);
    }
    st.syy = accumulate_gram(prototypes, &class_counts);
    st.sxy = cross_product(class_sums, prototypes);
    st.count = features.cols;
    return st;
}

inline SeenStats compute_seen_stats(const DatasetBundle& b) {
    return compute_seen_stats(b.seen_features, b.seen_labels, b.seen_prototypes);
}

/// Value of sum_s ||W^T x - y_l||^2 + ||x - W y_l||^2 expressed through the
/// precomputed sums: tr(W^T Sxx W) + tr(W^T W Syy) - 4 tr(W^T Sxy) + tr(Sxx)
/// + tr(Syy).
inline double quadratic_reconstruction_value(const Matrix& w, const SeenStats& st) {
    double total = 0.0;
    for (int i = 0; i < st.sxx.rows; ++i) total += st.sxx.at(i, i);
    for (int i = 0; i < st.syy.rows; ++i) total += st.syy.at(i, i);
    Matrix sw = matmul(st.sxx, w);
    Matrix wsyy = matmul(w, st.syy);
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        total += w.data[i] * sw.data[i];
        total += w.data[i] * wsyy.data[i];
        total -= 4.0 * w.data[i] * st.sxy.data[i];
    }
    return total;
}

/// A = (1-a) Sxx + a(1-mu) sum_g x x^T + beta I
/// B = (1-a) Syy + a sum_g sum_j delta_ij y_j y_j^T + beta I
/// C = 2(1-a) Sxy + 2a sum_g sum_j delta_ij x y_j^T
/// The synth sums exploit the row sparsity of delta. x_g and delta may be
/// empty when alpha_t = 0 (the synth terms then vanish exactly).
inline NormalEquations assemble_from_stats(const SeenStats& st, const Matrix& y_u,
                                           const Matrix& x_g, const Matrix& delta,
                                           double alpha_t, double mu, double beta) {
    if (!(alpha_t >= 0.0) || !(alpha_t < 1.0))
        throw ValidationError("assemble: alpha_t must be in [0, 1)");
    if (!(1.0 - mu > 0.0)) throw ValidationError("assemble: mu must be < 1");
    NormalEquations ne;
    ne.A = scale(st.sxx, 1.0 - alpha_t);
    ne.B = scale(st.syy, 1.0 - alpha_t);
    ne.C = scale(st.sxy, 2.0 * (1.0 - alpha_t));
    if (alpha_t != 0.0 && !x_g.empty()) {
        if (x_g.rows != st.sxx.rows) throw DimensionError("assemble: synth feature rows != d");
        if (delta.rows != x_g.cols || delta.cols != y_u.cols)
            throw DimensionError("assemble: delta must be N_g x q");
        axpy(ne.A, alpha_t * (1.0 - mu), accumulate_gram(x_g));
        std::vector<double> col_sums(y_u.cols, 0.0);
        for (int i = 0; i < delta.rows; ++i)
            for (int j = 0; j < delta.cols; ++j) col_sums[j] += delta.at(i, j);
        axpy(ne.B, alpha_t, accumulate_gram(y_u, &col_sums));
        Matrix z(x_g.rows, y_u.cols);  // column j accumulates sum_i delta_ij x_i
        for (int i = 0; i < delta.rows; ++i)
            for (int j = 0; j < delta.cols; ++j) {
                double dv = delta.at(i, j);
                if (dv == 0.0) continue;
                for (int r = 0; r < x_g.rows; ++r) z.at(r, j) += dv * x_g.at(r, i);
            }
        axpy(ne.C, 2.0 * alpha_t, cross_product(z, y_u));
    }
    add_diagonal(ne.A, beta);
    add_diagonal(ne.B, beta);
    return ne;
}

inline NormalEquations assemble_normal_equations(const DatasetBundle& b, const Matrix& x_g,
                                                 const Matrix& delta, double alpha_t,
                                                 double mu, double beta) {
    return assemble_from_stats(compute_seen_stats(b), b.unseen_prototypes, x_g, delta,
                               alpha_t, mu, beta);
}

/// Solves the assembled system, escalating the ridge term tenfold (up to
/// three times, mutating the system in place) when the pencil is singular —
/// the runner-up push can make B indefinite.
inline Matrix solve_with_escalation(NormalEquations& ne, double beta) {
    double beta_cur = beta;
    for (int attempt = 0;; ++attempt) {
        try {
            return solve_sylvester(ne.A, ne.B, ne.C);
        } catch (const SingularPencilError&) {
            if (attempt >= 3) throw;
            double bump = 9.0 * beta_cur;
            add_diagonal(ne.A, bump);
            add_diagonal(ne.B, bump);
            beta_cur *= 10.0;
            std::cerr << "warning: singular pencil; retrying this solve with ridge "
                      << beta_cur << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Objective (diagnostics and tests).

/// Full objective with gamma, nu recovered from (alpha_t, beta):
///   sum_seen [||W^T x - y_l||^2 + ||x - W y_l||^2]
///   + gamma * sum_g [min_j f_ij - mu * min_{j != argmin} f_ij]
///   + 2 nu ||W||_F^2,
/// where gamma = alpha_t/(1-alpha_t) and nu = beta/(1-alpha_t). The min terms
/// use the exact argmin (lowest index on ties). x_g may be empty.
inline double objective_value(const Matrix& w, const DatasetBundle& b, const Matrix& x_g,
                              double mu, double alpha_t, double beta) {
    if (alpha_t == 1.0) throw UndefinedGammaError("objective undefined at alpha_t = 1");
    if (!(alpha_t >= 0.0) || !(alpha_t < 1.0))
        throw ValidationError("objective_value: alpha_t must be in [0, 1)");
    const double gamma = alpha_t / (1.0 - alpha_t);
    const double nu = beta / (1.0 - alpha_t);

    Matrix wtx = matmul(transpose(w), b.seen_features);
    Matrix wys = matmul(w, b.seen_prototypes);
    double seen = 0.0;
    for (int s = 0; s < b.seen_features.cols; ++s) {
        int l = b.seen_labels[s];
        double fwd = 0.0;
        for (int c = 0; c < b.k; ++c) {
            double diff = wtx.at(c, s) - b.seen_prototypes.at(c, l);
            fwd += diff * diff;
        }
        double rev = 0.0;
        for (int r = 0; r < b.d; ++r) {
            double diff = b.seen_features.at(r, s) - wys.at(r, l);
            rev += diff * diff;
        }
        seen += fwd + rev;
    }

    double synth = 0.0;
    if (!x_g.empty() && gamma != 0.0)
        synth = competitive_min_sum(w, x_g, b.unseen_prototypes, mu);

    double fro = frobenius_norm(w);
    return seen + gamma * synth + 2.0 * nu * fro * fro;
}

// ---------------------------------------------------------------------------
// Input normalization (optional, off by default).

inline Matrix l2_normalized_columns(const Matrix& m) {
    Matrix out = m;
    for (int c = 0; c < m.cols; ++c) {
        double norm2 = 0.0;
        for (int r = 0; r < m.rows; ++r) norm2 += m.at(r, c) * m.at(r, c);
        double norm = std::sqrt(norm2);
        if (norm > 0.0)
            for (int r = 0; r < m.rows; ++r) out.at(r, c) /= norm;
    }
    return out;
}

inline DatasetBundle normalized_inputs(const DatasetBundle& b) {
    DatasetBundle out = b;
    out.seen_features = l2_normalized_columns(b.seen_features);
    out.seen_prototypes = l2_normalized_columns(b.seen_prototypes);
    out.unseen_prototypes = l2_normalized_columns(b.unseen_prototypes);
    if (out.test_features) out.test_features = l2_normalized_columns(*b.test_features);
    return out;
}

// ---------------------------------------------------------------------------
// Fits.

struct FitResult {
    Matrix w;
    FitTrace trace;
};

struct CompetitiveFitResult {
    Matrix w;
    GradientWeights weights;
    FitTrace trace;
};

struct IterationView {
    int iter;
    double alpha_t;
    const Matrix& eta;
    const Matrix& xi;
    const Matrix& delta;
    const NormalEquations& system;  // the system actually solved
    const Matrix& w_new;
};

using IterationObserver = std::function<void(const IterationView&)>;

/// Closed-form seen-only bidirectional fit (the alpha = 0 model): one
/// Sylvester solve of the seen normal equations.
inline FitResult fit_bpl0(const DatasetBundle& bundle, const SolverConfig& cfg) {
    require_valid(cfg);
    require_valid(bundle);
    DatasetBundle holder;
    const DatasetBundle* b = &bundle;
    if (cfg.normalize_inputs) {
        holder = normalized_inputs(bundle);
        b = &holder;
    }
    auto tic = std::chrono::steady_clock::now();
    SeenStats st = compute_seen_stats(*b);
    NormalEquations ne =
        assemble_from_stats(st, b->unseen_prototypes, Matrix(), Matrix(), 0.0, 0.0, cfg.beta);
    Matrix w = solve_sylvester(ne.A, ne.B, ne.C);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    FitTrace trace;
    trace.iterations.push_back(
        {0, objective_value(w, *b, Matrix(), 0.0, 0.0, cfg.beta), 0.0, 0, secs});
    return {std::move(w), std::move(trace)};
}

namespace detail {

struct CompetitiveLoopResult {
    Matrix w;
    GradientWeights weights;
    FitTrace trace;
};

/// Shared iteration engine. `assemble(delta, alpha_t, mu_eff)` builds the
/// Sylvester system; `objective(w_new, mu_eff, alpha_t)` scores the iterate
/// for the trace.
template <typename AssembleFn, typename ObjectiveFn>
inline CompetitiveLoopResult competitive_loop(Matrix w0, const Matrix& synth_x,
                                              const Matrix& y_u,
                                              const std::vector<int>& guiding,
                                              const SolverConfig& cfg,
                                              const AssembleFn& assemble,
                                              const ObjectiveFn& objective,
                                              const IterationObserver& observer) {
    const int n_g = synth_x.cols;
    const int q = y_u.cols;
    Matrix w = std::move(w0);
    std::vector<int> prev_assign = guiding;
    GradientWeights weights;
    FitTrace trace;
    double alpha_t = cfg.alpha;
    for (int t = 0; t < cfg.max_iters; ++t) {
        auto tic = std::chrono::steady_clock::now();
        if (t > 0) alpha_t *= cfg.alpha_decay;

        Matrix f = loss_matrix(w, synth_x, y_u);
        Matrix eta(n_g, q), xi(n_g, q);
        std::vector<std::vector<int>> j_sets;
        double mu_eff = 0.0;
        if (cfg.mode == SolverMode::no_ambiguity) {
            j_sets.resize(n_g);
            for (int i = 0; i < n_g; ++i) {
                eta.at(i, guiding[i]) = 1.0;
                j_sets[i] = {guiding[i]};
            }
        } else {
            MinGradient mg = min_gradient_eta(f, cfg.epsilon);
            eta = std::move(mg.eta);
            j_sets = std::move(mg.j_sets);
            if (cfg.mode == SolverMode::full) {
                xi = second_min_gradient_xi(f, j_sets, cfg.epsilon);
                mu_eff = cfg.mu;
            }
        }
        Matrix delta = eta;
        if (mu_eff != 0.0) axpy(delta, -mu_eff, xi);

        int changes = 0;
        for (int i = 0; i < n_g; ++i) {
            int assign = j_sets[i].front();
            if (assign != prev_assign[i]) ++changes;
            prev_assign[i] = assign;
        }

        NormalEquations ne = assemble(delta, alpha_t, mu_eff);
        Matrix w_new = solve_with_escalation(ne, cfg.beta);

        double base_norm = frobenius_norm(w);
        double diff_norm = frobenius_norm(sub(w_new, w));
        double rel = base_norm > 0.0
                         ? diff_norm / base_norm
                         : (diff_norm > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
        trace.iterations.push_back({t, objective(w_new, mu_eff, alpha_t), rel, changes, secs});
        if (observer) observer(IterationView{t, alpha_t, eta, xi, delta, ne, w_new});

        w = std::move(w_new);
        weights = GradientWeights{std::move(eta), std::move(xi), std::move(delta)};
        if (rel < cfg.rel_tol) break;
    }
    return {std::move(w), std::move(weights), std::move(trace)};
}

inline void require_synth_consistent(const SynthSet& synth, int d, int q) {
    if (synth.count() < 1) throw ValidationError("fit: synthesis set is empty");
    if (synth.features.rows != d) throw DimensionError("fit: synth feature rows != d");
    if (static_cast<int>(synth.guiding_class.size()) != synth.count())
        throw DimensionError("fit: guiding_class length != synth count");
    for (int g : synth.guiding_class)
        if (g < 0 || g >= q) throw ValidationError("fit: guiding class out of range");
}

}  // namespace detail

/// Competitive fit over a synthesized sample set (modes full / bpl1 /
/// no_ambiguity). Initialized at the seen-only closed form; each iteration
/// recomputes the min-function weights at the current W, reassembles the
/// normal equations, and solves the Sylvester system.
inline CompetitiveFitResult fit_competitive_bpl(const DatasetBundle& bundle,
                                                const SynthSet& synth, const SolverConfig& cfg,
                                                const IterationObserver& observer = {}) {
    require_valid(cfg);
    require_valid(bundle);
    if (cfg.mode != SolverMode::full && cfg.mode != SolverMode::bpl1 &&
        cfg.mode != SolverMode::no_ambiguity)
        throw ValidationError("fit_competitive_bpl: mode must be full, bpl1, or no_ambiguity");
    if (bundle.q < 2)
        throw ValidationError("fit_competitive_bpl: needs at least two unseen classes");
    detail::require_synth_consistent(synth, bundle.d, bundle.q);

    DatasetBundle holder;
    Matrix synth_holder;
    const DatasetBundle* b = &bundle;
    const Matrix* x_g = &synth.features;
    if (cfg.normalize_inputs) {
        holder = normalized_inputs(bundle);
        b = &holder;
        synth_holder = l2_normalized_columns(synth.features);
        x_g = &synth_holder;
    }

    SeenStats st = compute_seen_stats(*b);
    NormalEquations ne0 =
        assemble_from_stats(st, b->unseen_prototypes, Matrix(), Matrix(), 0.0, 0.0, cfg.beta);
    Matrix w0 = solve_sylvester(ne0.A, ne0.B, ne0.C);

    auto assemble = [&](const Matrix& delta, double alpha_t, double mu_eff) {
        return assemble_from_stats(st, b->unseen_prototypes, *x_g, delta, alpha_t, mu_eff,
                                   cfg.beta);
    };
    auto objective = [&](const Matrix& w, double mu_eff, double alpha_t) {
        return objective_value(w, *b, *x_g, mu_eff, alpha_t, cfg.beta);
    };
    auto loop = detail::competitive_loop(std::move(w0), *x_g, b->unseen_prototypes,
                                         synth.guiding_class, cfg, assemble, objective,
                                         observer);
    return {std::move(loop.w), std::move(loop.weights), std::move(loop.trace)};
}

/// Forward-only ridge fit: (sum x x^T + beta I) W = sum x y^T.
inline Matrix fit_fpl(const DatasetBundle& bundle, const SolverConfig& cfg) {
    require_valid(cfg);
    require_valid(bundle);
    DatasetBundle holder;
    const DatasetBundle* b = &bundle;
    if (cfg.normalize_inputs) {
        holder = normalized_inputs(bundle);
        b = &holder;
    }
    SeenStats st = compute_seen_stats(*b);
    Matrix a = st.sxx;
    add_diagonal(a, cfg.beta);
    auto sol = gauss_solve(std::move(a), st.sxy);
    if (!sol) throw DecompositionError("fit_fpl: normal equations are singular");
    return *std::move(sol);
}

/// Reverse-only ridge fit: W = (sum x y^T)(sum y y^T + beta I)^{-1}.
inline Matrix fit_rpl(const DatasetBundle& bundle, const SolverConfig& cfg) {
    require_valid(cfg);
    require_valid(bundle);
    DatasetBundle holder;
    const DatasetBundle* b = &bundle;
    if (cfg.normalize_inputs) {
        holder = normalized_inputs(bundle);
        b = &holder;
    }
    SeenStats st = compute_seen_stats(*b);
    Matrix m = st.syy;
    add_diagonal(m, cfg.beta);
    auto sol = gauss_solve(std::move(m), transpose(st.sxy));
    if (!sol) throw DecompositionError("fit_rpl: normal equations are singular");
    return transpose(*sol);
}

// ---------------------------------------------------------------------------
// Entropy-regularized baseline (gradient descent).

struct EntropyStep {
    double objective = 0.0;
    double mean_entropy = 0.0;
    double lr = 0.0;
};

/// Softmax responsibilities P(j | x_i) = exp(-f_ij) / sum_l exp(-f_il),
/// computed with a per-row shift for stability.
inline Matrix softmax_rows_of_negated(const Matrix& f) {
    Matrix p(f.rows, f.cols);
    for (int i = 0; i < f.rows; ++i) {
        double m = f.at(i, 0);
        for (int j = 1; j < f.cols; ++j) m = std::min(m, f.at(i, j));
        double denom = 0.0;
        for (int j = 0; j < f.cols; ++j) {
            double e = std::exp(-(f.at(i, j) - m));
            p.at(i, j) = e;
            denom += e;
        }
        for (int j = 0; j < f.cols; ++j) p.at(i, j) /= denom;
    }
    return p;
}

struct EntropyEval {
    double value = 0.0;
    double mean_entropy = 0.0;
};

/// Seen reconstruction + 2 nu ||W||^2 + gamma * sum_i H(P(.|x_i)) with P
/// the softmax of negated losses over the columns of x_g vs y_u.
inline EntropyEval entropy_objective(const Matrix& w, const SeenStats& st, const Matrix& x_g,
                                     const Matrix& y_u, double gamma, double nu) {
    double seen = quadratic_reconstruction_value(w, st);
    Matrix p = softmax_rows_of_negated(loss_matrix(w, x_g, y_u));
    double total_entropy = 0.0;
    for (double v : p.data)
        if (v > 0.0) total_entropy -= v * std::log(v);
    double fro = frobenius_norm(w);
    return {seen + gamma * total_entropy + 2.0 * nu * fro * fro,
            total_entropy / static_cast<double>(p.rows)};
}

/// Analytic gradient of entropy_objective. The entropy term's dependence on
/// f_im enters through G_im = P_im (log P_im + H_i); each row of G sums to
/// zero, which cancels the x x^T contribution exactly.
inline Matrix entropy_gradient(const Matrix& w, const SeenStats& st, const Matrix& x_g,
                               const Matrix& y_u, double gamma, double nu) {
    Matrix g = scale(matmul(st.sxx, w), 2.0);
    axpy(g, 2.0, matmul(w, st.syy));
    axpy(g, -4.0, st.sxy);
    axpy(g, 4.0 * nu, w);
    Matrix p = softmax_rows_of_negated(loss_matrix(w, x_g, y_u));
    Matrix gw(p.rows, p.cols);
    std::vector<double> col_sums(p.cols, 0.0);
    for (int i = 0; i < p.rows; ++i) {
        double h = 0.0;
        for (int j = 0; j < p.cols; ++j) {
            double v = p.at(i, j);
            if (v > 0.0) h -= v * std::log(v);
        }
        for (int j = 0; j < p.cols; ++j) {
            double v = p.at(i, j);
            double entry = v > 0.0 ? v * (std::log(v) + h) : 0.0;
            gw.at(i, j) = entry;
            col_sums[j] += entry;
        }
    }
    axpy(g, 2.0 * gamma, matmul(w, accumulate_gram(y_u, &col_sums)));
    axpy(g, -4.0 * gamma, cross_product(matmul(x_g, gw), y_u));
    return g;
}

/// Minimizes seen reconstruction + 2 nu ||W||^2 + gamma * sum_i H(P(.|x_i))
/// by gradient descent with per-step backtracking (each rejected increase
/// halves the step; more than ten halvings in one step raises). gamma =
/// alpha/(1-alpha), nu = beta/(1-alpha). Initialized at the seen-only fit.
inline Matrix fit_entropy_baseline(const DatasetBundle& bundle, const SynthSet& synth,
                                   const SolverConfig& cfg,
                                   std::vector<EntropyStep>* steps_out = nullptr) {
    require_valid(cfg);
    require_valid(bundle);
    detail::require_synth_consistent(synth, bundle.d, bundle.q);

    DatasetBundle holder;
    Matrix synth_holder;
    const DatasetBundle* b = &bundle;
    const Matrix* x_g = &synth.features;
    if (cfg.normalize_inputs) {
        holder = normalized_inputs(bundle);
        b = &holder;
        synth_holder = l2_normalized_columns(synth.features);
        x_g = &synth_holder;
    }
    const double gamma = cfg.alpha / (1.0 - cfg.alpha);
    const double nu = cfg.beta / (1.0 - cfg.alpha);
    const Matrix& y_u = b->unseen_prototypes;

    SeenStats st = compute_seen_stats(*b);
    NormalEquations ne0 =
        assemble_from_stats(st, y_u, Matrix(), Matrix(), 0.0, 0.0, cfg.beta);
    Matrix w = solve_sylvester(ne0.A, ne0.B, ne0.C);
    EntropyEval cur = entropy_objective(w, st, *x_g, y_u, gamma, nu);
    double lr = cfg.entropy_lr;
    for (int step = 0; step < cfg.entropy_steps; ++step) {
        Matrix g = entropy_gradient(w, st, *x_g, y_u, gamma, nu);
        if (frobenius_norm(g) <= 1e-14 * (1.0 + frobenius_norm(w))) break;
        int halvings = 0;
        while (true) {
            Matrix cand = w;
            axpy(cand, -lr, g);
            EntropyEval next = entropy_objective(cand, st, *x_g, y_u, gamma, nu);
            if (next.value <= cur.value) {
                w = std::move(cand);
                cur = next;
                break;
            }
            if (++halvings > 10)
                throw StepSizeError(
                    "fit_entropy_baseline: objective still increasing after 10 step halvings");
            lr *= 0.5;
        }
        if (steps_out) steps_out->push_back({cur.value, cur.mean_entropy, lr});
    }
    return w;
}

}  // namespace bpl
