#pragma once

// Feature synthesis by perturbation. ZSL: real seen-class samples are shifted
// along the projected prototype offset toward an unseen class. FSL: the
// intra-class offsets of the few real shots are re-centred on the projected
// (noise-perturbed) novel prototype.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "bpl/dataset.hpp"
#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"
#include "bpl/rng.hpp"

namespace bpl {

struct SynthSet {
    Matrix features;                 // d x N_g
    std::vector<int> guiding_class;  // local unseen/novel index in [0, q)
    std::vector<int> source_index;   // originating real sample column

    int count() const { return features.empty() ? 0 : features.cols; }
};

struct SynthConfig {
    double rho = 0.5;                // perturbation step, (0, 1]
    int k_g = 3;                     // neighbour count
    int samples_per_neighbour = 5;   // per (unseen class, neighbour) budget
    double fsl_noise_sigma = 0.1;    // multiplier on the novel prototype spread
    int fsl_copies_per_shot = 5;     // copies synthesized per real shot
    std::uint64_t seed = 0;
};

inline void require_valid(const SynthConfig& c) {
    if (!(c.rho > 0.0) || !(c.rho <= 1.0))
        throw ValidationError("synth config: rho must be in (0, 1]");
    if (c.k_g < 1) throw ValidationError("synth config: k_g must be >= 1");
    if (c.samples_per_neighbour < 1)
        throw ValidationError("synth config: samples_per_neighbour must be >= 1");
    if (!(c.fsl_noise_sigma >= 0.0))
        throw ValidationError("synth config: fsl_noise_sigma must be >= 0");
    if (c.fsl_copies_per_shot < 1)
        throw ValidationError("synth config: fsl_copies_per_shot must be >= 1");
}

/// Indices of the k_g seen prototypes closest (Euclidean) to y_u, nearest
/// first, ties broken by lower class index.
inline std::vector<int> knn_prototypes(const std::vector<double>& y_u, const Matrix& y_s,
                                       int k_g) {
    if (static_cast<int>(y_u.size()) != y_s.rows)
        throw DimensionError("knn_prototypes: query length differs from prototype rows");
    if (k_g < 1) throw ValidationError("knn_prototypes: k_g must be >= 1");
    if (k_g > y_s.cols)
        throw ValidationError("knn_prototypes: k_g (" + std::to_string(k_g) +
                              ") exceeds class count (" + std::to_string(y_s.cols) + ")");
    std::vector<std::pair<double, int>> order(y_s.cols);
    for (int c = 0; c < y_s.cols; ++c) {
        double dist = 0.0;
        for (int r = 0; r < y_s.rows; ++r) {
            double diff = y_u[r] - y_s.at(r, c);
            dist += diff * diff;
        }
        order[c] = {dist, c};
    }
    std::sort(order.begin(), order.end());
    std::vector<int> out(k_g);
    for (int i = 0; i < k_g; ++i) out[i] = order[i].second;
    return out;
}

namespace detail {

inline std::vector<double> column_vector(const Matrix& m, int col) {
    std::vector<double> out(m.rows);
    for (int r = 0; r < m.rows; ++r) out[r] = m.at(r, col);
    return out;
}

}  // namespace detail

/// Unseen-class features from perturbed seen samples. Per unseen class j, the
/// k_g nearest seen classes each contribute samples_per_neighbour drawn
/// samples (without replacement when the class is large enough), shifted by
/// rho * W (y_j - y_neighbour) / ||W||_F^2. The per-class budget of
/// k_g * samples_per_neighbour is redistributed over the nonempty neighbour
/// classes (nearest first) when some neighbour has no samples.
inline SynthSet synthesize_zsl(const DatasetBundle& b, const Matrix& w,
                               const SynthConfig& cfg) {
    require_valid(cfg);
    if (w.rows != b.d || w.cols != b.k)
        throw DimensionError("synthesize_zsl: projection must be d x k");
    double fro = frobenius_norm(w);
    if (fro == 0.0) throw DegenerateProjectionError("synthesize_zsl: projection is zero");
    const double step = cfg.rho / (fro * fro);

    std::vector<std::vector<int>> by_class(b.p);
    for (int s = 0; s < b.seen_features.cols; ++s) by_class[b.seen_labels[s]].push_back(s);

    const int budget = cfg.k_g * cfg.samples_per_neighbour;
    SynthSet out;
    out.features = Matrix(b.d, b.q * budget);
    out.guiding_class.reserve(static_cast<std::size_t>(b.q) * budget);
    out.source_index.reserve(static_cast<std::size_t>(b.q) * budget);

    int col = 0;
    for (int j = 0; j < b.q; ++j) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(j)));
        auto y_target = detail::column_vector(b.unseen_prototypes, j);
        auto neighbours = knn_prototypes(y_target, b.seen_prototypes, cfg.k_g);

        std::vector<int> usable;
        for (int nb : neighbours) {
            if (by_class[nb].empty())
                std::cerr << "warning: seen class " << nb
                          << " has no samples; redistributing its synthesis budget\n";
            else
                usable.push_back(nb);
        }
        if (usable.empty())
            throw ValidationError("synthesize_zsl: no neighbour of unseen class " +
                                  std::to_string(j) + " has any samples");
        const int share = budget / static_cast<int>(usable.size());
        const int extra = budget % static_cast<int>(usable.size());

        for (std::size_t u = 0; u < usable.size(); ++u) {
            int nb = usable[u];
            int want = share + (static_cast<int>(u) < extra ? 1 : 0);
            if (want == 0) continue;
            // Offset shared by every sample drawn for this (j, neighbour) pair.
            std::vector<double> offset(b.d, 0.0);
            for (int r = 0; r < b.d; ++r) {
                double acc = 0.0;
                for (int c = 0; c < b.k; ++c)
                    acc += w.at(r, c) * (y_target[c] - b.seen_prototypes.at(c, nb));
                offset[r] = step * acc;
            }
            const auto& pool = by_class[nb];
            std::vector<int> chosen(want);
            if (static_cast<int>(pool.size()) >= want) {
                auto picks = rng.sample_without_replacement(pool.size(), want);
                for (int i = 0; i < want; ++i) chosen[i] = pool[picks[i]];
            } else {
                for (int i = 0; i < want; ++i) chosen[i] = pool[rng.uniform_index(pool.size())];
            }
            for (int src : chosen) {
                for (int r = 0; r < b.d; ++r)
                    out.features.at(r, col) = b.seen_features.at(r, src) + offset[r];
                out.guiding_class.push_back(j);
                out.source_index.push_back(src);
                ++col;
            }
        }
    }
    return out;
}

/// Novel-class features from the few real shots: each shot's intra-class
/// offset (x_i - mean of its class's shots) is added to the projected,
/// noise-perturbed prototype rho * W (y_j + eps) / ||W||_F^2, with eps drawn
/// fresh per copy. The noise scale is fsl_noise_sigma times the mean
/// per-dimension spread of the novel prototypes.
inline SynthSet synthesize_fsl(const FSLBundle& f, const Matrix& w, const SynthConfig& cfg) {
    require_valid(cfg);
    const DatasetBundle& b = f.base;
    if (w.rows != b.d || w.cols != b.k)
        throw DimensionError("synthesize_fsl: projection must be d x k");
    double fro = frobenius_norm(w);
    if (fro == 0.0) throw DegenerateProjectionError("synthesize_fsl: projection is zero");
    const double step = cfg.rho / (fro * fro);

    // Noise scale tied to the novel prototype spread (population std per
    // semantic dimension, averaged over dimensions).
    double spread = 0.0;
    for (int r = 0; r < b.k; ++r) {
        double mean = 0.0;
        for (int c = 0; c < b.q; ++c) mean += b.unseen_prototypes.at(r, c);
        mean /= b.q;
        double var = 0.0;
        for (int c = 0; c < b.q; ++c) {
            double diff = b.unseen_prototypes.at(r, c) - mean;
            var += diff * diff;
        }
        spread += std::sqrt(var / b.q);
    }
    const double sigma = cfg.fsl_noise_sigma * (spread / b.k);

    std::vector<std::vector<int>> shots(b.q);
    for (int s = 0; s < f.support_features.cols; ++s)
        shots[f.support_labels[s] - b.p].push_back(s);

    const int total = b.q * f.shots * cfg.fsl_copies_per_shot;
    SynthSet out;
    out.features = Matrix(b.d, total);
    out.guiding_class.reserve(total);
    out.source_index.reserve(total);

    std::vector<double> mean(b.d), perturbed(b.k);
    int col = 0;
    for (int j = 0; j < b.q; ++j) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(j)));
        const auto& cls = shots[j];
        for (int r = 0; r < b.d; ++r) {
            double acc = 0.0;
            for (int s : cls) acc += f.support_features.at(r, s);
            mean[r] = acc / static_cast<double>(cls.size());
        }
        for (int s : cls) {
            for (int copy = 0; copy < cfg.fsl_copies_per_shot; ++copy) {
                if (sigma > 0.0)
                    for (int c = 0; c < b.k; ++c)
                        perturbed[c] = b.unseen_prototypes.at(c, j) + sigma * rng.gaussian();
                else
                    for (int c = 0; c < b.k; ++c) perturbed[c] = b.unseen_prototypes.at(c, j);
                for (int r = 0; r < b.d; ++r) {
                    double acc = 0.0;
                    for (int c = 0; c < b.k; ++c) acc += w.at(r, c) * perturbed[c];
                    out.features.at(r, col) =
                        (f.support_features.at(r, s) - mean[r]) + step * acc;
                }
                out.guiding_class.push_back(j);
                out.source_index.push_back(s);
                ++col;
            }
        }
    }
    return out;
}

}  // namespace bpl
