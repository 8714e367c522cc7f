#pragma once

// Nearest-prototype classification and the evaluation metrics reported by
// the CLI: per-class top-1, flat hit@k, and the seen/unseen/harmonic-mean
// triple for generalized evaluation.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpl/dataset.hpp"
#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"

namespace bpl {

struct ClassCount {
    int correct = 0;
    int total = 0;
};

struct MetricsReport {
    double per_class_top1 = 0.0;
    std::map<int, double> hit_at;           // k -> flat hit@k
    std::optional<double> acc_s;
    std::optional<double> acc_u;
    std::optional<double> hm;
    std::map<int, ClassCount> confusion;    // global class id -> counts
};

inline double harmonic_mean(double a, double b) {
    if (a < 0.0 || b < 0.0) throw ValidationError("harmonic_mean: rates must be nonnegative");
    double sum = a + b;
    return sum > 0.0 ? 2.0 * a * b / sum : 0.0;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["per_class_top1"] = r.per_class_top1;
    nlohmann::json hits = nlohmann::json::object();
    for (const auto& [k, rate] : r.hit_at) hits[std::to_string(k)] = rate;
    j["hit_at"] = hits;
    if (r.acc_s) j["acc_s"] = *r.acc_s;
    if (r.acc_u) j["acc_u"] = *r.acc_u;
    if (r.hm) j["hm"] = *r.hm;
    nlohmann::json confusion = nlohmann::json::object();
    for (const auto& [cls, counts] : r.confusion) {
        confusion[std::to_string(cls)] = {{"correct", counts.correct},
                                          {"total", counts.total}};
    }
    j["confusion"] = confusion;
    return j;
}

/// Squared distances ||x_i - W y_j||^2 between every test column and every
/// projected prototype column; rows index samples, columns index classes.
inline Matrix projection_distances(const Matrix& w, const Matrix& x, const Matrix& y) {
    if (w.rows != x.rows) throw DimensionError("projection_distances: feature rows mismatch");
    if (w.cols != y.rows) throw DimensionError("projection_distances: prototype rows mismatch");
    Matrix wy = matmul(w, y);
    Matrix dist(x.cols, y.cols);
    for (int i = 0; i < x.cols; ++i)
        for (int j = 0; j < y.cols; ++j) {
            double total = 0.0;
            for (int r = 0; r < x.rows; ++r) {
                double diff = x.at(r, i) - wy.at(r, j);
                total += diff * diff;
            }
            dist.at(i, j) = total;
        }
    return dist;
}

/// Per sample, the column index of the nearest projected prototype (ties go
/// to the lowest index). For generalized evaluation pass the concatenation
/// of seen and unseen prototype columns.
inline std::vector<int> classify_nearest_prototype(const Matrix& w, const Matrix& x,
                                                   const Matrix& y) {
    Matrix dist = projection_distances(w, x, y);
    std::vector<int> pred(x.cols);
    for (int i = 0; i < x.cols; ++i) {
        int best = 0;
        for (int j = 1; j < y.cols; ++j)
            if (dist.at(i, j) < dist.at(i, best)) best = j;
        pred[i] = best;
    }
    return pred;
}

/// Mean over classes of the within-class accuracy. Classes in class_set
/// that never occur in truth are excluded from the mean.
inline double per_class_top1(const std::vector<int>& pred, const std::vector<int>& truth,
                             const std::vector<int>& class_set) {
    if (pred.size() != truth.size())
        throw DimensionError("per_class_top1: prediction/truth length mismatch");
    if (truth.empty()) throw UndefinedMetricError("per_class_top1: no test samples");
    std::set<int> allowed(class_set.begin(), class_set.end());
    std::map<int, ClassCount> counts;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (allowed.find(truth[i]) == allowed.end())
            throw ValidationError("per_class_top1: truth label outside the class set");
        ClassCount& c = counts[truth[i]];
        ++c.total;
        if (pred[i] == truth[i]) ++c.correct;
    }
    double sum = 0.0;
    for (const auto& [cls, c] : counts)
        sum += static_cast<double>(c.correct) / static_cast<double>(c.total);
    return sum / static_cast<double>(counts.size());
}

/// Fraction of samples whose true class is among the k nearest columns of
/// the distance matrix; boundary ties are broken by lowest class index.
inline double hit_at_k(const Matrix& distances, const std::vector<int>& truth, int k) {
    const int classes = distances.cols;
    if (k < 1 || k > classes)
        throw ValidationError("hit_at_k: k must be between 1 and the class count");
    if (static_cast<int>(truth.size()) != distances.rows)
        throw DimensionError("hit_at_k: truth length must match the sample count");
    if (truth.empty()) throw UndefinedMetricError("hit_at_k: no test samples");
    int hits = 0;
    for (int i = 0; i < distances.rows; ++i) {
        int t = truth[i];
        if (t < 0 || t >= classes)
            throw ValidationError("hit_at_k: truth label outside the class range");
        double dt = distances.at(i, t);
        int rank = 0;
        for (int j = 0; j < classes; ++j) {
            if (j == t) continue;
            double dj = distances.at(i, j);
            if (dj < dt || (dj == dt && j < t)) ++rank;
        }
        if (rank < k) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(distances.rows);
}

namespace detail {

inline std::map<int, ClassCount> confusion_counts(const std::vector<int>& pred,
                                                  const std::vector<int>& truth) {
    std::map<int, ClassCount> counts;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ClassCount& c = counts[truth[i]];
        ++c.total;
        if (pred[i] == truth[i]) ++c.correct;
    }
    return counts;
}

inline std::optional<double> subset_per_class(const std::vector<int>& pred,
                                              const std::vector<int>& truth,
                                              const std::vector<int>& subset) {
    std::set<int> members(subset.begin(), subset.end());
    std::vector<int> sp, st;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (members.find(truth[i]) != members.end()) {
            sp.push_back(pred[i]);
            st.push_back(truth[i]);
        }
    if (st.empty()) return std::nullopt;
    // Predictions may land anywhere in the joint class set; only the truth
    // labels need to lie in the subset, so average the within-class rates
    // directly.
    std::map<int, ClassCount> counts = confusion_counts(sp, st);
    double sum = 0.0;
    for (const auto& [cls, c] : counts)
        sum += static_cast<double>(c.correct) / static_cast<double>(c.total);
    return sum / static_cast<double>(counts.size());
}

}  // namespace detail

/// Generalized evaluation over predictions against the joint class set:
/// per-class rates within the seen-origin and unseen-origin subsets plus
/// their harmonic mean. A rate (and the mean) is absent when its subset has
/// no test samples.
inline MetricsReport generalized_report(const std::vector<int>& pred,
                                        const std::vector<int>& truth,
                                        const std::vector<int>& seen_set,
                                        const std::vector<int>& unseen_set) {
    if (pred.size() != truth.size())
        throw DimensionError("generalized_report: prediction/truth length mismatch");
    if (truth.empty()) throw UndefinedMetricError("generalized_report: no test samples");
    std::vector<int> all = seen_set;
    all.insert(all.end(), unseen_set.begin(), unseen_set.end());
    MetricsReport r;
    r.per_class_top1 = per_class_top1(pred, truth, all);
    r.confusion = detail::confusion_counts(pred, truth);
    r.acc_s = detail::subset_per_class(pred, truth, seen_set);
    r.acc_u = detail::subset_per_class(pred, truth, unseen_set);
    if (r.acc_s && r.acc_u) r.hm = harmonic_mean(*r.acc_s, *r.acc_u);
    return r;
}

/// Unseen-classes-only evaluation of a fitted projection on a bundle with
/// test data: per-class top-1 plus flat hit@k for each requested k.
inline MetricsReport evaluate_pure(const Matrix& w, const DatasetBundle& b,
                                   const std::vector<int>& hit_ks = {}) {
    require_valid(b);
    if (!b.test_features) throw ValidationError("evaluate_pure: bundle has no test data");
    for (int label : *b.test_labels)
        if (label < b.p) throw ValidationError("evaluate_pure: test labels must be unseen classes");
    Matrix dist = projection_distances(w, *b.test_features, b.unseen_prototypes);
    std::vector<int> pred(dist.rows);
    for (int i = 0; i < dist.rows; ++i) {
        int best = 0;
        for (int j = 1; j < dist.cols; ++j)
            if (dist.at(i, j) < dist.at(i, best)) best = j;
        pred[i] = b.p + best;  // back to global class ids
    }
    std::vector<int> classes(b.q);
    for (int j = 0; j < b.q; ++j) classes[j] = b.p + j;
    MetricsReport r;
    r.per_class_top1 = per_class_top1(pred, *b.test_labels, classes);
    r.confusion = detail::confusion_counts(pred, *b.test_labels);
    std::vector<int> local_truth(b.test_labels->size());
    for (std::size_t i = 0; i < local_truth.size(); ++i)
        local_truth[i] = (*b.test_labels)[i] - b.p;
    for (int k : hit_ks) r.hit_at[k] = hit_at_k(dist, local_truth, k);
    return r;
}

/// Generalized evaluation of a fitted projection: test samples are
/// classified against the concatenation of seen and unseen prototypes.
inline MetricsReport evaluate_generalized(const Matrix& w, const DatasetBundle& b) {
    require_valid(b);
    if (!b.test_features)
        throw ValidationError("evaluate_generalized: bundle has no test data");
    Matrix joint(b.k, b.p + b.q);
    for (int r = 0; r < b.k; ++r) {
        for (int c = 0; c < b.p; ++c) joint.at(r, c) = b.seen_prototypes.at(r, c);
        for (int c = 0; c < b.q; ++c) joint.at(r, b.p + c) = b.unseen_prototypes.at(r, c);
    }
    std::vector<int> pred = classify_nearest_prototype(w, *b.test_features, joint);
    std::vector<int> seen_set(b.p), unseen_set(b.q);
    for (int c = 0; c < b.p; ++c) seen_set[c] = c;
    for (int c = 0; c < b.q; ++c) unseen_set[c] = b.p + c;
    return generalized_report(pred, *b.test_labels, seen_set, unseen_set);
}

}  // namespace bpl
