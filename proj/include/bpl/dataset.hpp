#pragma once

// Dataset bundles on disk: a directory holding manifest.json plus one binary
// matrix file per array. Matrix files use the "ZSLB" format: 4 magic bytes,
// little-endian u32 rows and cols, then rows*cols little-endian f64 values in
// row-major order. Integer label vectors are stored as 1xN f64 matrices.
//
// Class ids are global: seen/base classes are 0..p-1, unseen/novel classes
// are p..p+q-1. Test and support labels use these global ids.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"
#include "bpl/rng.hpp"

namespace bpl {

enum class SplitKind { pure_zsl, generalized_zsl, fsl };

inline std::string to_string(SplitKind s) {
    switch (s) {
        case SplitKind::pure_zsl: return "pure_zsl";
        case SplitKind::generalized_zsl: return "generalized_zsl";
        case SplitKind::fsl: return "fsl";
    }
    throw ValidationError("unknown split kind");
}

inline SplitKind split_kind_from_string(const std::string& s) {
    if (s == "pure_zsl") return SplitKind::pure_zsl;
    if (s == "generalized_zsl") return SplitKind::generalized_zsl;
    if (s == "fsl") return SplitKind::fsl;
    throw ParseError("unknown split kind \"" + s + "\"");
}

struct DatasetBundle {
    int d = 0;  // feature dimension
    int k = 0;  // semantic dimension
    int p = 0;  // seen/base class count
    int q = 0;  // unseen/novel class count
    SplitKind split_kind = SplitKind::pure_zsl;
    Matrix seen_features;               // d x N_s
    std::vector<int> seen_labels;       // values in [0, p)
    Matrix seen_prototypes;             // k x p
    Matrix unseen_prototypes;           // k x q
    std::optional<Matrix> test_features;           // d x N_t
    std::optional<std::vector<int>> test_labels;   // global class ids
};

// Few-shot bundle: the base classes play the seen role inside `base`, the
// novel prototypes sit in base.unseen_prototypes, and base's test fields
// cover the novel classes. Support labels are global ids in [p, p+q).
struct FSLBundle {
    DatasetBundle base;
    Matrix support_features;          // d x (shots*q)
    std::vector<int> support_labels;  // values in [p, p+q)
    int shots = 0;                    // K

    const Matrix& novel_prototypes() const { return base.unseen_prototypes; }
};

using LoadedBundle = std::variant<DatasetBundle, FSLBundle>;

// ---------------------------------------------------------------------------
// Binary matrix files.

namespace detail {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u32_le(std::istream& is, std::uint32_t& out) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    out = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
          (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

inline void put_f64_le(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_f64_le(std::istream& is, double& out) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    std::memcpy(&out, &bits, 8);
    return true;
}

}  // namespace detail

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    if (m.empty()) throw ValidationError("save_matrix: empty matrix");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("ZSLB", 4);
    detail::put_u32_le(os, static_cast<std::uint32_t>(m.rows));
    detail::put_u32_le(os, static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) detail::put_f64_le(os, v);
    if (!os) throw IoError("write failed: " + path.string());
}

inline Matrix load_matrix(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("matrix file not found: " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "ZSLB", 4) != 0)
        throw FormatError("bad magic bytes (expected ZSLB): " + path.string());
    std::uint32_t rows = 0, cols = 0;
    if (!detail::get_u32_le(is, rows) || !detail::get_u32_le(is, cols))
        throw FormatError("truncated header: " + path.string());
    if (rows == 0 || cols == 0) throw FormatError("zero dimension: " + path.string());
    std::uint64_t count = static_cast<std::uint64_t>(rows) * cols;
    if (count > (1ull << 31)) throw FormatError("matrix too large: " + path.string());
    std::vector<double> values(count);
    for (std::uint64_t i = 0; i < count; ++i)
        if (!detail::get_f64_le(is, values[i]))
            throw FormatError("truncated payload: " + path.string());
    char extra;
    if (is.read(&extra, 1)) throw FormatError("trailing bytes: " + path.string());
    try {
        return Matrix::from_data(static_cast<int>(rows), static_cast<int>(cols),
                                 std::move(values));
    } catch (const ValidationError&) {
        throw FormatError("non-finite entry: " + path.string());
    }
}

inline void save_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
    Matrix m(1, static_cast<int>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) m.data[i] = static_cast<double>(labels[i]);
    save_matrix(path, m);
}

/// Loads a 1xN label matrix and checks every value is an integer in
/// [lo, hi). Range violations are validation errors (bad content in a
/// structurally sound file); everything else is a format error.
inline std::vector<int> load_labels(const std::filesystem::path& path, int lo, int hi,
                                    const std::string& what) {
    Matrix m = load_matrix(path);
    if (m.rows != 1) throw FormatError(what + ": label file must have one row");
    std::vector<int> out(m.cols);
    for (int i = 0; i < m.cols; ++i) {
        double v = m.data[i];
        if (v != std::floor(v) || std::fabs(v) > 1e9)
            throw FormatError(what + ": label is not an integer");
        int label = static_cast<int>(v);
        if (label < lo || label >= hi)
            throw ValidationError(what + ": label " + std::to_string(label) +
                                  " out of range [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + ")");
        out[i] = label;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation.

namespace detail {

inline void require_label_range(const std::vector<int>& labels, int lo, int hi,
                                const std::string& what) {
    for (int v : labels)
        if (v < lo || v >= hi)
            throw ValidationError(what + ": label " + std::to_string(v) + " out of range [" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + ")");
}

inline void require_nonzero_columns(const Matrix& m, const std::string& what) {
    for (int c = 0; c < m.cols; ++c) {
        bool nonzero = false;
        for (int r = 0; r < m.rows && !nonzero; ++r) nonzero = m.at(r, c) != 0.0;
        if (!nonzero)
            throw ValidationError(what + ": column " + std::to_string(c) + " is all zero");
    }
}

}  // namespace detail

inline void require_valid(const DatasetBundle& b) {
    if (b.d < 1 || b.k < 1 || b.p < 1 || b.q < 1)
        throw ValidationError("bundle: d, k, p, q must all be positive");
    if (b.seen_features.rows != b.d) throw DimensionError("bundle: seen_features rows != d");
    if (static_cast<int>(b.seen_labels.size()) != b.seen_features.cols)
        throw DimensionError("bundle: seen label count != seen sample count");
    if (b.seen_prototypes.rows != b.k || b.seen_prototypes.cols != b.p)
        throw DimensionError("bundle: seen_prototypes must be k x p");
    if (b.unseen_prototypes.rows != b.k || b.unseen_prototypes.cols != b.q)
        throw DimensionError("bundle: unseen_prototypes must be k x q");
    if (b.test_features.has_value() != b.test_labels.has_value())
        throw ValidationError("bundle: test features and labels must be present together");
    detail::require_label_range(b.seen_labels, 0, b.p, "seen_labels");
    if (b.test_features) {
        if (b.test_features->rows != b.d) throw DimensionError("bundle: test_features rows != d");
        if (static_cast<int>(b.test_labels->size()) != b.test_features->cols)
            throw DimensionError("bundle: test label count != test sample count");
        int lo = (b.split_kind == SplitKind::generalized_zsl) ? 0 : b.p;
        detail::require_label_range(*b.test_labels, lo, b.p + b.q, "test_labels");
    }
    detail::require_nonzero_columns(b.seen_prototypes, "seen_prototypes");
    detail::require_nonzero_columns(b.unseen_prototypes, "unseen_prototypes");
}

/// Checks only the support-set side of an FSL bundle. Cost is linear in the
/// support size; the base bundle is not rescanned, so per-episode callers
/// stay independent of the base sample count.
inline void require_valid_support(const FSLBundle& f) {
    if (f.base.split_kind != SplitKind::fsl)
        throw ValidationError("fsl bundle: split_kind must be fsl");
    if (f.shots < 1) throw ValidationError("fsl bundle: shots must be >= 1");
    if (f.support_features.rows != f.base.d)
        throw DimensionError("fsl bundle: support_features rows != d");
    if (static_cast<int>(f.support_labels.size()) != f.support_features.cols)
        throw DimensionError("fsl bundle: support label count != support sample count");
    detail::require_label_range(f.support_labels, f.base.p, f.base.p + f.base.q,
                                "support_labels");
    std::vector<int> per_class(f.base.q, 0);
    for (int v : f.support_labels) per_class[v - f.base.p]++;
    for (int j = 0; j < f.base.q; ++j)
        if (per_class[j] != f.shots)
            throw ValidationError("fsl bundle: novel class " + std::to_string(f.base.p + j) +
                                  " has " + std::to_string(per_class[j]) + " shots, expected " +
                                  std::to_string(f.shots));
}

inline void require_valid(const FSLBundle& f) {
    require_valid(f.base);
    require_valid_support(f);
}

// ---------------------------------------------------------------------------
// Bundle directories.

namespace detail {

inline int manifest_int(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number_integer())
        throw FormatError(std::string("manifest: missing or non-integer key \"") + key + "\"");
    long long v = j[key].get<long long>();
    if (v < 0 || v > std::numeric_limits<int>::max())
        throw FormatError(std::string("manifest: key \"") + key + "\" out of range");
    return static_cast<int>(v);
}

inline std::string manifest_string(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_string())
        throw FormatError(std::string("manifest: missing or non-string key \"") + key + "\"");
    return j[key].get<std::string>();
}

inline std::optional<std::filesystem::path> manifest_file(const nlohmann::json& files,
                                                          const std::filesystem::path& dir,
                                                          const char* key, bool required) {
    if (!files.contains(key)) {
        if (required)
            throw FormatError(std::string("manifest: files map is missing \"") + key + "\"");
        return std::nullopt;
    }
    if (!files[key].is_string())
        throw FormatError(std::string("manifest: files entry \"") + key + "\" is not a string");
    return dir / files[key].get<std::string>();
}

inline void check_matrix_shape(const Matrix& m, int rows, int cols, const std::string& what) {
    if (m.rows != rows || (cols > 0 && m.cols != cols))
        throw FormatError(what + ": file shape " + std::to_string(m.rows) + "x" +
                          std::to_string(m.cols) + " does not match the manifest (" +
                          std::to_string(rows) + "x" + (cols > 0 ? std::to_string(cols) : "*") +
                          ")");
}

}  // namespace detail

inline void save_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
    require_valid(b);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory: " + dir.string());
    nlohmann::json files;
    files["seen_features"] = "seen_features.zslb";
    files["seen_labels"] = "seen_labels.zslb";
    files["seen_prototypes"] = "seen_prototypes.zslb";
    files["unseen_prototypes"] = "unseen_prototypes.zslb";
    save_matrix(dir / "seen_features.zslb", b.seen_features);
    save_labels(dir / "seen_labels.zslb", b.seen_labels);
    save_matrix(dir / "seen_prototypes.zslb", b.seen_prototypes);
    save_matrix(dir / "unseen_prototypes.zslb", b.unseen_prototypes);
    if (b.test_features) {
        files["test_features"] = "test_features.zslb";
        files["test_labels"] = "test_labels.zslb";
        save_matrix(dir / "test_features.zslb", *b.test_features);
        save_labels(dir / "test_labels.zslb", *b.test_labels);
    }
    nlohmann::json j;
    j["d"] = b.d;
    j["k"] = b.k;
    j["p"] = b.p;
    j["q"] = b.q;
    j["split_kind"] = to_string(b.split_kind);
    j["files"] = files;
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + (dir / "manifest.json").string());
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + (dir / "manifest.json").string());
}

inline void save_bundle(const FSLBundle& f, const std::filesystem::path& dir) {
    require_valid(f);
    save_bundle(f.base, dir);
    save_matrix(dir / "support_features.zslb", f.support_features);
    save_labels(dir / "support_labels.zslb", f.support_labels);
    // Re-emit the manifest with the support entries and the shot count.
    std::ifstream is(dir / "manifest.json");
    nlohmann::json j = nlohmann::json::parse(is);
    j["K"] = f.shots;
    j["files"]["support_features"] = "support_features.zslb";
    j["files"]["support_labels"] = "support_labels.zslb";
    std::ofstream os(dir / "manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + (dir / "manifest.json").string());
    os << j.dump(2) << "\n";
    if (!os) throw IoError("write failed: " + (dir / "manifest.json").string());
}

inline LoadedBundle load_bundle(const std::filesystem::path& dir) {
    auto manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw NotFoundError("manifest not found: " + manifest_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
    }
    DatasetBundle b;
    b.d = detail::manifest_int(j, "d");
    b.k = detail::manifest_int(j, "k");
    b.p = detail::manifest_int(j, "p");
    b.q = detail::manifest_int(j, "q");
    b.split_kind = split_kind_from_string(detail::manifest_string(j, "split_kind"));
    if (!j.contains("files") || !j["files"].is_object())
        throw FormatError("manifest: missing files map");
    const nlohmann::json& files = j["files"];

    b.seen_features =
        load_matrix(*detail::manifest_file(files, dir, "seen_features", true));
    detail::check_matrix_shape(b.seen_features, b.d, -1, "seen_features");
    b.seen_labels = load_labels(*detail::manifest_file(files, dir, "seen_labels", true), 0,
                                b.p, "seen_labels");
    b.seen_prototypes =
        load_matrix(*detail::manifest_file(files, dir, "seen_prototypes", true));
    detail::check_matrix_shape(b.seen_prototypes, b.k, b.p, "seen_prototypes");
    b.unseen_prototypes =
        load_matrix(*detail::manifest_file(files, dir, "unseen_prototypes", true));
    detail::check_matrix_shape(b.unseen_prototypes, b.k, b.q, "unseen_prototypes");
    if (auto tf = detail::manifest_file(files, dir, "test_features", false)) {
        b.test_features = load_matrix(*tf);
        detail::check_matrix_shape(*b.test_features, b.d, -1, "test_features");
        int lo = (b.split_kind == SplitKind::generalized_zsl) ? 0 : b.p;
        b.test_labels = load_labels(*detail::manifest_file(files, dir, "test_labels", true), lo,
                                    b.p + b.q, "test_labels");
        if (static_cast<int>(b.test_labels->size()) != b.test_features->cols)
            throw FormatError("test_labels: count does not match test_features columns");
    }
    if (static_cast<int>(b.seen_labels.size()) != b.seen_features.cols)
        throw FormatError("seen_labels: count does not match seen_features columns");

    if (b.split_kind != SplitKind::fsl) {
        require_valid(b);
        return b;
    }
    FSLBundle f;
    f.base = std::move(b);
    f.shots = detail::manifest_int(j, "K");
    f.support_features =
        load_matrix(*detail::manifest_file(files, dir, "support_features", true));
    detail::check_matrix_shape(f.support_features, f.base.d, -1, "support_features");
    f.support_labels = load_labels(*detail::manifest_file(files, dir, "support_labels", true),
                                   f.base.p, f.base.p + f.base.q, "support_labels");
    if (static_cast<int>(f.support_labels.size()) != f.support_features.cols)
        throw FormatError("support_labels: count does not match support_features columns");
    require_valid(f);
    return f;
}

inline const DatasetBundle& as_zsl(const LoadedBundle& lb) {
    if (const auto* b = std::get_if<DatasetBundle>(&lb)) return *b;
    throw ValidationError("expected a ZSL bundle, found an FSL bundle");
}

inline const FSLBundle& as_fsl(const LoadedBundle& lb) {
    if (const auto* f = std::get_if<FSLBundle>(&lb)) return *f;
    throw ValidationError("expected an FSL bundle, found a ZSL bundle");
}

// ---------------------------------------------------------------------------
// Synthetic problems.

struct SyntheticSpec {
    int d = 0;
    int k = 0;
    int p = 0;
    int q = 0;
    int samples_per_class = 0;   // per seen class and per test class
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    SplitKind split_kind = SplitKind::pure_zsl;
    int shots = 1;  // support shots per novel class (fsl split only)
};

inline void require_valid(const SyntheticSpec& s) {
    if (s.d < 1 || s.k < 1 || s.p < 1 || s.q < 1 || s.samples_per_class < 1)
        throw ValidationError("synthetic spec: d, k, p, q, n must all be positive");
    if (!(s.noise_sigma >= 0.0) || !std::isfinite(s.noise_sigma))
        throw ValidationError("synthetic spec: noise_sigma must be >= 0");
    if (s.split_kind == SplitKind::fsl && s.shots < 1)
        throw ValidationError("synthetic spec: shots must be >= 1");
}

struct SyntheticProblem {
    LoadedBundle bundle;
    Matrix ground_truth_w;  // d x k
};

/// Deterministic generator. Draw order is fixed: prototype columns (class by
/// class), the ground-truth map, seen samples (class-major), support shots
/// (fsl only), then test samples (class-major). Prototype columns are
/// unit-normalized; features are x = W* y_class + noise_sigma * gaussian.
inline SyntheticProblem make_synthetic_problem(const SyntheticSpec& spec) {
    require_valid(spec);
    Rng rng(spec.seed);
    const int classes = spec.p + spec.q;

    Matrix y(spec.k, classes);
    for (int c = 0; c < classes; ++c) {
        double norm2 = 0.0;
        for (int r = 0; r < spec.k; ++r) {
            double v = rng.gaussian();
            y.at(r, c) = v;
            norm2 += v * v;
        }
        double norm = std::sqrt(norm2);
        if (norm < 1e-12) {
            y.at(0, c) = 1.0;
            norm = 1.0;
        }
        for (int r = 0; r < spec.k; ++r) y.at(r, c) /= norm;
    }

    Matrix w(spec.d, spec.k);
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(spec.k));
    for (int r = 0; r < spec.d; ++r)
        for (int c = 0; c < spec.k; ++c) w.at(r, c) = rng.gaussian() * w_scale;

    Matrix centers = matmul(w, y);  // d x classes, center of class c

    auto emit_samples = [&](Matrix& out, std::vector<int>& labels, int col0, int cls,
                            int count) {
        for (int s = 0; s < count; ++s) {
            int col = col0 + s;
            for (int r = 0; r < spec.d; ++r)
                out.at(r, col) = centers.at(r, cls) + spec.noise_sigma * rng.gaussian();
            labels[col] = cls;
        }
    };

    DatasetBundle b;
    b.d = spec.d;
    b.k = spec.k;
    b.p = spec.p;
    b.q = spec.q;
    b.split_kind = spec.split_kind;

    const int n = spec.samples_per_class;
    b.seen_features = Matrix(spec.d, spec.p * n);
    b.seen_labels.assign(static_cast<std::size_t>(spec.p) * n, 0);
    for (int c = 0; c < spec.p; ++c) emit_samples(b.seen_features, b.seen_labels, c * n, c, n);

    b.seen_prototypes = Matrix(spec.k, spec.p);
    b.unseen_prototypes = Matrix(spec.k, spec.q);
    for (int r = 0; r < spec.k; ++r) {
        for (int c = 0; c < spec.p; ++c) b.seen_prototypes.at(r, c) = y.at(r, c);
        for (int c = 0; c < spec.q; ++c) b.unseen_prototypes.at(r, c) = y.at(r, spec.p + c);
    }

    Matrix support;
    std::vector<int> support_labels;
    if (spec.split_kind == SplitKind::fsl) {
        support = Matrix(spec.d, spec.shots * spec.q);
        support_labels.assign(static_cast<std::size_t>(spec.shots) * spec.q, 0);
        for (int j = 0; j < spec.q; ++j)
            emit_samples(support, support_labels, j * spec.shots, spec.p + j, spec.shots);
    }

    int first_test_class = (spec.split_kind == SplitKind::generalized_zsl) ? 0 : spec.p;
    int test_classes = classes - first_test_class;
    Matrix test(spec.d, test_classes * n);
    std::vector<int> test_labels(static_cast<std::size_t>(test_classes) * n, 0);
    for (int c = 0; c < test_classes; ++c)
        emit_samples(test, test_labels, c * n, first_test_class + c, n);
    b.test_features = std::move(test);
    b.test_labels = std::move(test_labels);

    SyntheticProblem out{DatasetBundle{}, std::move(w)};
    if (spec.split_kind == SplitKind::fsl) {
        FSLBundle f;
        f.base = std::move(b);
        f.support_features = std::move(support);
        f.support_labels = std::move(support_labels);
        f.shots = spec.shots;
        require_valid(f);
        out.bundle = std::move(f);
    } else {
        require_valid(b);
        out.bundle = std::move(b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Class-wise cross-validation.

struct CvSplit {
    std::vector<int> train_classes;
    std::vector<int> val_classes;
};

/// Partitions the seen classes into `folds` validation sets (shuffled by
/// seed, strided assignment, each set sorted ascending). Every class lands in
/// exactly one validation set.
inline std::vector<CvSplit> class_cv_splits(const DatasetBundle& b, int folds,
                                            std::uint64_t seed) {
    if (folds < 1) throw ValidationError("class_cv_splits: folds must be >= 1");
    if (folds > b.p)
        throw ValidationError("class_cv_splits: folds (" + std::to_string(folds) +
                              ") exceed seen class count (" + std::to_string(b.p) + ")");
    std::vector<int> ids(b.p);
    for (int i = 0; i < b.p; ++i) ids[i] = i;
    Rng rng(seed);
    rng.shuffle(ids);
    std::vector<CvSplit> out(folds);
    for (int i = 0; i < b.p; ++i) out[i % folds].val_classes.push_back(ids[i]);
    for (auto& split : out) {
        std::sort(split.val_classes.begin(), split.val_classes.end());
        std::vector<char> is_val(b.p, 0);
        for (int v : split.val_classes) is_val[v] = 1;
        for (int c = 0; c < b.p; ++c)
            if (!is_val[c]) split.train_classes.push_back(c);
    }
    return out;
}

/// Rebuilds a pure-ZSL bundle where the split's validation classes act as
/// pseudo-unseen: their samples move from the seen set to the test set and
/// their prototypes move to the unseen block. Class ids are remapped (train
/// classes become 0..p'-1 in ascending original order, validation classes
/// become p'..p'+q'-1).
inline DatasetBundle cv_fold_bundle(const DatasetBundle& b, const CvSplit& split) {
    if (split.train_classes.empty() || split.val_classes.empty())
        throw ValidationError("cv fold: both class sets must be nonempty");
    const int pp = static_cast<int>(split.train_classes.size());
    const int qq = static_cast<int>(split.val_classes.size());
    std::vector<int> remap(b.p, -1);
    for (int i = 0; i < pp; ++i) {
        int c = split.train_classes[i];
        if (c < 0 || c >= b.p) throw ValidationError("cv fold: class id out of range");
        remap[c] = i;
    }
    for (int i = 0; i < qq; ++i) {
        int c = split.val_classes[i];
        if (c < 0 || c >= b.p) throw ValidationError("cv fold: class id out of range");
        if (remap[c] != -1) throw ValidationError("cv fold: class sets overlap");
        remap[c] = pp + i;
    }

    int n_train = 0, n_val = 0;
    for (int label : b.seen_labels) {
        if (remap[label] < 0) throw ValidationError("cv fold: class sets do not cover labels");
        (remap[label] < pp ? n_train : n_val)++;
    }
    if (n_train == 0 || n_val == 0)
        throw ValidationError("cv fold: a class set has no samples");

    DatasetBundle out;
    out.d = b.d;
    out.k = b.k;
    out.p = pp;
    out.q = qq;
    out.split_kind = SplitKind::pure_zsl;
    out.seen_features = Matrix(b.d, n_train);
    out.seen_labels.assign(n_train, 0);
    Matrix test(b.d, n_val);
    std::vector<int> test_labels(n_val, 0);
    int ti = 0, vi = 0;
    for (int s = 0; s < b.seen_features.cols; ++s) {
        int nl = remap[b.seen_labels[s]];
        if (nl < pp) {
            for (int r = 0; r < b.d; ++r) out.seen_features.at(r, ti) = b.seen_features.at(r, s);
            out.seen_labels[ti++] = nl;
        } else {
            for (int r = 0; r < b.d; ++r) test.at(r, vi) = b.seen_features.at(r, s);
            test_labels[vi++] = nl;
        }
    }
    out.seen_prototypes = Matrix(b.k, pp);
    out.unseen_prototypes = Matrix(b.k, qq);
    for (int r = 0; r < b.k; ++r) {
        for (int i = 0; i < pp; ++i)
            out.seen_prototypes.at(r, i) = b.seen_prototypes.at(r, split.train_classes[i]);
        for (int i = 0; i < qq; ++i)
            out.unseen_prototypes.at(r, i) = b.seen_prototypes.at(r, split.val_classes[i]);
    }
    out.test_features = std::move(test);
    out.test_labels = std::move(test_labels);
    require_valid(out);
    return out;
}

// ---------------------------------------------------------------------------
// CSV import (headerless, comma-separated doubles).

inline Matrix read_csv_matrix(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw NotFoundError("csv file not found: " + path.string());
    std::vector<double> values;
    int rows = 0, cols = -1, line_no = 0;
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        int count = 0;
        std::size_t pos = 0;
        while (true) {
            std::size_t comma = line.find(',', pos);
            std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos
                                                                           : comma - pos);
            std::size_t consumed = 0;
            double v;
            try {
                v = std::stod(cell, &consumed);
            } catch (const std::exception&) {
                throw ParseError("csv line " + std::to_string(line_no) + ": cannot parse \"" +
                                 cell + "\"");
            }
            while (consumed < cell.size() &&
                   (cell[consumed] == ' ' || cell[consumed] == '\t'))
                ++consumed;
            if (consumed != cell.size())
                throw ParseError("csv line " + std::to_string(line_no) + ": cannot parse \"" +
                                 cell + "\"");
            values.push_back(v);
            ++count;
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cols == -1)
            cols = count;
        else if (count != cols)
            throw FormatError("csv line " + std::to_string(line_no) + ": expected " +
                              std::to_string(cols) + " columns, found " + std::to_string(count));
        ++rows;
    }
    if (rows == 0) throw FormatError("csv file has no rows: " + path.string());
    return Matrix::from_data(rows, cols, std::move(values));
}

}  // namespace bpl
