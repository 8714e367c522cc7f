// Command-line front end: synthetic problem generation, projection training
// for zero-shot and few-shot splits, evaluation, grid-search tuning via
// class-wise cross-validation, and trace reporting.
//
// Exit codes: 0 success, 2 validation failure, 3 I/O failure, 4 numerical
// failure. Failures print one machine-readable JSON object to stderr.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bpl/dataset.hpp"
#include "bpl/episodes.hpp"
#include "bpl/errors.hpp"
#include "bpl/matrix.hpp"
#include "bpl/metrics.hpp"
#include "bpl/rng.hpp"
#include "bpl/solver.hpp"
#include "bpl/synthesis.hpp"
#include "bpl/tune.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config precedence: flags > config file > defaults. Every consulted key is
// logged with its source; unknown config keys are rejected.

class FlagResolver {
  public:
    explicit FlagResolver(bool verbose) : verbose_(verbose) {}

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw bpl::NotFoundError("config file not found: " + path);
        try {
            file_ = json::parse(is);
        } catch (const json::exception& e) {
            throw bpl::ParseError("config " + path + ": " + e.what());
        }
        if (!file_.is_object())
            throw bpl::FormatError("config " + path + ": expected a JSON object");
    }

    // Config files written by the training commands carry the command name;
    // feeding one to a different subcommand is almost certainly a mistake.
    void expect_command(const std::string& name) {
        consumed_.insert("command");
        if (file_.contains("command") && file_.at("command") != name)
            throw bpl::ValidationError("config: written for command '" +
                                       file_.at("command").get<std::string>() +
                                       "', not '" + name + "'");
    }

    template <typename T>
    void resolve(const CLI::Option* opt, const char* key, T& value) {
        const char* source = "default";
        if (opt != nullptr && opt->count() > 0) {
            source = "flag";
        } else if (file_.contains(key)) {
            try {
                file_.at(key).get_to(value);
            } catch (const json::exception& e) {
                throw bpl::FormatError(std::string("config key '") + key + "': " + e.what());
            }
            source = "config";
        }
        consumed_.insert(key);
        log_.push_back(std::string("[config] ") + key + " = " + json(value).dump() + " (" +
                       source + ")");
    }

    void finish() const {
        for (const auto& item : file_.items())
            if (consumed_.find(item.key()) == consumed_.end())
                throw bpl::ValidationError("config: unknown key '" + item.key() + "'");
        if (verbose_)
            for (const auto& line : log_) std::cerr << line << "\n";
    }

  private:
    json file_ = json::object();
    bool verbose_ = false;
    std::set<std::string> consumed_;
    std::vector<std::string> log_;
};

using OptionMap = std::map<std::string, CLI::Option*>;

// ---------------------------------------------------------------------------
// Small helpers.

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw bpl::IoError("cannot open for writing: " + path.string());
    os << content;
    if (!os) throw bpl::IoError("write failed: " + path.string());
}

json read_json_file(const fs::path& path, const char* what) {
    std::ifstream is(path);
    if (!is) throw bpl::NotFoundError(std::string(what) + " not found: " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw bpl::ParseError(std::string(what) + " " + path.string() + ": " + e.what());
    }
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw bpl::IoError("cannot create directory: " + dir.string());
}

double dot_product(const bpl::Matrix& a, const bpl::Matrix& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += a.data[i] * b.data[i];
    return sum;
}

double trace_of(const bpl::Matrix& m) {
    double sum = 0.0;
    for (int i = 0; i < std::min(m.rows, m.cols); ++i) sum += m.at(i, i);
    return sum;
}

bpl::SplitKind split_kind_from_cli(const std::string& s) {
    if (s == "pure" || s == "pure_zsl") return bpl::SplitKind::pure_zsl;
    if (s == "generalized" || s == "generalized_zsl") return bpl::SplitKind::generalized_zsl;
    if (s == "fsl") return bpl::SplitKind::fsl;
    throw bpl::ParseError("unknown split \"" + s + "\" (expected pure, generalized, or fsl)");
}

const bpl::DatasetBundle& zsl_view(const bpl::LoadedBundle& lb) {
    if (const auto* f = std::get_if<bpl::FSLBundle>(&lb)) return f->base;
    return std::get<bpl::DatasetBundle>(lb);
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
    int d = 16, k = 8, p = 6, q = 3, n = 40, shots = 1;
    double noise = 0.0;
    std::uint64_t seed = 0;
    std::string split = "pure";
    std::string out;
    std::string config;
    bool verbose = false;
};

int run_gen(GenArgs& a, const OptionMap& o) {
    FlagResolver r(a.verbose);
    if (!a.config.empty()) r.load_file(a.config);
    r.expect_command("gen");
    r.resolve(o.at("d"), "d", a.d);
    r.resolve(o.at("k"), "k", a.k);
    r.resolve(o.at("p"), "p", a.p);
    r.resolve(o.at("q"), "q", a.q);
    r.resolve(o.at("n"), "samples_per_class", a.n);
    r.resolve(o.at("noise"), "noise_sigma", a.noise);
    r.resolve(o.at("seed"), "seed", a.seed);
    r.resolve(o.at("split"), "split", a.split);
    r.resolve(o.at("shots"), "shots", a.shots);
    r.resolve(o.at("out"), "out", a.out);
    r.finish();
    if (a.out.empty()) throw bpl::ValidationError("gen: --out is required");

    bpl::SyntheticSpec spec;
    spec.d = a.d;
    spec.k = a.k;
    spec.p = a.p;
    spec.q = a.q;
    spec.samples_per_class = a.n;
    spec.noise_sigma = a.noise;
    spec.seed = a.seed;
    spec.split_kind = split_kind_from_cli(a.split);
    spec.shots = a.shots;

    bpl::SyntheticProblem prob = bpl::make_synthetic_problem(spec);
    std::visit([&](const auto& b) { bpl::save_bundle(b, a.out); }, prob.bundle);
    bpl::save_matrix(fs::path(a.out) / "ground_truth_W.zslb", prob.ground_truth_w);

    json summary;
    summary["out"] = a.out;
    summary["d"] = spec.d;
    summary["k"] = spec.k;
    summary["p"] = spec.p;
    summary["q"] = spec.q;
    summary["samples_per_class"] = spec.samples_per_class;
    summary["split"] = bpl::to_string(spec.split_kind);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-zsl (pipeline shared with `report --verify`)

struct ZslTrainSpec {
    std::string bundle;
    std::string mode = "full";
    double rho = 0.5;
    int k_g = 3;
    int spn = 5;
    double alpha = 0.1, mu = 0.1, beta = 0.01, epsilon = 0.001, alpha_decay = 0.99;
    int max_iters = 5;
    double rel_tol = 1e-4;
    double entropy_lr = 1e-3;
    int entropy_steps = 50;
    bool normalize = false;
    std::uint64_t seed = 0;
};

json zsl_spec_to_json(const ZslTrainSpec& s) {
    json j;
    j["command"] = "train-zsl";
    j["bundle"] = s.bundle;
    j["mode"] = s.mode;
    j["rho"] = s.rho;
    j["k_g"] = s.k_g;
    j["samples_per_neighbour"] = s.spn;
    j["alpha"] = s.alpha;
    j["mu"] = s.mu;
    j["beta"] = s.beta;
    j["epsilon"] = s.epsilon;
    j["alpha_decay"] = s.alpha_decay;
    j["max_iters"] = s.max_iters;
    j["rel_tol"] = s.rel_tol;
    j["entropy_lr"] = s.entropy_lr;
    j["entropy_steps"] = s.entropy_steps;
    j["normalize"] = s.normalize;
    j["seed"] = s.seed;
    return j;
}

ZslTrainSpec zsl_spec_from_json(const json& j) {
    ZslTrainSpec s;
    try {
        j.at("bundle").get_to(s.bundle);
        j.at("mode").get_to(s.mode);
        j.at("rho").get_to(s.rho);
        j.at("k_g").get_to(s.k_g);
        j.at("samples_per_neighbour").get_to(s.spn);
        j.at("alpha").get_to(s.alpha);
        j.at("mu").get_to(s.mu);
        j.at("beta").get_to(s.beta);
        j.at("epsilon").get_to(s.epsilon);
        j.at("alpha_decay").get_to(s.alpha_decay);
        j.at("max_iters").get_to(s.max_iters);
        j.at("rel_tol").get_to(s.rel_tol);
        j.at("entropy_lr").get_to(s.entropy_lr);
        j.at("entropy_steps").get_to(s.entropy_steps);
        j.at("normalize").get_to(s.normalize);
        j.at("seed").get_to(s.seed);
    } catch (const json::exception& e) {
        throw bpl::FormatError(std::string("run config: ") + e.what());
    }
    return s;
}

bpl::SolverConfig solver_config_of(const ZslTrainSpec& s) {
    bpl::SolverConfig cfg;
    cfg.alpha = s.alpha;
    cfg.mu = s.mu;
    cfg.beta = s.beta;
    cfg.epsilon = s.epsilon;
    cfg.alpha_decay = s.alpha_decay;
    cfg.max_iters = s.max_iters;
    cfg.rel_tol = s.rel_tol;
    cfg.entropy_lr = s.entropy_lr;
    cfg.entropy_steps = s.entropy_steps;
    cfg.mode = bpl::solver_mode_from_string(s.mode);
    cfg.normalize_inputs = false;  // the pipeline normalizes once, up front
    return cfg;
}

struct ZslTrainOutput {
    bpl::Matrix w;
    bpl::FitTrace trace;
};

// Builds an iteration observer once the pipeline knows the (possibly
// normalized) bundle, the synthesized features, and the final config.
using ObserverFactory = std::function<bpl::IterationObserver(
    const bpl::DatasetBundle&, const bpl::Matrix&, const bpl::SolverConfig&)>;

ZslTrainOutput run_zsl_pipeline(const ZslTrainSpec& s,
                                const ObserverFactory& factory = {}) {
    bpl::LoadedBundle loaded = bpl::load_bundle(s.bundle);
    bpl::DatasetBundle b = bpl::as_zsl(loaded);
    if (s.normalize) b = bpl::normalized_inputs(b);

    bpl::SolverConfig cfg = solver_config_of(s);
    bpl::SynthConfig sc;
    sc.rho = s.rho;
    sc.k_g = s.k_g;
    sc.samples_per_neighbour = s.spn;
    sc.seed = s.seed;

    auto tic = std::chrono::steady_clock::now();
    auto elapsed = [&tic]() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
    };
    bpl::FitResult base = bpl::fit_bpl0(b, cfg);

    switch (cfg.mode) {
        case bpl::SolverMode::bpl0:
            return {std::move(base.w), std::move(base.trace)};
        case bpl::SolverMode::fpl: {
            bpl::SeenStats st = bpl::compute_seen_stats(b);
            bpl::Matrix w = bpl::fit_fpl(b, cfg);
            double fro = bpl::frobenius_norm(w);
            double obj = dot_product(w, bpl::matmul(st.sxx, w)) - 2.0 * dot_product(w, st.sxy) +
                         trace_of(st.syy) + cfg.beta * fro * fro;
            bpl::FitTrace trace;
            trace.iterations.push_back({0, obj, 0.0, 0, elapsed()});
            return {std::move(w), std::move(trace)};
        }
        case bpl::SolverMode::rpl: {
            bpl::SeenStats st = bpl::compute_seen_stats(b);
            bpl::Matrix w = bpl::fit_rpl(b, cfg);
            double fro = bpl::frobenius_norm(w);
            double obj = trace_of(st.sxx) - 2.0 * dot_product(w, st.sxy) +
                         dot_product(w, bpl::matmul(w, st.syy)) + cfg.beta * fro * fro;
            bpl::FitTrace trace;
            trace.iterations.push_back({0, obj, 0.0, 0, elapsed()});
            return {std::move(w), std::move(trace)};
        }
        case bpl::SolverMode::entropy: {
            bpl::SynthSet synth = bpl::synthesize_zsl(b, base.w, sc);
            std::vector<bpl::EntropyStep> steps;
            bpl::Matrix w = bpl::fit_entropy_baseline(b, synth, cfg, &steps);
            bpl::FitTrace trace;
            for (std::size_t i = 0; i < steps.size(); ++i)
                trace.iterations.push_back(
                    {static_cast<int>(i), steps[i].objective, 0.0, 0, 0.0});
            if (trace.iterations.empty())
                trace.iterations.push_back({0, 0.0, 0.0, 0, elapsed()});
            return {std::move(w), std::move(trace)};
        }
        default: {
            bpl::SynthSet synth = bpl::synthesize_zsl(b, base.w, sc);
            bpl::IterationObserver observer;
            if (factory) observer = factory(b, synth.features, cfg);
            bpl::CompetitiveFitResult fit = bpl::fit_competitive_bpl(b, synth, cfg, observer);
            return {std::move(fit.w), std::move(fit.trace)};
        }
    }
}

struct TrainZslArgs {
    ZslTrainSpec spec;
    std::string out;
    std::string config;
    bool verbose = false;
};

void resolve_zsl_spec(ZslTrainSpec& s, FlagResolver& r, const OptionMap& o) {
    r.resolve(o.at("bundle"), "bundle", s.bundle);
    r.resolve(o.at("mode"), "mode", s.mode);
    r.resolve(o.at("rho"), "rho", s.rho);
    r.resolve(o.at("kg"), "k_g", s.k_g);
    r.resolve(o.at("spn"), "samples_per_neighbour", s.spn);
    r.resolve(o.at("alpha"), "alpha", s.alpha);
    r.resolve(o.at("mu"), "mu", s.mu);
    r.resolve(o.at("beta"), "beta", s.beta);
    r.resolve(o.at("epsilon"), "epsilon", s.epsilon);
    r.resolve(o.at("alpha_decay"), "alpha_decay", s.alpha_decay);
    r.resolve(o.at("max_iters"), "max_iters", s.max_iters);
    r.resolve(o.at("rel_tol"), "rel_tol", s.rel_tol);
    r.resolve(o.at("entropy_lr"), "entropy_lr", s.entropy_lr);
    r.resolve(o.at("entropy_steps"), "entropy_steps", s.entropy_steps);
    r.resolve(o.at("normalize"), "normalize", s.normalize);
    r.resolve(o.at("seed"), "seed", s.seed);
}

int run_train_zsl(TrainZslArgs& a, const OptionMap& o) {
    FlagResolver r(a.verbose);
    if (!a.config.empty()) r.load_file(a.config);
    r.expect_command("train-zsl");
    resolve_zsl_spec(a.spec, r, o);
    r.resolve(o.at("out"), "out", a.out);
    r.finish();
    if (a.spec.bundle.empty()) throw bpl::ValidationError("train-zsl: --bundle is required");
    if (a.out.empty()) throw bpl::ValidationError("train-zsl: --out is required");

    ZslTrainOutput result = run_zsl_pipeline(a.spec);

    ensure_directory(a.out);
    fs::path out(a.out);
    bpl::save_matrix(out / "W.zslb", result.w);
    write_text_file(out / "trace.jsonl", bpl::to_json_lines(result.trace));
    write_text_file(out / "config.json", zsl_spec_to_json(a.spec).dump(2) + "\n");

    json summary;
    summary["model"] = (out / "W.zslb").string();
    summary["trace"] = (out / "trace.jsonl").string();
    summary["mode"] = a.spec.mode;
    summary["iterations"] = result.trace.iterations.size();
    summary["final_objective"] = result.trace.iterations.back().objective;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-fsl

struct TrainFslArgs {
    std::string bundle;
    std::string mode = "full";
    int episodes = 10;
    double rho = 0.5;
    double fsl_noise = 0.1;
    int copies = 5;
    double alpha = 0.1, mu = 0.1, beta = 0.01, epsilon = 0.001, alpha_decay = 0.99;
    int max_iters = 5;
    double rel_tol = 1e-4;
    bool normalize = false;
    std::uint64_t seed = 0;
    std::string out;
    std::string config;
    bool verbose = false;
};

int run_train_fsl(TrainFslArgs& a, const OptionMap& o) {
    FlagResolver r(a.verbose);
    if (!a.config.empty()) r.load_file(a.config);
    r.expect_command("train-fsl");
    r.resolve(o.at("bundle"), "bundle", a.bundle);
    r.resolve(o.at("mode"), "mode", a.mode);
    r.resolve(o.at("episodes"), "episodes", a.episodes);
    r.resolve(o.at("rho"), "rho", a.rho);
    r.resolve(o.at("fsl_noise"), "fsl_noise_sigma", a.fsl_noise);
    r.resolve(o.at("copies"), "fsl_copies_per_shot", a.copies);
    r.resolve(o.at("alpha"), "alpha", a.alpha);
    r.resolve(o.at("mu"), "mu", a.mu);
    r.resolve(o.at("beta"), "beta", a.beta);
    r.resolve(o.at("epsilon"), "epsilon", a.epsilon);
    r.resolve(o.at("alpha_decay"), "alpha_decay", a.alpha_decay);
    r.resolve(o.at("max_iters"), "max_iters", a.max_iters);
    r.resolve(o.at("rel_tol"), "rel_tol", a.rel_tol);
    r.resolve(o.at("normalize"), "normalize", a.normalize);
    r.resolve(o.at("seed"), "seed", a.seed);
    r.resolve(o.at("out"), "out", a.out);
    r.finish();
    if (a.bundle.empty()) throw bpl::ValidationError("train-fsl: --bundle is required");
    if (a.out.empty()) throw bpl::ValidationError("train-fsl: --out is required");

    bpl::LoadedBundle loaded = bpl::load_bundle(a.bundle);
    const bpl::FSLBundle& f = bpl::as_fsl(loaded);

    bpl::SolverConfig cfg;
    cfg.alpha = a.alpha;
    cfg.mu = a.mu;
    cfg.beta = a.beta;
    cfg.epsilon = a.epsilon;
    cfg.alpha_decay = a.alpha_decay;
    cfg.max_iters = a.max_iters;
    cfg.rel_tol = a.rel_tol;
    cfg.mode = bpl::solver_mode_from_string(a.mode);
    cfg.normalize_inputs = a.normalize;

    bpl::SynthConfig sc;
    sc.rho = a.rho;
    sc.fsl_noise_sigma = a.fsl_noise;
    sc.fsl_copies_per_shot = a.copies;

    bpl::EpisodePlan plan;
    plan.episodes = a.episodes;
    plan.seed = a.seed;

    bpl::FslFitResult result = bpl::fit_fsl(f, plan, sc, cfg);

    ensure_directory(a.out);
    fs::path out(a.out);
    bpl::save_matrix(out / "W.zslb", result.w);
    for (std::size_t h = 0; h < result.traces.size(); ++h)
        write_text_file(out / ("trace_" + std::to_string(h) + ".jsonl"),
                        bpl::to_json_lines(result.traces[h]));
    json cfg_json;
    cfg_json["command"] = "train-fsl";
    cfg_json["bundle"] = a.bundle;
    cfg_json["mode"] = a.mode;
    cfg_json["episodes"] = a.episodes;
    cfg_json["rho"] = a.rho;
    cfg_json["fsl_noise_sigma"] = a.fsl_noise;
    cfg_json["fsl_copies_per_shot"] = a.copies;
    cfg_json["alpha"] = a.alpha;
    cfg_json["mu"] = a.mu;
    cfg_json["beta"] = a.beta;
    cfg_json["epsilon"] = a.epsilon;
    cfg_json["alpha_decay"] = a.alpha_decay;
    cfg_json["max_iters"] = a.max_iters;
    cfg_json["rel_tol"] = a.rel_tol;
    cfg_json["normalize"] = a.normalize;
    cfg_json["seed"] = a.seed;
    write_text_file(out / "config.json", cfg_json.dump(2) + "\n");

    json summary;
    summary["model"] = (out / "W.zslb").string();
    summary["episodes"] = a.episodes;
    summary["mode"] = a.mode;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string model;
    std::string bundle;
    std::string protocol = "pure";
    int hit_k = 1;
    bool normalize = false;
    std::string out;
    std::string config;
    bool verbose = false;
};

int run_eval(EvalArgs& a, const OptionMap& o) {
    FlagResolver r(a.verbose);
    if (!a.config.empty()) r.load_file(a.config);
    r.expect_command("eval");
    r.resolve(o.at("model"), "model", a.model);
    r.resolve(o.at("bundle"), "bundle", a.bundle);
    r.resolve(o.at("protocol"), "protocol", a.protocol);
    r.resolve(o.at("hit_k"), "hit_k", a.hit_k);
    r.resolve(o.at("normalize"), "normalize", a.normalize);
    r.resolve(o.at("out"), "out", a.out);
    r.finish();
    if (a.model.empty()) throw bpl::ValidationError("eval: --model is required");
    if (a.bundle.empty()) throw bpl::ValidationError("eval: --bundle is required");

    bpl::Matrix w = bpl::load_matrix(a.model);
    bpl::LoadedBundle loaded = bpl::load_bundle(a.bundle);
    bpl::DatasetBundle b = zsl_view(loaded);
    if (a.normalize) b = bpl::normalized_inputs(b);

    bpl::MetricsReport report;
    if (a.protocol == "pure") {
        report = bpl::evaluate_pure(w, b, {});
    } else if (a.protocol == "hit_at_k") {
        report = bpl::evaluate_pure(w, b, {a.hit_k});
    } else if (a.protocol == "generalized") {
        report = bpl::evaluate_generalized(w, b);
    } else {
        throw bpl::ParseError("unknown protocol \"" + a.protocol +
                              "\" (expected pure, generalized, or hit_at_k)");
    }

    std::string text = bpl::to_json(report).dump(2) + "\n";
    std::cout << text;
    if (!a.out.empty()) write_text_file(a.out, text);
    return 0;
}

// ---------------------------------------------------------------------------
// tune

struct TuneArgs {
    std::string bundle;
    std::vector<double> rho_values{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> alpha_values{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<double> mu_values{0.1, 0.3, 0.5, 0.7, 0.9};
    int folds = 3;
    bool force = false;
    int kg = 3;
    int spn = 5;
    double beta = 0.01, epsilon = 0.001, alpha_decay = 0.99;
    int max_iters = 5;
    double rel_tol = 1e-4;
    bool normalize = false;
    std::uint64_t seed = 0;
    int jobs = 1;
    std::string out;
    std::string config;
    bool verbose = false;
};

int run_tune_cmd(TuneArgs& a, const OptionMap& o) {
    FlagResolver r(a.verbose);
    if (!a.config.empty()) r.load_file(a.config);
    r.expect_command("tune");
    r.resolve(o.at("bundle"), "bundle", a.bundle);
    r.resolve(o.at("rho_values"), "rho_values", a.rho_values);
    r.resolve(o.at("alpha_values"), "alpha_values", a.alpha_values);
    r.resolve(o.at("mu_values"), "mu_values", a.mu_values);
    r.resolve(o.at("folds"), "folds", a.folds);
    r.resolve(o.at("force"), "force", a.force);
    r.resolve(o.at("kg"), "k_g", a.kg);
    r.resolve(o.at("spn"), "samples_per_neighbour", a.spn);
    r.resolve(o.at("beta"), "beta", a.beta);
    r.resolve(o.at("epsilon"), "epsilon", a.epsilon);
    r.resolve(o.at("alpha_decay"), "alpha_decay", a.alpha_decay);
    r.resolve(o.at("max_iters"), "max_iters", a.max_iters);
    r.resolve(o.at("rel_tol"), "rel_tol", a.rel_tol);
    r.resolve(o.at("normalize"), "normalize", a.normalize);
    r.resolve(o.at("seed"), "seed", a.seed);
    r.resolve(o.at("jobs"), "jobs", a.jobs);
    r.resolve(o.at("out"), "out", a.out);
    r.finish();
    if (a.bundle.empty()) throw bpl::ValidationError("tune: --bundle is required");

    bpl::LoadedBundle loaded = bpl::load_bundle(a.bundle);
    bpl::DatasetBundle b = bpl::as_zsl(loaded);
    if (a.normalize) b = bpl::normalized_inputs(b);

    bpl::TuneGrid grid;
    grid.rho_values = a.rho_values;
    grid.alpha_values = a.alpha_values;
    grid.mu_values = a.mu_values;
    grid.folds = a.folds;
    grid.force = a.force;

    bpl::SolverConfig cfg;
    cfg.beta = a.beta;
    cfg.epsilon = a.epsilon;
    cfg.alpha_decay = a.alpha_decay;
    cfg.max_iters = a.max_iters;
    cfg.rel_tol = a.rel_tol;
    bpl::SynthConfig sc;
    sc.k_g = a.kg;
    sc.samples_per_neighbour = a.spn;

    bpl::TuneResult result = bpl::run_tune(b, grid, cfg, sc, a.seed, a.jobs);

    if (!a.out.empty()) write_text_file(a.out, bpl::tune_csv(result, grid.folds));

    int failed = 0;
    for (const auto& cell : result.cells)
        if (cell.failed) ++failed;
    json summary;
    summary["best"] = {{"rho", result.best_rho},
                       {"alpha", result.best_alpha},
                       {"mu", result.best_mu}};
    summary["best_score"] = result.cells[result.best_index].score;
    summary["cells"] = result.cells.size();
    summary["failed"] = failed;
    if (!a.out.empty()) summary["csv"] = a.out;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
    std::vector<std::string> traces;
    std::string svg;
    bool verify = false;
    std::string out;
    bool verbose = false;
};

struct TraceFileData {
    std::string path;
    std::vector<bpl::FitIteration> rows;
};

TraceFileData parse_trace_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw bpl::NotFoundError("trace file not found: " + path.string());
    TraceFileData out{path.string(), {}};
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = "trace " + path.string() + " line " + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw bpl::ParseError(where + ": " + e.what());
        }
        bpl::FitIteration it;
        try {
            j.at("iter").get_to(it.iter);
            j.at("objective").get_to(it.objective);
            j.at("rel_change").get_to(it.rel_change);
            j.at("label_changes").get_to(it.label_changes);
            j.at("wall_seconds").get_to(it.wall_seconds);
        } catch (const json::exception& e) {
            throw bpl::ParseError(where + ": " + e.what());
        }
        out.rows.push_back(it);
    }
    if (out.rows.empty()) throw bpl::FormatError("trace " + path.string() + ": no records");
    return out;
}

std::string render_table(const std::vector<TraceFileData>& traces) {
    std::ostringstream os;
    for (const auto& t : traces) {
        os << "trace: " << t.path << "\n";
        os << "  iter       objective      rel_change  label_changes  wall_seconds\n";
        for (const auto& row : t.rows) {
            os << "  " << std::setw(4) << row.iter << "  " << std::scientific
               << std::setprecision(6) << std::setw(14) << row.objective << "  "
               << std::setw(14) << row.rel_change << "  " << std::defaultfloat << std::setw(13)
               << row.label_changes << "  " << std::fixed << std::setprecision(6)
               << std::setw(12) << row.wall_seconds << "\n";
            os << std::defaultfloat;
        }
        os << "\n";
    }
    return os.str();
}

// One polyline per trace showing the relative W-change by iteration (the
// convergence diagnostic); y grows downward in SVG, so smaller changes plot
// lower on the canvas.
std::string render_svg(const std::vector<TraceFileData>& traces) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#9467bd", "#ff7f0e", "#8c564b"};
    const double width = 640.0, height = 400.0;
    const double x0 = 60.0, x1 = 620.0, y0 = 360.0, y1 = 20.0;

    double lo = 0.0, hi = 0.0;
    bool first = true;
    std::size_t max_rows = 1;
    for (const auto& t : traces) {
        max_rows = std::max(max_rows, t.rows.size());
        for (const auto& row : t.rows) {
            if (first) {
                lo = hi = row.rel_change;
                first = false;
            } else {
                lo = std::min(lo, row.rel_change);
                hi = std::max(hi, row.rel_change);
            }
        }
    }
    if (hi == lo) hi = lo + 1.0;

    auto x_at = [&](std::size_t i) {
        double span = static_cast<double>(max_rows > 1 ? max_rows - 1 : 1);
        return x0 + (x1 - x0) * static_cast<double>(i) / span;
    };
    auto y_at = [&](double v) { return y0 + (y1 - y0) * (v - lo) / (hi - lo); };

    std::ostringstream os;
    os << std::setprecision(10);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "  <rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "  <line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
       << "\" stroke=\"black\"/>\n";
    os << "  <line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n";
    os << "  <text x=\"" << (x0 + x1) / 2.0 << "\" y=\"" << height - 8.0
       << "\" text-anchor=\"middle\" font-size=\"12\">iteration</text>\n";
    os << "  <text x=\"14\" y=\"" << (y0 + y1) / 2.0
       << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 "
       << (y0 + y1) / 2.0 << ")\">relative W change</text>\n";
    for (std::size_t t = 0; t < traces.size(); ++t) {
        const char* color = colors[t % (sizeof(colors) / sizeof(colors[0]))];
        os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < traces[t].rows.size(); ++i) {
            if (i > 0) os << " ";
            os << x_at(i) << "," << y_at(traces[t].rows[i].rel_change);
        }
        os << "\"/>\n";
        for (std::size_t i = 0; i < traces[t].rows.size(); ++i)
            os << "  <circle cx=\"" << x_at(i) << "\" cy=\""
               << y_at(traces[t].rows[i].rel_change) << "\" r=\"3\" fill=\"" << color
               << "\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

json verify_trace(const TraceFileData& trace) {
    fs::path cfg_path = fs::path(trace.path).parent_path() / "config.json";
    json cfg_json = read_json_file(cfg_path, "run config");
    if (!cfg_json.contains("command") || cfg_json.at("command") != "train-zsl")
        throw bpl::ValidationError("--verify supports train-zsl traces only (config " +
                                   cfg_path.string() + ")");
    ZslTrainSpec spec = zsl_spec_from_json(cfg_json);

    std::vector<double> recomputed;
    ObserverFactory factory = [&recomputed](const bpl::DatasetBundle& b,
                                            const bpl::Matrix& x_g,
                                            const bpl::SolverConfig& cfg) {
        double mu_eff = cfg.mode == bpl::SolverMode::full ? cfg.mu : 0.0;
        return [&b, &x_g, mu_eff, beta = cfg.beta,
                &recomputed](const bpl::IterationView& v) {
            recomputed.push_back(
                bpl::objective_value(v.w_new, b, x_g, mu_eff, v.alpha_t, beta));
        };
    };
    ZslTrainOutput replay = run_zsl_pipeline(spec, factory);
    if (recomputed.empty())
        for (const auto& row : replay.trace.iterations) recomputed.push_back(row.objective);

    if (recomputed.size() != trace.rows.size())
        throw bpl::ValidationError("verify " + trace.path + ": trace has " +
                                   std::to_string(trace.rows.size()) + " rows but recomputation " +
                                   std::to_string(recomputed.size()));
    double max_diff = 0.0;
    for (std::size_t i = 0; i < recomputed.size(); ++i)
        max_diff = std::max(max_diff, std::abs(recomputed[i] - trace.rows[i].objective));
    if (max_diff > 1e-9)
        throw bpl::ValidationError("verify " + trace.path + ": objective mismatch " +
                                   std::to_string(max_diff));
    json j;
    j["trace"] = trace.path;
    j["verified"] = true;
    j["rows"] = recomputed.size();
    j["max_abs_diff"] = max_diff;
    return j;
}

int run_report(ReportArgs& a) {
    if (a.traces.empty()) throw bpl::ValidationError("report: at least one trace file required");
    std::vector<TraceFileData> traces;
    traces.reserve(a.traces.size());
    for (const auto& path : a.traces) traces.push_back(parse_trace_file(path));

    std::string table = render_table(traces);
    std::cout << table;
    if (!a.out.empty()) write_text_file(a.out, table);
    if (!a.svg.empty()) write_text_file(a.svg, render_svg(traces));

    if (a.verify) {
        json verdicts = json::array();
        for (const auto& t : traces) verdicts.push_back(verify_trace(t));
        std::cout << verdicts.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{"Synthesis-driven bidirectional projection learning for zero-shot and "
                 "few-shot classification"};
    app.require_subcommand(1);

    GenArgs gen_args;
    OptionMap gen_opts;
    CLI::App* gen = app.add_subcommand("gen", "Generate a synthetic problem bundle");
    gen_opts["d"] = gen->add_option("--d", gen_args.d, "Feature dimension");
    gen_opts["k"] = gen->add_option("--k", gen_args.k, "Semantic dimension");
    gen_opts["p"] = gen->add_option("--p", gen_args.p, "Seen/base class count");
    gen_opts["q"] = gen->add_option("--q", gen_args.q, "Unseen/novel class count");
    gen_opts["n"] = gen->add_option("--n", gen_args.n, "Samples per class");
    gen_opts["noise"] = gen->add_option("--noise", gen_args.noise, "Feature noise sigma");
    gen_opts["seed"] = gen->add_option("--seed", gen_args.seed, "RNG seed");
    gen_opts["split"] =
        gen->add_option("--split", gen_args.split, "Split kind: pure, generalized, or fsl");
    gen_opts["shots"] = gen->add_option("--shots", gen_args.shots, "Support shots (fsl split)");
    gen_opts["out"] = gen->add_option("--out", gen_args.out, "Output bundle directory");
    gen->add_option("--config", gen_args.config, "JSON config file");
    gen->add_flag("--verbose", gen_args.verbose, "Log resolved configuration");

    TrainZslArgs tz_args;
    OptionMap tz_opts;
    CLI::App* tz = app.add_subcommand("train-zsl", "Train a zero-shot projection");
    tz_opts["bundle"] = tz->add_option("--bundle", tz_args.spec.bundle, "Bundle directory");
    tz_opts["mode"] = tz->add_option(
        "--mode", tz_args.spec.mode,
        "Solver mode: full, bpl1, bpl0, fpl, rpl, entropy, or no_ambiguity");
    tz_opts["rho"] = tz->add_option("--rho", tz_args.spec.rho, "Perturbation step");
    tz_opts["kg"] = tz->add_option("--kg", tz_args.spec.k_g, "Neighbour count for synthesis");
    tz_opts["spn"] =
        tz->add_option("--spn", tz_args.spec.spn, "Samples per (class, neighbour) pair");
    tz_opts["alpha"] = tz->add_option("--alpha", tz_args.spec.alpha, "Synthetic-loss weight");
    tz_opts["mu"] = tz->add_option("--mu", tz_args.spec.mu, "Runner-up push weight");
    tz_opts["beta"] = tz->add_option("--beta", tz_args.spec.beta, "Ridge regularizer");
    tz_opts["epsilon"] =
        tz->add_option("--epsilon", tz_args.spec.epsilon, "Near-minimum tolerance");
    tz_opts["alpha_decay"] =
        tz->add_option("--alpha-decay", tz_args.spec.alpha_decay, "Per-iteration alpha decay");
    tz_opts["max_iters"] = tz->add_option("--max-iters", tz_args.spec.max_iters, "Iteration cap");
    tz_opts["rel_tol"] =
        tz->add_option("--rel-tol", tz_args.spec.rel_tol, "Relative W-change stop threshold");
    tz_opts["entropy_lr"] =
        tz->add_option("--entropy-lr", tz_args.spec.entropy_lr, "Entropy-mode learning rate");
    tz_opts["entropy_steps"] =
        tz->add_option("--entropy-steps", tz_args.spec.entropy_steps, "Entropy-mode steps");
    tz_opts["normalize"] =
        tz->add_flag("--normalize", tz_args.spec.normalize, "L2-normalize inputs first");
    tz_opts["seed"] = tz->add_option("--seed", tz_args.spec.seed, "Synthesis RNG seed");
    tz_opts["out"] = tz->add_option("--out", tz_args.out, "Output directory");
    tz->add_option("--config", tz_args.config, "JSON config file");
    tz->add_flag("--verbose", tz_args.verbose, "Log resolved configuration");

    TrainFslArgs tf_args;
    OptionMap tf_opts;
    CLI::App* tf = app.add_subcommand("train-fsl", "Train a few-shot projection episodically");
    tf_opts["bundle"] = tf->add_option("--bundle", tf_args.bundle, "FSL bundle directory");
    tf_opts["mode"] =
        tf->add_option("--mode", tf_args.mode, "Solver mode: full, bpl1, or no_ambiguity");
    tf_opts["episodes"] = tf->add_option("--episodes", tf_args.episodes, "Episode count");
    tf_opts["rho"] = tf->add_option("--rho", tf_args.rho, "Perturbation step");
    tf_opts["fsl_noise"] = tf->add_option("--fsl-noise", tf_args.fsl_noise,
                                          "Prototype noise multiplier for query synthesis");
    tf_opts["copies"] =
        tf->add_option("--copies", tf_args.copies, "Synthesized copies per support shot");
    tf_opts["alpha"] = tf->add_option("--alpha", tf_args.alpha, "Synthetic-loss weight");
    tf_opts["mu"] = tf->add_option("--mu", tf_args.mu, "Runner-up push weight");
    tf_opts["beta"] = tf->add_option("--beta", tf_args.beta, "Ridge regularizer");
    tf_opts["epsilon"] = tf->add_option("--epsilon", tf_args.epsilon, "Near-minimum tolerance");
    tf_opts["alpha_decay"] =
        tf->add_option("--alpha-decay", tf_args.alpha_decay, "Per-iteration alpha decay");
    tf_opts["max_iters"] = tf->add_option("--max-iters", tf_args.max_iters, "Iteration cap");
    tf_opts["rel_tol"] =
        tf->add_option("--rel-tol", tf_args.rel_tol, "Relative W-change stop threshold");
    tf_opts["normalize"] =
        tf->add_flag("--normalize", tf_args.normalize, "L2-normalize inputs first");
    tf_opts["seed"] = tf->add_option("--seed", tf_args.seed, "Episode RNG seed");
    tf_opts["out"] = tf->add_option("--out", tf_args.out, "Output directory");
    tf->add_option("--config", tf_args.config, "JSON config file");
    tf->add_flag("--verbose", tf_args.verbose, "Log resolved configuration");

    EvalArgs ev_args;
    OptionMap ev_opts;
    CLI::App* ev = app.add_subcommand("eval", "Evaluate a trained projection");
    ev_opts["model"] = ev->add_option("--model", ev_args.model, "Projection matrix file");
    ev_opts["bundle"] = ev->add_option("--bundle", ev_args.bundle, "Bundle directory");
    ev_opts["protocol"] = ev->add_option("--protocol", ev_args.protocol,
                                         "Protocol: pure, generalized, or hit_at_k");
    ev_opts["hit_k"] = ev->add_option("--hit-k", ev_args.hit_k, "k for the hit_at_k protocol");
    ev_opts["normalize"] =
        ev->add_flag("--normalize", ev_args.normalize, "L2-normalize inputs first");
    ev_opts["out"] = ev->add_option("--out", ev_args.out, "Metrics JSON output path");
    ev->add_option("--config", ev_args.config, "JSON config file");
    ev->add_flag("--verbose", ev_args.verbose, "Log resolved configuration");

    TuneArgs tu_args;
    OptionMap tu_opts;
    CLI::App* tu = app.add_subcommand("tune", "Grid-search rho/alpha/mu by class-wise CV");
    tu_opts["bundle"] = tu->add_option("--bundle", tu_args.bundle, "Bundle directory");
    tu_opts["rho_values"] =
        tu->add_option("--rho-values", tu_args.rho_values, "Grid values for rho")
            ->delimiter(',');
    tu_opts["alpha_values"] =
        tu->add_option("--alpha-values", tu_args.alpha_values, "Grid values for alpha")
            ->delimiter(',');
    tu_opts["mu_values"] =
        tu->add_option("--mu-values", tu_args.mu_values, "Grid values for mu")->delimiter(',');
    tu_opts["folds"] = tu->add_option("--folds", tu_args.folds, "Cross-validation folds");
    tu_opts["force"] = tu->add_flag("--force", tu_args.force, "Allow more than 500 grid cells");
    tu_opts["kg"] = tu->add_option("--kg", tu_args.kg, "Neighbour count for synthesis");
    tu_opts["spn"] =
        tu->add_option("--spn", tu_args.spn, "Samples per (class, neighbour) pair");
    tu_opts["beta"] = tu->add_option("--beta", tu_args.beta, "Ridge regularizer");
    tu_opts["epsilon"] = tu->add_option("--epsilon", tu_args.epsilon, "Near-minimum tolerance");
    tu_opts["alpha_decay"] =
        tu->add_option("--alpha-decay", tu_args.alpha_decay, "Per-iteration alpha decay");
    tu_opts["max_iters"] = tu->add_option("--max-iters", tu_args.max_iters, "Iteration cap");
    tu_opts["rel_tol"] =
        tu->add_option("--rel-tol", tu_args.rel_tol, "Relative W-change stop threshold");
    tu_opts["normalize"] =
        tu->add_flag("--normalize", tu_args.normalize, "L2-normalize inputs first");
    tu_opts["seed"] = tu->add_option("--seed", tu_args.seed, "CV and synthesis seed");
    tu_opts["jobs"] = tu->add_option("--jobs", tu_args.jobs, "Concurrent grid cells");
    tu_opts["out"] = tu->add_option("--out", tu_args.out, "CSV output path");
    tu->add_option("--config", tu_args.config, "JSON config file");
    tu->add_flag("--verbose", tu_args.verbose, "Log resolved configuration");

    ReportArgs rp_args;
    CLI::App* rp = app.add_subcommand("report", "Summarize training traces");
    rp->add_option("traces", rp_args.traces, "Trace files (JSON lines)")->required();
    rp->add_option("--svg", rp_args.svg, "Write a convergence plot to this path");
    rp->add_flag("--verify", rp_args.verify,
                 "Recompute objectives from the sibling config.json and compare");
    rp->add_option("--out", rp_args.out, "Write the table to this path");
    rp->add_flag("--verbose", rp_args.verbose, "Log resolved configuration");

    auto emit_error = [](const char* family, const std::string& message, int code) {
        json j;
        j["error"] = {{"family", family}, {"message", message}};
        std::cerr << j.dump() << "\n";
        return code;
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return emit_error("validation", e.what(), 2);
    }

    try {
        if (gen->parsed()) return run_gen(gen_args, gen_opts);
        if (tz->parsed()) return run_train_zsl(tz_args, tz_opts);
        if (tf->parsed()) return run_train_fsl(tf_args, tf_opts);
        if (ev->parsed()) return run_eval(ev_args, ev_opts);
        if (tu->parsed()) return run_tune_cmd(tu_args, tu_opts);
        if (rp->parsed()) return run_report(rp_args);
        return emit_error("validation", "no subcommand given", 2);
    } catch (const bpl::ValidationFamilyError& e) {
        return emit_error("validation", e.what(), 2);
    } catch (const bpl::IoFamilyError& e) {
        return emit_error("io", e.what(), 3);
    } catch (const bpl::NumericFamilyError& e) {
        return emit_error("numeric", e.what(), 4);
    } catch (const std::exception& e) {
        return emit_error("internal", e.what(), 1);
    }
}
