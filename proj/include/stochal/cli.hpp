#pragma once

// Config-driven command-line front end. Everything except main() lives here so the commands
// can be exercised in-process.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/crc.hpp>
#include <yaml-cpp/yaml.h>

#include "stochal/stochal.hpp"

namespace stochal::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------------------------
// Configuration

struct DatasetSpec {
    std::string generator = "repeated-clusters";  // blobs | repeated-clusters | imbalanced-groups | high-aleatoric | csv
    std::size_t classes = 4;
    std::size_t dims = 2;
    std::size_t n = 1000;                // blobs, imbalanced-groups, high-aleatoric
    std::size_t points_per_class = 10;   // repeated-clusters
    std::size_t repetitions = 4;         // repeated-clusters
    double noise_sd = 0.1;               // repeated-clusters
    double majority_fraction = 0.9;      // imbalanced-groups
    double occlusion_fraction = 0.3;     // high-aleatoric
    std::string path;                    // csv
    std::string label_column = "label";  // csv
    std::string group_column;            // csv, empty = none

    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct AblateSpec {
    std::vector<double> betas{0.0, 1.0, 100.0};
    std::vector<PolicyKind> policies{PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank};

    friend bool operator==(const AblateSpec&, const AblateSpec&) = default;
};

struct DiagnoseSpec {
    std::size_t reference_step = 0;
    std::size_t horizon = 50;
    std::vector<RankSubset> subsets{RankSubset::All};
    std::vector<std::size_t> freeze_steps{0, 40};
    std::vector<double> scores{1.0, 2.0, 3.0};
    std::vector<PolicyKind> policies{PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank};
    std::vector<double> betas{1.0};

    friend bool operator==(const DiagnoseSpec&, const DiagnoseSpec&) = default;
};

struct BenchSpec {
    std::vector<std::size_t> pool_sizes{10'000, 100'000};
    std::vector<std::size_t> batch_sizes{10, 100, 500};
    std::vector<PolicyKind> policies{PolicyKind::TopB, PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank};
    double beta = 1.0;
    std::size_t repeats = 21;

    friend bool operator==(const BenchSpec&, const BenchSpec&) = default;
};

struct ExperimentConfig {
    DatasetSpec dataset;
    LoopConfig loop;
    std::size_t num_trials = 3;
    std::uint64_t seed = 0;
    std::string out_dir = "runs";
    unsigned threads = 1;
    AblateSpec ablate;
    DiagnoseSpec diagnose;
    BenchSpec bench;
};

namespace detail {

template <class T>
std::string type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_integral_v<T>) return "a non-negative integer";
    else return "a string";
}

/// One mapping in the config file. Tracks which keys were read so leftovers can be reported.
class Section {
public:
    Section(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(where(), "expected a mapping");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    Section child(const std::string& key) {
        seen_.insert(key);
        return {lookup(key), field(key)};
    }

    template <class T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        const auto v = lookup(key);
        if (!v || v.IsNull()) return;
        out = scalar<T>(v, field(key));
    }

    template <class T>
    void read_list(const std::string& key, std::vector<T>& out) {
        seen_.insert(key);
        const auto v = lookup(key);
        if (!v || v.IsNull()) return;
        if (!v.IsSequence()) throw ConfigError(field(key), "expected a list");
        std::vector<T> items;
        for (std::size_t i = 0; i < v.size(); ++i) items.push_back(scalar<T>(v[i], field(key)));
        out = std::move(items);
    }

    template <class T, class Parse>
    void read_names(const std::string& key, std::vector<T>& out, Parse parse, const char* what) {
        std::vector<std::string> names;
        bool present = lookup(key) && !lookup(key).IsNull();
        read_list(key, names);
        if (!present) return;
        std::vector<T> items;
        for (const auto& n : names) {
            const auto k = parse(n);
            if (!k) throw ConfigError(field(key), "unknown " + std::string(what) + " '" + n + "'");
            items.push_back(*k);
        }
        out = std::move(items);
    }

    void finish() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
        }
    }

private:
    YAML::Node lookup(const std::string& key) const {
        if (!node_ || node_.IsNull()) return YAML::Node();
        return node_[key];
    }

    std::string where() const { return path_.empty() ? "<root>" : path_; }

    template <class T>
    static T scalar(const YAML::Node& v, const std::string& field) {
        if (!v.IsScalar()) throw ConfigError(field, "expected " + type_name<T>());
        try {
            if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                const auto s = v.as<std::string>();
                if (!s.empty() && s.front() == '-') throw ConfigError(field, "expected " + type_name<T>());
                return static_cast<T>(v.as<unsigned long long>());
            } else {
                return v.as<T>();
            }
        } catch (const YAML::Exception&) {
            throw ConfigError(field, "expected " + type_name<T>() + ", got '" + v.Scalar() + "'");
        }
    }

    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::optional<PolicyKind> policy_from(const std::string& s) { return parse_policy_kind(s); }
inline std::optional<RankSubset> subset_from(const std::string& s) { return parse_rank_subset(s); }

}  // namespace detail

inline void validate(const DatasetSpec& d) {
    static const std::set<std::string> generators{"blobs", "repeated-clusters", "imbalanced-groups", "high-aleatoric",
                                                  "csv"};
    if (!generators.count(d.generator)) throw ConfigError("dataset.generator", "unknown generator '" + d.generator + "'");
    if (d.generator == "csv") {
        if (d.path.empty()) throw ConfigError("dataset.path", "required for the csv generator");
        if (d.label_column.empty()) throw ConfigError("dataset.label_column", "must not be empty");
        return;
    }
    if (d.classes < 2) throw ConfigError("dataset.classes", "must be >= 2");
    if (d.dims < 1) throw ConfigError("dataset.dims", "must be >= 1");
    if (d.generator == "repeated-clusters") {
        if (d.points_per_class < 1) throw ConfigError("dataset.points_per_class", "must be >= 1");
        if (d.repetitions < 1) throw ConfigError("dataset.repetitions", "must be >= 1");
        if (!(d.noise_sd >= 0.0) || !std::isfinite(d.noise_sd)) throw ConfigError("dataset.noise_sd", "must be >= 0");
        return;
    }
    if (d.n < d.classes) throw ConfigError("dataset.n", "must be at least the number of classes");
    if (d.generator == "imbalanced-groups" && !(d.majority_fraction > 0.5 && d.majority_fraction < 1.0))
        throw ConfigError("dataset.majority_fraction", "must be in (0.5, 1)");
    if (d.generator == "high-aleatoric" && !(d.occlusion_fraction >= 0.0 && d.occlusion_fraction < 1.0))
        throw ConfigError("dataset.occlusion_fraction", "must be in [0, 1)");
}

inline ExperimentConfig parse_config(const YAML::Node& root) {
    ExperimentConfig cfg;
    detail::Section top(root, "");
    top.read("seed", cfg.seed);
    top.read("trials", cfg.num_trials);
    top.read("out", cfg.out_dir);
    top.read("threads", cfg.threads);

    auto ds = top.child("dataset");
    auto& d = cfg.dataset;
    ds.read("generator", d.generator);
    ds.read("classes", d.classes);
    ds.read("dims", d.dims);
    ds.read("n", d.n);
    ds.read("points_per_class", d.points_per_class);
    ds.read("repetitions", d.repetitions);
    ds.read("noise_sd", d.noise_sd);
    ds.read("majority_fraction", d.majority_fraction);
    ds.read("occlusion_fraction", d.occlusion_fraction);
    ds.read("path", d.path);
    ds.read("label_column", d.label_column);
    ds.read("group_column", d.group_column);
    ds.finish();

    auto lp = top.child("loop");
    std::string policy(to_string(cfg.loop.policy.kind));
    std::string score(to_string(cfg.loop.score_kind));
    double beta = cfg.loop.policy.beta();
    lp.read("policy", policy);
    lp.read("beta", beta);
    lp.read("score", score);
    lp.read("batch_size", cfg.loop.batch_size);
    lp.read("num_steps", cfg.loop.num_steps);
    lp.read("ensemble_k", cfg.loop.ensemble_k);
    lp.read("reinit_each_step", cfg.loop.reinit_each_step);
    lp.finish();
    const auto kind = parse_policy_kind(policy);
    if (!kind) throw ConfigError("loop.policy", "unknown policy '" + policy + "'");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("loop.beta", "must be finite and >= 0");
    cfg.loop.policy = {*kind, Coldness(beta)};
    const auto sk = parse_score_kind(score);
    if (!sk) throw ConfigError("loop.score", "unknown score '" + score + "'");
    cfg.loop.score_kind = *sk;

    auto sp = top.child("split");
    sp.read("initial_train", cfg.loop.initial_train);
    sp.read("test_fraction", cfg.loop.test_fraction);
    sp.finish();

    auto md = top.child("model");
    md.read_list("hidden_dims", cfg.loop.hidden_dims);
    md.finish();

    auto tr = top.child("train");
    tr.read("learning_rate", cfg.loop.train.learning_rate);
    tr.read("max_epochs", cfg.loop.train.max_epochs);
    tr.read("patience", cfg.loop.train.early_stop_patience);
    tr.read("minibatch_size", cfg.loop.train.minibatch_size);
    tr.read("validation_fraction", cfg.loop.train.validation_fraction);
    tr.read("weight_decay", cfg.loop.train.weight_decay);
    tr.finish();

    auto ab = top.child("ablate");
    ab.read_list("betas", cfg.ablate.betas);
    ab.read_names("policies", cfg.ablate.policies, detail::policy_from, "policy");
    ab.finish();

    auto dg = top.child("diagnose");
    dg.read("reference_step", cfg.diagnose.reference_step);
    dg.read("horizon", cfg.diagnose.horizon);
    dg.read_names("subsets", cfg.diagnose.subsets, detail::subset_from, "subset");
    dg.read_list("freeze_steps", cfg.diagnose.freeze_steps);
    dg.read_list("scores", cfg.diagnose.scores);
    dg.read_names("policies", cfg.diagnose.policies, detail::policy_from, "policy");
    dg.read_list("betas", cfg.diagnose.betas);
    dg.finish();

    auto bn = top.child("bench");
    bn.read_list("pool_sizes", cfg.bench.pool_sizes);
    bn.read_list("batch_sizes", cfg.bench.batch_sizes);
    bn.read_names("policies", cfg.bench.policies, detail::policy_from, "policy");
    bn.read("beta", cfg.bench.beta);
    bn.read("repeats", cfg.bench.repeats);
    bn.finish();

    top.finish();
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    try {
        return parse_config(YAML::Load(text));
    } catch (const YAML::ParserException& e) {
        throw ConfigError("<config>", std::string("malformed YAML: ") + e.what());
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

/// Checks that do not need the dataset.
inline void validate(const ExperimentConfig& cfg) {
    validate(cfg.dataset);
    cfg.loop.validate();
    if (cfg.num_trials == 0) throw ConfigError("trials", "must be positive");
    if (cfg.threads == 0) throw ConfigError("threads", "must be positive");
    if (cfg.out_dir.empty()) throw ConfigError("out", "must not be empty");
}

namespace detail {
template <class T, class F>
YAML::Node seq(const std::vector<T>& v, F f) {
    YAML::Node n(YAML::NodeType::Sequence);
    for (const auto& x : v) n.push_back(f(x));
    return n;
}
inline auto ident = [](const auto& x) { return x; };
/// Shortest text that reads back as the same double.
inline std::string num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}
inline auto name_of = [](const auto& x) { return std::string(to_string(x)); };
}  // namespace detail

/// The fully resolved configuration, every key present.
inline std::string dump_config(const ExperimentConfig& cfg) {
    using detail::seq;
    YAML::Node root;
    root["seed"] = cfg.seed;
    root["trials"] = cfg.num_trials;
    root["out"] = cfg.out_dir;
    root["threads"] = cfg.threads;
    const auto& d = cfg.dataset;
    auto ds = root["dataset"];
    ds["generator"] = d.generator;
    ds["classes"] = d.classes;
    ds["dims"] = d.dims;
    ds["n"] = d.n;
    ds["points_per_class"] = d.points_per_class;
    ds["repetitions"] = d.repetitions;
    ds["noise_sd"] = detail::num(d.noise_sd);
    ds["majority_fraction"] = detail::num(d.majority_fraction);
    ds["occlusion_fraction"] = detail::num(d.occlusion_fraction);
    ds["path"] = d.path;
    ds["label_column"] = d.label_column;
    ds["group_column"] = d.group_column;
    auto lp = root["loop"];
    lp["policy"] = std::string(to_string(cfg.loop.policy.kind));
    lp["beta"] = detail::num(cfg.loop.policy.beta());
    lp["score"] = std::string(to_string(cfg.loop.score_kind));
    lp["batch_size"] = cfg.loop.batch_size;
    lp["num_steps"] = cfg.loop.num_steps;
    lp["ensemble_k"] = cfg.loop.ensemble_k;
    lp["reinit_each_step"] = cfg.loop.reinit_each_step;
    root["split"]["initial_train"] = cfg.loop.initial_train;
    root["split"]["test_fraction"] = detail::num(cfg.loop.test_fraction);
    root["model"]["hidden_dims"] = seq(cfg.loop.hidden_dims, detail::ident);
    auto tr = root["train"];
    tr["learning_rate"] = detail::num(cfg.loop.train.learning_rate);
    tr["max_epochs"] = cfg.loop.train.max_epochs;
    tr["patience"] = cfg.loop.train.early_stop_patience;
    tr["minibatch_size"] = cfg.loop.train.minibatch_size;
    tr["validation_fraction"] = detail::num(cfg.loop.train.validation_fraction);
    tr["weight_decay"] = detail::num(cfg.loop.train.weight_decay);
    root["ablate"]["betas"] = seq(cfg.ablate.betas, detail::num);
    root["ablate"]["policies"] = seq(cfg.ablate.policies, detail::name_of);
    auto dg = root["diagnose"];
    dg["reference_step"] = cfg.diagnose.reference_step;
    dg["horizon"] = cfg.diagnose.horizon;
    dg["subsets"] = seq(cfg.diagnose.subsets, detail::name_of);
    dg["freeze_steps"] = seq(cfg.diagnose.freeze_steps, detail::ident);
    dg["scores"] = seq(cfg.diagnose.scores, detail::num);
    dg["policies"] = seq(cfg.diagnose.policies, detail::name_of);
    dg["betas"] = seq(cfg.diagnose.betas, detail::num);
    auto bn = root["bench"];
    bn["pool_sizes"] = seq(cfg.bench.pool_sizes, detail::ident);
    bn["batch_sizes"] = seq(cfg.bench.batch_sizes, detail::ident);
    bn["policies"] = seq(cfg.bench.policies, detail::name_of);
    bn["beta"] = detail::num(cfg.bench.beta);
    bn["repeats"] = cfg.bench.repeats;

    YAML::Emitter out;
    out << root;
    return std::string(out.c_str()) + "\n";
}

/// CRC-32 of the command name and resolved config, as 8 hex digits.
inline std::string config_hash(const std::string& command, const ExperimentConfig& cfg) {
    boost::crc_32_type crc;
    const auto text = command + "\n" + dump_config(cfg);
    crc.process_bytes(text.data(), text.size());
    std::ostringstream os;
    os << std::hex << std::setw(8) << std::setfill('0') << crc.checksum();
    return os.str();
}

// ---------------------------------------------------------------------------------------------
// Datasets

inline Dataset make_dataset(const DatasetSpec& d, std::uint64_t seed) {
    validate(d);
    const RngState rng(seed);
    try {
        if (d.generator == "blobs") return gen_blobs(d.classes, d.n, d.dims, rng);
        if (d.generator == "repeated-clusters")
            return gen_repeated_clusters(d.classes, d.points_per_class, d.repetitions, d.noise_sd, d.dims, rng);
        if (d.generator == "imbalanced-groups") return gen_imbalanced_groups(d.majority_fraction, d.classes, d.n, d.dims, rng);
        if (d.generator == "high-aleatoric") return gen_high_aleatoric(d.occlusion_fraction, d.classes, d.n, d.dims, rng);
    } catch (const ParameterError& e) {
        throw ConfigError("dataset", e.what());
    }
    if (!fs::exists(d.path)) throw ConfigError("dataset.path", "cannot read '" + d.path + "'");
    CsvSchema schema;
    schema.label_column = d.label_column;
    if (!d.group_column.empty()) schema.group_column = d.group_column;
    return load_csv(d.path, schema);
}

// ---------------------------------------------------------------------------------------------
// Output

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y%m%dT%H%M%S") << std::setw(3) << std::setfill('0') << ms << 'Z';
    return os.str();
}

struct OutputDir {
    fs::path path;
    std::string config_hash;
    std::string timestamp;
};

/// <root>/<hash>-<timestamp>, with a numeric suffix if that already exists.
inline OutputDir make_output_dir(const std::string& command, const ExperimentConfig& cfg) {
    OutputDir out{{}, config_hash(command, cfg), utc_timestamp()};
    const fs::path base = fs::path(cfg.out_dir) / (out.config_hash + "-" + out.timestamp);
    fs::create_directories(cfg.out_dir);
    out.path = base;
    for (int k = 2; !fs::create_directory(out.path); ++k) out.path = base.string() + "-" + std::to_string(k);
    return out;
}

inline std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw Error("cannot write " + p.string());
    return f;
}

inline void write_snapshot(const OutputDir& dir, const std::string& command, const ExperimentConfig& cfg,
                           const nlohmann::json& extra = nlohmann::json::object()) {
    open_out(dir.path / "config.yaml") << dump_config(cfg);
    nlohmann::json meta = {{"command", command},       {"config_hash", dir.config_hash},
                           {"timestamp", dir.timestamp}, {"seed", cfg.seed},
                           {"version", kVersion}};
    meta.update(extra);
    open_out(dir.path / "metadata.json") << meta.dump(2) << '\n';
}

inline DiagnosticMetadata diagnostic_meta(const std::string& kind, const OutputDir& dir, const ExperimentConfig& cfg) {
    DiagnosticMetadata m;
    m.kind = kind;
    m.config_hash = dir.config_hash;
    m.seed = cfg.seed;
    m.timestamp = dir.timestamp;
    return m;
}

// ---------------------------------------------------------------------------------------------
// Commands

struct Context {
    std::ostream* log = &std::cerr;
    bool quiet = false;

    void note(const std::string& msg) const {
        if (!quiet) *log << msg << '\n';
    }
};

/// Dataset plus every loop precondition, checked before any work starts.
inline Dataset prepare(const ExperimentConfig& cfg, const LoopConfig& loop) {
    validate(cfg);
    Dataset ds = make_dataset(cfg.dataset, cfg.seed);
    loop.validate_for(ds.size());
    return ds;
}

inline fs::path cmd_run(const ExperimentConfig& cfg, const Context& ctx = {}) {
    const Dataset ds = prepare(cfg, cfg.loop);
    const auto dir = make_output_dir("run", cfg);
    ctx.note("run: " + std::to_string(cfg.num_trials) + " trial(s) of " + cfg.loop.policy.describe() + " on " + ds.name +
             " (" + std::to_string(ds.size()) + " points) -> " + dir.path.string());
    const auto res = run_experiment(ds, cfg.loop, cfg.num_trials, RngState(cfg.seed), {}, {cfg.threads});
    write_snapshot(dir, "run", cfg, {{"ci", "normal approximation, 95%"}});
    {
        auto f = open_out(dir.path / "runs.jsonl");
        write_jsonl(f, res);
    }
    {
        auto f = open_out(dir.path / "runs.csv");
        write_runs_csv(f, res);
    }
    {
        auto f = open_out(dir.path / "summary.csv");
        const auto rows = aggregate(res);
        write_summary_csv(f, rows);
    }
    return dir.path;
}

/// One experiment per (stochastic policy, beta) on the same trial streams.
inline std::vector<std::pair<AcquisitionPolicy, ExperimentResult>> run_ablation(const Dataset& ds,
                                                                                  const ExperimentConfig& cfg,
                                                                                  const LoopHooks& hooks = {},
                                                                                  const Context& ctx = {}) {
    std::vector<std::pair<AcquisitionPolicy, ExperimentResult>> out;
    for (auto kind : cfg.ablate.policies) {
        for (double beta : cfg.ablate.betas) {
            LoopConfig loop = cfg.loop;
            loop.policy = {kind, Coldness(beta)};
            ctx.note("ablate-beta: " + loop.policy.describe());
            out.emplace_back(loop.policy, run_experiment(ds, loop, cfg.num_trials, RngState(cfg.seed), hooks,
                                                         {cfg.threads}));
        }
    }
    return out;
}

inline void validate_ablation(const ExperimentConfig& cfg) {
    if (cfg.ablate.betas.empty()) throw ConfigError("ablate.betas", "needs at least one value");
    for (double b : cfg.ablate.betas)
        if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("ablate.betas", "values must be finite and >= 0");
    if (cfg.ablate.policies.empty()) throw ConfigError("ablate.policies", "needs at least one policy");
    for (auto k : cfg.ablate.policies)
        if (!is_stochastic(k)) throw ConfigError("ablate.policies", "only softmax, power and softrank take a beta");
}

inline fs::path cmd_ablate_beta(const ExperimentConfig& cfg, const Context& ctx = {}) {
    validate_ablation(cfg);
    const Dataset ds = prepare(cfg, cfg.loop);
    const auto dir = make_output_dir("ablate-beta", cfg);
    const auto runs = run_ablation(ds, cfg, {}, ctx);
    write_snapshot(dir, "ablate-beta", cfg, {{"ci", "normal approximation, 95%"}});
    auto csv = open_out(dir.path / "ablation.csv");
    auto jsonl = open_out(dir.path / "ablation.jsonl");
    auto summary = open_out(dir.path / "ablation_summary.csv");
    csv << kRunsCsvHeader << '\n';
    summary << "policy,beta,step,train_size,trials,accuracy_mean,accuracy_ci95,macro_f1_mean,macro_f1_ci95\n";
    for (const auto& [policy, res] : runs) {
        write_runs_csv(csv, res, false);
        write_jsonl(jsonl, res);
        for (const auto& r : aggregate(res)) {
            summary << to_string(policy.kind) << ',' << stochal::detail::fmt_double(policy.beta()) << ',' << r.step
                    << ',' << r.train_size << ',' << r.trials << ',' << stochal::detail::fmt_double(r.accuracy_mean)
                    << ',' << stochal::detail::fmt_double(r.accuracy_ci95) << ','
                    << stochal::detail::fmt_double(r.macro_f1_mean) << ','
                    << stochal::detail::fmt_double(r.macro_f1_ci95) << '\n';
        }
    }
    return dir.path;
}

/// Single-point loop used by the rank and frozen diagnostics.
inline LoopConfig single_point_loop(const ExperimentConfig& cfg, std::size_t acquisitions) {
    LoopConfig loop = cfg.loop;
    loop.batch_size = 1;
    loop.num_steps = std::max<std::size_t>(1, acquisitions);
    return loop;
}

inline fs::path cmd_diagnose(const std::string& kind, const ExperimentConfig& cfg, const Context& ctx = {}) {
    const auto& dg = cfg.diagnose;
    if (kind == "scoredist") {
        if (dg.scores.empty()) throw ConfigError("diagnose.scores", "needs at least one score");
        for (double s : dg.scores)
            if (!std::isfinite(s)) throw ConfigError("diagnose.scores", "values must be finite");
        if (dg.betas.empty()) throw ConfigError("diagnose.betas", "needs at least one value");
        for (double b : dg.betas)
            if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("diagnose.betas", "values must be finite and > 0");
        for (auto k : dg.policies)
            if (!is_stochastic(k)) throw ConfigError("diagnose.policies", "only softmax, power and softrank");
        const auto rows = score_distribution(dg.scores, dg.policies, dg.betas);
        const auto dir = make_output_dir("diagnose-scoredist", cfg);
        write_snapshot(dir, "diagnose scoredist", cfg);
        auto f = open_out(dir.path / "scoredist.csv");
        write_metadata(f, diagnostic_meta("scoredist", dir, cfg));
        write_scoredist_csv(f, rows);
        ctx.note("diagnose scoredist: " + std::to_string(rows.size()) + " rows -> " + dir.path.string());
        return dir.path;
    }
    if (kind == "rank") {
        if (dg.subsets.empty()) throw ConfigError("diagnose.subsets", "needs at least one subset");
        const auto loop = single_point_loop(cfg, dg.reference_step + dg.horizon);
        const Dataset ds = prepare(cfg, loop);
        const auto dir = make_output_dir("diagnose-rank", cfg);
        write_snapshot(dir, "diagnose rank", cfg);
        auto f = open_out(dir.path / "rank.csv");
        auto meta = diagnostic_meta("rank", dir, cfg);
        meta.extra = {{"kernel", "boxcar"}, {"width", std::to_string(kRankSmoothingWidth)}};
        write_metadata(f, meta);
        for (std::size_t t = 0; t < cfg.num_trials; ++t) {
            ctx.note("diagnose rank: seed " + std::to_string(t));
            const auto trs =
                rank_trajectories(ds, loop, dg.reference_step, dg.horizon, dg.subsets, RngState(cfg.seed).with_trial(t));
            write_rank_csv(f, trs, t, t == 0);
        }
        return dir.path;
    }
    if (kind == "frozen") {
        if (dg.freeze_steps.empty()) throw ConfigError("diagnose.freeze_steps", "needs at least one step");
        const auto last = *std::max_element(dg.freeze_steps.begin(), dg.freeze_steps.end());
        const auto loop = single_point_loop(cfg, last + dg.horizon);
        const Dataset ds = prepare(cfg, loop);
        const auto dir = make_output_dir("diagnose-frozen", cfg);
        write_snapshot(dir, "diagnose frozen", cfg);
        auto f = open_out(dir.path / "frozen.csv");
        write_metadata(f, diagnostic_meta("frozen", dir, cfg));
        auto summary = open_out(dir.path / "frozen_summary.csv");
        write_metadata(summary, diagnostic_meta("frozen", dir, cfg));
        summary << "seed_index,freeze_step,deficit\n";
        for (std::size_t t = 0; t < cfg.num_trials; ++t) {
            std::vector<FrozenReplay> replays;
            for (auto step : dg.freeze_steps) {
                ctx.note("diagnose frozen: seed " + std::to_string(t) + ", freeze step " + std::to_string(step));
                replays.push_back(frozen_score_replay(ds, loop, step, dg.horizon, RngState(cfg.seed).with_trial(t)));
                summary << t << ',' << step << ',' << stochal::detail::fmt_double(replays.back().deficit()) << '\n';
            }
            write_frozen_csv(f, replays, t, t == 0);
        }
        return dir.path;
    }
    throw ConfigError("diagnose", "unknown kind '" + kind + "' (expected rank, frozen or scoredist)");
}

inline fs::path cmd_bench(const ExperimentConfig& cfg, const Context& ctx = {}) {
    const auto& bn = cfg.bench;
    if (bn.pool_sizes.empty()) throw ConfigError("bench.pool_sizes", "needs at least one size");
    if (bn.batch_sizes.empty()) throw ConfigError("bench.batch_sizes", "needs at least one size");
    if (bn.policies.empty()) throw ConfigError("bench.policies", "needs at least one policy");
    if (bn.repeats == 0) throw ConfigError("bench.repeats", "must be positive");
    if (!(bn.beta >= 0.0) || !std::isfinite(bn.beta)) throw ConfigError("bench.beta", "must be finite and >= 0");
    for (auto b : bn.batch_sizes)
        for (auto m : bn.pool_sizes)
            if (b > m) throw ConfigError("bench.batch_sizes", "batch size exceeds a pool size");
    BenchConfig bc;
    bc.pool_sizes = bn.pool_sizes;
    bc.batch_sizes = bn.batch_sizes;
    bc.repeats = bn.repeats;
    bc.seed = cfg.seed;
    bc.policies.clear();
    for (auto k : bn.policies) bc.policies.push_back({k, Coldness(is_stochastic(k) ? bn.beta : 1.0)});
    const auto dir = make_output_dir("bench", cfg);
    ctx.note("bench: " + std::to_string(bc.policies.size()) + " policies -> " + dir.path.string());
    const auto report = bench_acquisition(bc);
    write_snapshot(dir, "bench", cfg);
    auto f = open_out(dir.path / "bench.csv");
    write_metadata(f, diagnostic_meta("bench", dir, cfg));
    write_bench_csv(f, report);
    auto g = open_out(dir.path / "bench_scaling.csv");
    write_metadata(g, diagnostic_meta("bench", dir, cfg));
    g << "policy,slope_s_per_candidate,intercept_s\n";
    for (const auto& fit : report.fits)
        g << fit.policy << ',' << stochal::detail::fmt_double(fit.slope_s_per_candidate) << ','
          << stochal::detail::fmt_double(fit.intercept_s) << '\n';
    return dir.path;
}

inline fs::path cmd_gen_data(const ExperimentConfig& cfg, const Context& ctx = {}) {
    if (cfg.dataset.generator == "csv") throw ConfigError("dataset.generator", "gen-data needs a synthetic generator");
    const Dataset ds = make_dataset(cfg.dataset, cfg.seed);
    const auto dir = make_output_dir("gen-data", cfg);
    write_snapshot(dir, "gen-data", cfg);
    write_csv(ds, (dir.path / "dataset.csv").string());
    ctx.note("gen-data: " + std::to_string(ds.size()) + " rows -> " + dir.path.string());
    return dir.path;
}

// ---------------------------------------------------------------------------------------------
// Entry point

/// Parses argv, runs the subcommand and maps failures to exit codes. The output directory is
/// printed on `out`; progress and errors go to `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Stochastic batch acquisition experiments", "stochal"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> trials;
    std::optional<unsigned> threads;
    std::string out_dir;
    bool quiet = false;
    std::vector<double> betas;
    std::string kind;

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "YAML config file")->envname("STOCHAL_CONFIG");
        sub->add_option("--seed", seed, "base seed")->envname("STOCHAL_SEED");
        sub->add_option("--out", out_dir, "output root directory")->envname("STOCHAL_OUT");
        sub->add_option("--trials", trials, "number of trials")->envname("STOCHAL_TRIALS");
        sub->add_option("--threads", threads, "worker threads across trials")->envname("STOCHAL_THREADS");
        sub->add_flag("--quiet", quiet, "no progress output")->envname("STOCHAL_QUIET");
    };
    auto* run = app.add_subcommand("run", "active-learning experiment");
    auto* ablate = app.add_subcommand("ablate-beta", "sweep beta for each stochastic policy");
    auto* diagnose = app.add_subcommand("diagnose", "score diagnostics");
    auto* bench = app.add_subcommand("bench", "acquisition-only timing");
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
    for (auto* sub : {run, ablate, diagnose, bench, gen}) common(sub);
    ablate->add_option("--betas", betas, "comma-separated betas (overrides ablate.betas)")->delimiter(',');
    diagnose->add_option("kind", kind, "rank, frozen or scoredist")
        ->required()
        ->check(CLI::IsMember({"rank", "frozen", "scoredist"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    Context ctx{&err, quiet};
    WarningHandler previous = warning_handler();
    if (quiet) set_warning_handler({});
    struct Restore {
        WarningHandler& prev;
        ~Restore() { set_warning_handler(std::move(prev)); }
    } restore{previous};

    try {
        ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (trials) cfg.num_trials = *trials;
        if (threads) cfg.threads = *threads;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (ablate->parsed() && ablate->count("--betas")) cfg.ablate.betas = betas;

        fs::path result;
        if (run->parsed()) result = cmd_run(cfg, ctx);
        else if (ablate->parsed()) result = cmd_ablate_beta(cfg, ctx);
        else if (diagnose->parsed()) result = cmd_diagnose(kind, cfg, ctx);
        else if (bench->parsed()) result = cmd_bench(cfg, ctx);
        else result = cmd_gen_data(cfg, ctx);
        out << result.string() << '\n';
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace stochal::cli
