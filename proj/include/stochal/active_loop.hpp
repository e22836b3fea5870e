#pragma once

// Pool-based active learning over dataset indices: train on the labelled set, score the pool,
// acquire a batch, move it from pool to train, repeat.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stochal/datasets.hpp"
#include "stochal/errors.hpp"
#include "stochal/model.hpp"
#include "stochal/rng.hpp"
#include "stochal/sampling.hpp"
#include "stochal/scoring.hpp"

namespace stochal {

struct LoopConfig {
    AcquisitionPolicy policy = AcquisitionPolicy::power(1.0);
    ScoreKind score_kind = ScoreKind::BALD;
    std::size_t batch_size = 10;
    std::size_t num_steps = 10;
    std::size_t ensemble_k = 10;
    std::vector<std::size_t> hidden_dims{64, 64};
    TrainConfig train{};
    bool reinit_each_step = true;
    std::size_t initial_train = 20;
    double test_fraction = 0.2;

    /// Checks everything that can be checked before a dataset is known.
    void validate() const {
        if (batch_size == 0) throw ConfigError("loop.batch_size", "must be positive");
        if (num_steps == 0) throw ConfigError("loop.num_steps", "must be positive");
        if (ensemble_k == 0) throw ConfigError("loop.ensemble_k", "must be positive");
        if (hidden_dims.empty()) throw ConfigError("model.hidden_dims", "needs at least one hidden layer");
        if (initial_train == 0) throw ConfigError("split.initial_train", "must be positive");
        if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("split.test_fraction", "must be in (0, 1)");
        try {
            train.validate();
        } catch (const ParameterError& e) {
            throw ConfigError("train", e.what());
        }
    }

    /// Checks the pool is large enough for every planned acquisition.
    void validate_for(std::size_t dataset_size) const {
        validate();
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(dataset_size)));
        if (initial_train + n_test > dataset_size)
            throw ConfigError("split.initial_train", "initial train plus test set exceeds the dataset size");
        const std::size_t pool = dataset_size - initial_train - n_test;
        if (batch_size > pool)
            throw ConfigError("loop.batch_size", "batch size " + std::to_string(batch_size) + " exceeds pool size " +
                                                     std::to_string(pool));
        if (batch_size * num_steps > pool)
            throw ConfigError("loop.num_steps", std::to_string(num_steps) + " steps of " + std::to_string(batch_size) +
                                                    " exceed pool size " + std::to_string(pool));
    }

    MlpArchitecture architecture(const Dataset& ds) const { return {ds.dims(), hidden_dims, ds.num_classes}; }
};

struct Metrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::optional<std::map<int, double>> per_group_accuracy;
    std::optional<double> predictive_parity;
};

struct ScoreSummary {
    double min = 0.0;
    double mean = 0.0;
    double max = 0.0;
};

struct StepTimings {
    double train_s = 0.0;
    double score_s = 0.0;
    double acquire_s = 0.0;
};

/// One step of one trial. `metrics` describe the model trained on `train_size` labels, before
/// `selected` (dataset indices) were added.
struct RunRecord {
    std::size_t trial = 0;
    std::size_t step = 0;
    std::size_t train_size = 0;
    std::vector<std::size_t> selected;
    ScoreSummary scores;
    Metrics metrics;
    StepTimings timings;
    std::uint64_t seed = 0;
    std::string policy;
    std::string score_kind;
    double beta = 0.0;
};

struct ActiveState {
    SplitIndices split;
    std::size_t step = 0;
    std::vector<BatchSelection> acquired_history;  // dataset indices
    std::optional<Ensemble> model;                 // kept only when not reinitialising
};

/// Scores for `candidates` (dataset indices, ascending) given the freshly trained ensemble.
using Scorer = std::function<ScoreVector(const Ensemble&, const Dataset&, std::span<const std::size_t> candidates)>;

/// Called once per step with the trained ensemble, before acquisition.
using ModelObserver = std::function<void(const Ensemble&, const ActiveState&)>;

struct LoopHooks {
    Scorer scorer;          // default: ensemble predictions + score_pool(config.score_kind)
    ModelObserver observer;
};

inline Scorer default_scorer(ScoreKind kind) {
    return [kind](const Ensemble& ens, const Dataset& ds, std::span<const std::size_t> candidates) {
        Matrix x(static_cast<Eigen::Index>(candidates.size()), ds.features.cols());
        for (std::size_t i = 0; i < candidates.size(); ++i)
            x.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(candidates[i]));
        return score_pool(predict_samples(ens, x), kind);
    };
}

// ---------------------------------------------------------------------------------------------
// Metrics

/// Accuracy, macro-F1 over the classes present in `truth`, and per-group accuracy with
/// predictive parity (largest pairwise accuracy gap) when `groups` is given.
inline Metrics compute_metrics(std::span<const int> predicted, std::span<const int> truth, std::size_t num_classes,
                               std::optional<std::span<const int>> groups = std::nullopt) {
    if (truth.empty()) throw InputError("cannot evaluate on an empty test set");
    if (predicted.size() != truth.size()) throw InputError("predictions and labels disagree in length");

    Metrics m;
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto t = static_cast<std::size_t>(truth[i]);
        const auto p = static_cast<std::size_t>(predicted[i]);
        if (t == p) {
            ++correct;
            ++tp[t];
        } else {
            ++fn[t];
            if (p < num_classes) ++fp[p];
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

    double f1_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (tp[c] + fn[c] == 0) continue;
        ++present;
        f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    }
    m.macro_f1 = f1_sum / static_cast<double>(present);

    if (groups) {
        if (groups->size() != truth.size()) throw InputError("group tags and labels disagree in length");
        std::map<int, std::pair<std::size_t, std::size_t>> counts;  // group -> (correct, total)
        for (std::size_t i = 0; i < truth.size(); ++i) {
            auto& c = counts[(*groups)[i]];
            c.first += predicted[i] == truth[i] ? 1 : 0;
            ++c.second;
        }
        std::map<int, double> acc;
        double lo = 1.0, hi = 0.0;
        for (const auto& [g, c] : counts) {
            const double a = static_cast<double>(c.first) / static_cast<double>(c.second);
            acc[g] = a;
            lo = std::min(lo, a);
            hi = std::max(hi, a);
        }
        m.per_group_accuracy = std::move(acc);
        m.predictive_parity = hi - lo;
    }
    return m;
}

/// Argmax of the ensemble's mean prediction for each row of `x`.
inline std::vector<int> predict_labels(const Ensemble& ens, const Matrix& x) {
    Matrix mean = Matrix::Zero(x.rows(), static_cast<Eigen::Index>(ens.arch.num_classes));
    for (const auto& member : ens.members) mean += predict_proba(member, x);
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::Index best = 0;
        mean.row(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

inline Matrix rows_of(const Dataset& ds, std::span<const std::size_t> idx) { return detail::gather_rows(ds.features, idx); }

inline Metrics evaluate(const Ensemble& ens, const Dataset& ds, std::span<const std::size_t> test) {
    if (test.empty()) throw InputError("cannot evaluate on an empty test set");
    const auto predicted = predict_labels(ens, rows_of(ds, test));
    const auto truth = detail::gather(ds.labels, test);
    if (ds.subgroup) {
        const auto groups = detail::gather(*ds.subgroup, test);
        return compute_metrics(predicted, truth, ds.num_classes, std::span<const int>(groups));
    }
    return compute_metrics(predicted, truth, ds.num_classes);
}

// ---------------------------------------------------------------------------------------------
// Loop

inline ActiveState initial_state(const Dataset& ds, const LoopConfig& cfg, const RngState& trial_rng) {
    return ActiveState{make_splits(ds, cfg.initial_train, cfg.test_fraction, trial_rng), 0, {}, std::nullopt};
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline RunRecord blank_record(const ActiveState& state, const LoopConfig& cfg, const RngState& trial_rng) {
    RunRecord r;
    r.trial = trial_rng.label().trial;
    r.step = state.step;
    r.train_size = state.split.train.size();
    r.seed = trial_rng.seed();
    r.policy = std::string(to_string(cfg.policy.kind));
    r.score_kind = std::string(to_string(cfg.score_kind));
    r.beta = is_stochastic(cfg.policy.kind) ? cfg.policy.beta() : 0.0;
    return r;
}

/// Fresh (or warm-started) ensemble trained on the current labelled set.
inline Ensemble fit(ActiveState& state, const Dataset& ds, const LoopConfig& cfg, const RngState& step_rng) {
    Ensemble ens = (!cfg.reinit_each_step && state.model) ? *state.model
                                                          : init_ensemble(cfg.architecture(ds), cfg.ensemble_k, step_rng);
    const auto& train_idx = state.split.train;
    ens = train(std::move(ens), rows_of(ds, train_idx), detail::gather(ds.labels, train_idx), cfg.train, step_rng);
    if (!cfg.reinit_each_step) state.model = ens;
    return ens;
}

}  // namespace detail

struct StepOutcome {
    ActiveState state;
    RunRecord record;
    bool exhausted = false;  // pool could not supply a full batch; nothing was acquired
};

/// One acquisition step. The ensemble is trained on the current labelled set and evaluated on
/// the test set; the pool is then scored and `batch_size` candidates move from pool to train.
inline StepOutcome al_step(ActiveState state, const Dataset& ds, const LoopConfig& cfg, const RngState& trial_rng,
                           const LoopHooks& hooks = {}) {
    const RngState step_rng = trial_rng.with_step(state.step);
    RunRecord rec = detail::blank_record(state, cfg, trial_rng);

    auto t0 = detail::Clock::now();
    const Ensemble ens = detail::fit(state, ds, cfg, step_rng);
    rec.timings.train_s = detail::seconds_since(t0);
    rec.metrics = evaluate(ens, ds, state.split.test);
    if (hooks.observer) hooks.observer(ens, state);

    if (state.split.pool.size() < cfg.batch_size || state.split.pool.empty())
        return {std::move(state), std::move(rec), true};

    t0 = detail::Clock::now();
    const auto scores = hooks.scorer ? hooks.scorer(ens, ds, state.split.pool)
                                     : default_scorer(cfg.score_kind)(ens, ds, state.split.pool);
    rec.timings.score_s = detail::seconds_since(t0);
    if (scores.size() != state.split.pool.size()) throw InputError("scorer returned the wrong number of scores");
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    double mean = 0.0;
    for (double s : scores) mean += s;
    rec.scores = {*lo, mean / static_cast<double>(scores.size()), *hi};

    t0 = detail::Clock::now();
    const auto picked = acquire_batch(scores, cfg.policy, cfg.batch_size, step_rng.with_purpose(Purpose::Acquire));
    rec.timings.acquire_s = detail::seconds_since(t0);

    BatchSelection chosen;
    chosen.indices.reserve(picked.size());
    for (auto j : picked.indices) chosen.indices.push_back(state.split.pool[j]);
    rec.selected = chosen.indices;

    auto& pool = state.split.pool;
    std::vector<bool> take(pool.size(), false);
    for (auto j : picked.indices) take[j] = true;
    std::vector<std::size_t> remaining;
    remaining.reserve(pool.size() - picked.size());
    for (std::size_t j = 0; j < pool.size(); ++j)
        if (!take[j]) remaining.push_back(pool[j]);
    pool = std::move(remaining);

    auto& train_idx = state.split.train;
    train_idx.insert(train_idx.end(), chosen.indices.begin(), chosen.indices.end());
    std::sort(train_idx.begin(), train_idx.end());

    state.acquired_history.push_back(std::move(chosen));
    ++state.step;
    return {std::move(state), std::move(rec), false};
}

/// A full trial: num_steps acquisitions followed by a final train-and-evaluate record, so the
/// trajectory has num_steps + 1 records (fewer if the pool runs out).
inline std::vector<RunRecord> run_trial(const Dataset& ds, const LoopConfig& cfg, const RngState& trial_rng,
                                        const LoopHooks& hooks = {}) {
    ActiveState state = initial_state(ds, cfg, trial_rng);
    std::vector<RunRecord> records;
    records.reserve(cfg.num_steps + 1);
    for (std::size_t s = 0; s < cfg.num_steps; ++s) {
        auto out = al_step(std::move(state), ds, cfg, trial_rng, hooks);
        state = std::move(out.state);
        records.push_back(std::move(out.record));
        if (out.exhausted) return records;
    }
    // Final evaluation: train on the last labelled set, acquire nothing.
    const RngState step_rng = trial_rng.with_step(state.step);
    RunRecord rec = detail::blank_record(state, cfg, trial_rng);
    const auto t0 = detail::Clock::now();
    const Ensemble ens = detail::fit(state, ds, cfg, step_rng);
    rec.timings.train_s = detail::seconds_since(t0);
    rec.metrics = evaluate(ens, ds, state.split.test);
    if (hooks.observer) hooks.observer(ens, state);
    records.push_back(std::move(rec));
    return records;
}

struct ExperimentResult {
    std::vector<std::vector<RunRecord>> trials;
};

struct ExperimentOptions {
    unsigned threads = 1;
};

/// num_trials independent trials; trial t draws every random number from stream trial = t.
inline ExperimentResult run_experiment(const Dataset& ds, const LoopConfig& cfg, std::size_t num_trials,
                                       const RngState& rng, const LoopHooks& hooks = {},
                                       const ExperimentOptions& opts = {}) {
    ds.validate();
    cfg.validate_for(ds.size());
    if (num_trials == 0) throw ConfigError("experiment.num_trials", "must be positive");

    ExperimentResult result;
    result.trials.resize(num_trials);
    const auto run_one = [&](std::size_t t) {
        try {
            result.trials[t] = run_trial(ds, cfg, rng.with_trial(t), hooks);
        } catch (const Error& e) {
            throw Error("trial " + std::to_string(t) + ": " + e.what());
        }
    };

    const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(num_trials)));
    if (threads == 1) {
        for (std::size_t t = 0; t < num_trials; ++t) run_one(t);
        return result;
    }
    std::vector<std::exception_ptr> errors(num_trials);
    {
        std::vector<std::jthread> workers;
        for (unsigned w = 0; w < threads; ++w) {
            workers.emplace_back([&, w] {
                for (std::size_t t = w; t < num_trials; t += threads) {
                    try {
                        run_one(t);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return result;
}

// ---------------------------------------------------------------------------------------------
// Aggregation and output

struct AggregateRow {
    std::size_t step = 0;
    std::size_t train_size = 0;
    std::size_t trials = 0;
    double accuracy_mean = 0.0;
    double accuracy_ci95 = 0.0;  // normal-approximation half-width over trials
    double macro_f1_mean = 0.0;
    double macro_f1_ci95 = 0.0;
};

namespace detail {
inline std::pair<double, double> mean_ci95(std::span<const double> v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}
}  // namespace detail

/// Mean and 95% half-width at each step over the trials that reached it.
inline std::vector<AggregateRow> aggregate(const ExperimentResult& res) {
    std::size_t steps = 0;
    for (const auto& t : res.trials) steps = std::max(steps, t.size());
    std::vector<AggregateRow> rows;
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<double> acc, f1;
        AggregateRow row;
        row.step = s;
        for (const auto& t : res.trials) {
            if (s >= t.size()) continue;
            acc.push_back(t[s].metrics.accuracy);
            f1.push_back(t[s].metrics.macro_f1);
            row.train_size = t[s].train_size;
        }
        row.trials = acc.size();
        std::tie(row.accuracy_mean, row.accuracy_ci95) = detail::mean_ci95(acc);
        std::tie(row.macro_f1_mean, row.macro_f1_ci95) = detail::mean_ci95(f1);
        rows.push_back(row);
    }
    return rows;
}

/// Fraction of acquired points (over all steps of all trials) whose subgroup tag is `group`.
inline double selected_group_fraction(const ExperimentResult& res, const Dataset& ds, int group) {
    if (!ds.subgroup) throw InputError("dataset has no subgroup tags");
    std::size_t hit = 0, total = 0;
    for (const auto& t : res.trials)
        for (const auto& r : t)
            for (auto i : r.selected) {
                hit += (*ds.subgroup)[i] == group ? 1 : 0;
                ++total;
            }
    return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

inline nlohmann::json to_json(const RunRecord& r) {
    nlohmann::json j;
    j["trial"] = r.trial;
    j["step"] = r.step;
    j["train_size"] = r.train_size;
    j["policy"] = r.policy;
    j["score_kind"] = r.score_kind;
    j["beta"] = r.beta;
    j["seed"] = r.seed;
    j["selected"] = r.selected;
    j["scores"] = {{"min", r.scores.min}, {"mean", r.scores.mean}, {"max", r.scores.max}};
    nlohmann::json m = {{"accuracy", r.metrics.accuracy}, {"macro_f1", r.metrics.macro_f1}};
    if (r.metrics.per_group_accuracy) {
        nlohmann::json g = nlohmann::json::object();
        for (const auto& [k, v] : *r.metrics.per_group_accuracy) g[std::to_string(k)] = v;
        m["per_group_accuracy"] = std::move(g);
    }
    if (r.metrics.predictive_parity) m["predictive_parity"] = *r.metrics.predictive_parity;
    j["metrics"] = std::move(m);
    j["timings"] = {{"train_s", r.timings.train_s}, {"score_s", r.timings.score_s}, {"acquire_s", r.timings.acquire_s}};
    return j;
}

/// One JSON object per line, one line per step.
inline void write_jsonl(std::ostream& out, const ExperimentResult& res) {
    for (const auto& t : res.trials)
        for (const auto& r : t) out << to_json(r).dump() << '\n';
}

inline constexpr const char* kRunsCsvHeader =
    "policy,score_kind,beta,trial,step,train_size,accuracy,macro_f1,predictive_parity,t_train_s,t_score_s,"
    "t_acquire_s,seed";

namespace detail {
inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}
}  // namespace detail

/// One row per (trial, step). predictive_parity is empty when the dataset has no groups.
inline void write_runs_csv(std::ostream& out, const ExperimentResult& res, bool header = true) {
    if (header) out << kRunsCsvHeader << '\n';
    for (const auto& t : res.trials) {
        for (const auto& r : t) {
            out << r.policy << ',' << r.score_kind << ',' << detail::fmt_double(r.beta) << ',' << r.trial << ','
                << r.step << ',' << r.train_size << ',' << detail::fmt_double(r.metrics.accuracy) << ','
                << detail::fmt_double(r.metrics.macro_f1) << ','
                << (r.metrics.predictive_parity ? detail::fmt_double(*r.metrics.predictive_parity) : std::string())
                << ',' << detail::fmt_double(r.timings.train_s) << ',' << detail::fmt_double(r.timings.score_s) << ','
                << detail::fmt_double(r.timings.acquire_s) << ',' << r.seed << '\n';
        }
    }
}

inline void write_summary_csv(std::ostream& out, std::span<const AggregateRow> rows) {
    out << "step,train_size,trials,accuracy_mean,accuracy_ci95,macro_f1_mean,macro_f1_ci95\n";
    for (const auto& r : rows) {
        out << r.step << ',' << r.train_size << ',' << r.trials << ',' << detail::fmt_double(r.accuracy_mean) << ','
            << detail::fmt_double(r.accuracy_ci95) << ',' << detail::fmt_double(r.macro_f1_mean) << ','
            << detail::fmt_double(r.macro_f1_ci95) << '\n';
    }
}

}  // namespace stochal
