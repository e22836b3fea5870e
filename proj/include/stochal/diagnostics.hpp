#pragma once

// Investigations of how acquisition scores behave during active learning: rank-correlation decay,
// replay with stale scores, the shape of the sampling distributions, and acquisition runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stochal/active_loop.hpp"
#include "stochal/errors.hpp"
#include "stochal/sampling.hpp"

namespace stochal {

class UndefinedCorrelation : public InputError {
public:
    using InputError::InputError;
};

/// 1-based ranks, ascending; tied values share the average of their positions.
inline std::vector<double> fractional_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);  // mean of positions i+1 .. j
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

/// Spearman's rho: Pearson correlation of the fractional ranks.
inline double spearman_rho(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ParameterError("spearman_rho needs sequences of equal length");
    if (a.size() < 2) throw ParameterError("spearman_rho needs at least 2 observations");
    const auto ra = fractional_ranks(a);
    const auto rb = fractional_ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = 0.5 * (n + 1.0);  // identical for both rank vectors
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - mean;
        const double db = rb[i] - mean;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelation("rank correlation is undefined for a constant sequence");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Centred boxcar moving average of `width` points, truncated at the ends. For even widths the
/// window at i covers [i - width/2, i + width/2 - 1].
inline std::vector<double> parzen_smooth(std::span<const double> v, std::size_t width = 10) {
    if (width == 0) throw ParameterError("smoothing width must be positive");
    const auto n = static_cast<std::ptrdiff_t>(v.size());
    const auto before = static_cast<std::ptrdiff_t>(width / 2);
    const auto after = static_cast<std::ptrdiff_t>(width) - before - 1;
    std::vector<double> out(v.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - before);
        const auto hi = std::min<std::ptrdiff_t>(n - 1, i + after);
        const double anchor = v[static_cast<std::size_t>(lo)];
        double dev = 0.0, wmin = anchor, wmax = anchor;
        for (auto j = lo; j <= hi; ++j) {
            const double x = v[static_cast<std::size_t>(j)];
            dev += x - anchor;
            wmin = std::min(wmin, x);
            wmax = std::max(wmax, x);
        }
        out[static_cast<std::size_t>(i)] = std::clamp(anchor + dev / static_cast<double>(hi - lo + 1), wmin, wmax);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Rank trajectories

enum class RankSubset { Top1, Top10, Bottom1, Bottom10, All };

inline constexpr std::string_view to_string(RankSubset s) noexcept {
    switch (s) {
        case RankSubset::Top1: return "top1";
        case RankSubset::Top10: return "top10";
        case RankSubset::Bottom1: return "bottom1";
        case RankSubset::Bottom10: return "bottom10";
        case RankSubset::All: return "all";
    }
    return "?";
}

inline std::optional<RankSubset> parse_rank_subset(std::string_view s) {
    for (auto k : {RankSubset::Top1, RankSubset::Top10, RankSubset::Bottom1, RankSubset::Bottom10, RankSubset::All})
        if (s == to_string(k)) return k;
    return std::nullopt;
}

/// Positions (into `reference`) of the chosen subset, ranked by the reference scores.
inline std::vector<std::size_t> subset_members(std::span<const double> reference, RankSubset subset) {
    const std::size_t n = reference.size();
    const auto order = detail::descending_order(reference);
    const auto frac = [&](double f) { return static_cast<std::size_t>(std::ceil(f * static_cast<double>(n))); };
    std::size_t count = n;
    switch (subset) {
        case RankSubset::Top1:
        case RankSubset::Bottom1: count = frac(0.01); break;
        case RankSubset::Top10:
        case RankSubset::Bottom10: count = frac(0.10); break;
        case RankSubset::All: break;
    }
    if (count < 2)
        throw ParameterError("rank subset " + std::string(to_string(subset)) + " has fewer than 2 points");
    std::vector<std::size_t> out;
    if (subset == RankSubset::Bottom1 || subset == RankSubset::Bottom10)
        out.assign(order.end() - static_cast<std::ptrdiff_t>(count), order.end());
    else
        out.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.begin(), out.end());
    return out;
}

struct RankTrajectory {
    std::size_t reference_step = 0;
    RankSubset subset = RankSubset::All;
    std::vector<std::size_t> offsets;      // acquired samples since the reference step
    std::vector<std::size_t> train_sizes;  // labelled set size at each offset
    std::vector<double> rho;
    std::vector<double> rho_smoothed;      // parzen_smooth(rho, 10)
};

inline constexpr std::size_t kRankSmoothingWidth = 10;

/// Runs single-point acquisition from the reference step for `horizon` acquisitions and
/// correlates the test-set scores at every offset with those at the reference step, once per
/// requested subset (membership fixed by the reference ranks).
inline std::vector<RankTrajectory> rank_trajectories(const Dataset& ds, const LoopConfig& cfg, std::size_t reference_step,
                                                     std::size_t horizon, std::span<const RankSubset> subsets,
                                                     const RngState& trial_rng, const LoopHooks& hooks = {}) {
    if (cfg.batch_size != 1) throw ParameterError("rank trajectories use single-point acquisition (batch_size = 1)");
    ActiveState state = initial_state(ds, cfg, trial_rng);
    if (state.split.pool.size() < reference_step + horizon)
        throw ParameterError("pool too small for reference_step + horizon acquisitions");

    const Scorer eval_scorer = hooks.scorer ? hooks.scorer : default_scorer(cfg.score_kind);
    const auto test = state.split.test;
    std::vector<std::vector<double>> eval_scores;
    std::vector<std::size_t> sizes;

    LoopHooks step_hooks = hooks;
    step_hooks.observer = [&](const Ensemble& ens, const ActiveState& st) {
        if (hooks.observer) hooks.observer(ens, st);
        if (st.step < reference_step) return;
        eval_scores.push_back(eval_scorer(ens, ds, test));
        sizes.push_back(st.split.train.size());
    };
    for (std::size_t s = 0; s <= reference_step + horizon; ++s) {
        auto out = al_step(std::move(state), ds, cfg, trial_rng, step_hooks);
        state = std::move(out.state);
        if (out.exhausted) break;
    }

    if (eval_scores.empty()) throw ParameterError("loop ended before the reference step");
    std::vector<RankTrajectory> result;
    const auto& ref = eval_scores.front();
    for (auto subset : subsets) {
        const auto members = subset_members(ref, subset);
        std::vector<double> ref_sub;
        for (auto i : members) ref_sub.push_back(ref[i]);
        RankTrajectory tr;
        tr.reference_step = reference_step;
        tr.subset = subset;
        for (std::size_t n = 0; n < eval_scores.size(); ++n) {
            std::vector<double> cur;
            for (auto i : members) cur.push_back(eval_scores[n][i]);
            tr.offsets.push_back(n);
            tr.train_sizes.push_back(sizes[n]);
            tr.rho.push_back(n == 0 ? 1.0 : spearman_rho(ref_sub, cur));
        }
        tr.rho_smoothed = parzen_smooth(tr.rho, kRankSmoothingWidth);
        result.push_back(std::move(tr));
    }
    return result;
}

inline RankTrajectory rank_trajectory(const Dataset& ds, const LoopConfig& cfg, std::size_t reference_step,
                                      std::size_t horizon, RankSubset subset, const RngState& trial_rng,
                                      const LoopHooks& hooks = {}) {
    const RankSubset s[] = {subset};
    return std::move(rank_trajectories(ds, cfg, reference_step, horizon, s, trial_rng, hooks).front());
}

/// Mean of rho over offsets in [first, last].
inline double mean_rho(const RankTrajectory& tr, std::size_t first, std::size_t last) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < tr.offsets.size(); ++i) {
        if (tr.offsets[i] < first || tr.offsets[i] > last) continue;
        sum += tr.rho[i];
        ++n;
    }
    if (n == 0) throw ParameterError("no offsets in the requested range");
    return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------------------------
// Frozen-score replay

struct FrozenReplay {
    std::size_t freeze_step = 0;
    std::vector<std::size_t> train_sizes;
    std::vector<double> replay_accuracy;  // acquiring by descending scores frozen at freeze_step
    std::vector<double> fresh_accuracy;   // re-scoring after every acquisition

    /// Mean of fresh - replay accuracy over offsets 1..horizon (0 when horizon = 0).
    double deficit() const {
        if (train_sizes.size() < 2) return 0.0;
        double sum = 0.0;
        for (std::size_t i = 1; i < train_sizes.size(); ++i) sum += fresh_accuracy[i] - replay_accuracy[i];
        return sum / static_cast<double>(train_sizes.size() - 1);
    }
};

/// Runs the loop to `freeze_step` under the configured policy, then continues twice for `horizon`
/// top-1 acquisitions: once with the pool scores frozen at that step, once re-scoring at every
/// step. Both branches retrain with identical random streams.
inline FrozenReplay frozen_score_replay(const Dataset& ds, const LoopConfig& cfg, std::size_t freeze_step,
                                        std::size_t horizon, const RngState& trial_rng, const LoopHooks& hooks = {}) {
    if (cfg.batch_size != 1) throw ParameterError("frozen-score replay uses single-point acquisition (batch_size = 1)");
    ActiveState state = initial_state(ds, cfg, trial_rng);
    if (state.split.pool.size() < freeze_step + horizon)
        throw ParameterError("pool too small for freeze_step + horizon acquisitions");
    for (std::size_t s = 0; s < freeze_step; ++s) state = al_step(std::move(state), ds, cfg, trial_rng, hooks).state;

    const Scorer live = hooks.scorer ? hooks.scorer : default_scorer(cfg.score_kind);
    FrozenReplay out;
    out.freeze_step = freeze_step;
    LoopConfig top1 = cfg;
    top1.policy = AcquisitionPolicy::top_b();

    // fresh branch
    ActiveState fresh = state;
    for (std::size_t h = 0; h <= horizon; ++h) {
        auto step = al_step(std::move(fresh), ds, top1, trial_rng, hooks);
        fresh = std::move(step.state);
        out.train_sizes.push_back(step.record.train_size);
        out.fresh_accuracy.push_back(step.record.metrics.accuracy);
    }

    // replay branch: score once at the freeze step, then top-1 by the stale scores
    std::unordered_map<std::size_t, double> frozen;
    LoopHooks replay_hooks = hooks;
    replay_hooks.scorer = [&](const Ensemble& ens, const Dataset& d, std::span<const std::size_t> pool) {
        if (frozen.empty()) {
            const auto s = live(ens, d, pool);
            for (std::size_t i = 0; i < pool.size(); ++i) frozen.emplace(pool[i], s[i]);
            return s;
        }
        ScoreVector s(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) s[i] = frozen.at(pool[i]);
        return s;
    };
    ActiveState replay = std::move(state);
    for (std::size_t h = 0; h <= horizon; ++h) {
        auto step = al_step(std::move(replay), ds, top1, trial_rng, replay_hooks);
        replay = std::move(step.state);
        out.replay_accuracy.push_back(step.record.metrics.accuracy);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Score distributions

struct ScoreDistributionRow {
    PolicyKind kind = PolicyKind::Power;
    double beta = 1.0;
    std::size_t position = 0;   // 0 = highest score
    std::size_t candidate = 0;
    double score = 0.0;
    double probability = 0.0;
    double log_probability = 0.0;
};

/// Exact single-draw selection probabilities for every (kind, beta), candidates sorted by
/// descending score.
inline std::vector<ScoreDistributionRow> score_distribution(std::span<const double> scores,
                                                            std::span<const PolicyKind> kinds,
                                                            std::span<const double> betas) {
    detail::require_nonempty_finite(scores, "scores");
    const auto order = detail::descending_order(scores);
    std::vector<ScoreDistributionRow> rows;
    for (auto kind : kinds) {
        if (!is_stochastic(kind)) throw ParameterError("score distributions exist only for stochastic policies");
        for (double beta : betas) {
            if (!(beta > 0.0)) throw ParameterError("score distributions need beta > 0");
            const auto p = policy_probabilities(scores, AcquisitionPolicy{kind, Coldness(beta)});
            for (std::size_t pos = 0; pos < order.size(); ++pos) {
                const auto i = order[pos];
                rows.push_back({kind, beta, pos, i, scores[i], p[i], std::log(p[i])});
            }
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------------------------
// Benchmark

struct BenchmarkRecord {
    std::string policy;
    std::size_t pool_size = 0;
    std::size_t batch_size = 0;
    std::size_t repeats = 0;
    double median_s = 0.0;
    double mean_s = 0.0;
    double sd_s = 0.0;
};

struct ScalingFit {
    std::string policy;
    double slope_s_per_candidate = 0.0;
    double intercept_s = 0.0;
};

struct BenchmarkReport {
    std::vector<BenchmarkRecord> records;
    std::vector<ScalingFit> fits;

    const BenchmarkRecord& find(std::string_view policy, std::size_t m, std::size_t b) const {
        for (const auto& r : records)
            if (r.policy == policy && r.pool_size == m && r.batch_size == b) return r;
        throw ParameterError("no benchmark record for " + std::string(policy));
    }
};

struct BenchConfig {
    std::vector<std::size_t> pool_sizes{10'000, 100'000};
    std::vector<std::size_t> batch_sizes{10, 100, 500};
    std::vector<AcquisitionPolicy> policies{AcquisitionPolicy::top_b(), AcquisitionPolicy::softmax(1.0),
                                            AcquisitionPolicy::power(1.0), AcquisitionPolicy::soft_rank(1.0)};
    std::size_t repeats = 21;
    std::uint64_t seed = 0;
};

/// Ordinary least squares fit y = intercept + slope * x.
inline std::pair<double, double> least_squares(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
    return {my - slope * mx, slope};
}

/// Acquisition-only wall time on synthetic uniform(0, 1) score vectors. Repeats run
/// sequentially on the calling thread; each uses fresh noise.
inline BenchmarkReport bench_acquisition(const BenchConfig& cfg) {
    if (cfg.repeats == 0) throw ParameterError("repeats must be positive");
    const RngState base(cfg.seed);
    BenchmarkReport report;
    volatile std::size_t sink = 0;  // keeps the timed calls observable
    for (std::size_t m : cfg.pool_sizes) {
        ScoreVector scores(m);
        const auto srng = base.with_purpose(Purpose::Bench, m);
        for (std::size_t i = 0; i < m; ++i) scores[i] = srng.uniform(i);
        for (std::size_t b : cfg.batch_sizes) {
            if (b > m) throw ParameterError("benchmark batch size exceeds pool size");
            // policies alternate within each repeat so drift in machine speed hits them alike
            std::vector<std::vector<double>> all_times(cfg.policies.size());
            for (const auto& policy : cfg.policies)
                sink = sink + acquire_batch(scores, policy, b, base.with_step(0)).indices.front();  // warm-up
            for (std::size_t r = 0; r < cfg.repeats; ++r) {
                const auto rng = base.with_step(r + 1).with_purpose(Purpose::Acquire);
                for (std::size_t p = 0; p < cfg.policies.size(); ++p) {
                    const auto t0 = std::chrono::steady_clock::now();
                    const auto sel = acquire_batch(scores, cfg.policies[p], b, rng);
                    const auto t1 = std::chrono::steady_clock::now();
                    sink = sink + sel.indices.front();
                    all_times[p].push_back(std::max(1e-9, std::chrono::duration<double>(t1 - t0).count()));
                }
            }
            for (std::size_t p = 0; p < cfg.policies.size(); ++p) {
                const auto& policy = cfg.policies[p];
                const auto& times = all_times[p];
                BenchmarkRecord rec{policy.describe(), m, b, cfg.repeats, 0.0, 0.0, 0.0};
                auto sorted = times;
                std::sort(sorted.begin(), sorted.end());
                const std::size_t mid = sorted.size() / 2;
                rec.median_s = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
                std::tie(rec.mean_s, rec.sd_s) = [&] {
                    double mean = 0.0;
                    for (double t : times) mean += t;
                    mean /= static_cast<double>(times.size());
                    double ss = 0.0;
                    for (double t : times) ss += (t - mean) * (t - mean);
                    const double sd = times.size() > 1 ? std::sqrt(ss / static_cast<double>(times.size() - 1)) : 0.0;
                    return std::pair{mean, sd};
                }();
                report.records.push_back(std::move(rec));
            }
        }
    }
    for (const auto& policy : cfg.policies) {
        std::vector<double> xs, ys;
        const auto name = policy.describe();
        for (const auto& r : report.records) {
            if (r.policy != name) continue;
            xs.push_back(static_cast<double>(r.pool_size));
            ys.push_back(r.median_s);
        }
        const auto [intercept, slope] = least_squares(xs, ys);
        report.fits.push_back({name, slope, intercept});
    }
    return report;
}

// ---------------------------------------------------------------------------------------------
// CSV output. Every file starts with one '#' metadata line.

struct DiagnosticMetadata {
    std::string kind;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string timestamp;
    std::map<std::string, std::string> extra;
};

inline void write_metadata(std::ostream& out, const DiagnosticMetadata& meta) {
    out << "# diagnostic=" << meta.kind << " config_hash=" << meta.config_hash << " seed=" << meta.seed
        << " timestamp=" << meta.timestamp;
    for (const auto& [k, v] : meta.extra) out << ' ' << k << '=' << v;
    out << '\n';
}

inline void write_rank_csv(std::ostream& out, std::span<const RankTrajectory> trajectories, std::size_t seed_index = 0,
                           bool header = true) {
    if (header) out << "seed_index,subset,reference_step,offset,train_size,rho,rho_smoothed\n";
    for (const auto& tr : trajectories) {
        for (std::size_t i = 0; i < tr.offsets.size(); ++i) {
            out << seed_index << ',' << to_string(tr.subset) << ',' << tr.reference_step << ',' << tr.offsets[i] << ','
                << tr.train_sizes[i] << ',' << detail::fmt_double(tr.rho[i]) << ','
                << detail::fmt_double(tr.rho_smoothed[i]) << '\n';
        }
    }
}

inline void write_frozen_csv(std::ostream& out, std::span<const FrozenReplay> replays, std::size_t seed_index = 0,
                             bool header = true) {
    if (header) out << "seed_index,freeze_step,offset,train_size,replay_accuracy,fresh_accuracy\n";
    for (const auto& r : replays) {
        for (std::size_t i = 0; i < r.train_sizes.size(); ++i) {
            out << seed_index << ',' << r.freeze_step << ',' << i << ',' << r.train_sizes[i] << ','
                << detail::fmt_double(r.replay_accuracy[i]) << ',' << detail::fmt_double(r.fresh_accuracy[i]) << '\n';
        }
    }
}

inline void write_scoredist_csv(std::ostream& out, std::span<const ScoreDistributionRow> rows) {
    out << "policy,beta,position,candidate,score,probability,log_probability\n";
    for (const auto& r : rows) {
        out << to_string(r.kind) << ',' << detail::fmt_double(r.beta) << ',' << r.position << ',' << r.candidate << ','
            << detail::fmt_double(r.score) << ',' << detail::fmt_double(r.probability) << ','
            << detail::fmt_double(r.log_probability) << '\n';
    }
}

inline void write_bench_csv(std::ostream& out, const BenchmarkReport& report) {
    out << "policy,pool_size,batch_size,repeats,median_s,mean_s,sd_s\n";
    for (const auto& r : report.records) {
        out << r.policy << ',' << r.pool_size << ',' << r.batch_size << ',' << r.repeats << ','
            << detail::fmt_double(r.median_s) << ',' << detail::fmt_double(r.mean_s) << ','
            << detail::fmt_double(r.sd_s) << '\n';
    }
}

}  // namespace stochal
