#pragma once

// Stochastic batch acquisition: Gumbel-perturbed scores followed by top-k selection.
//
//   Softmax : key_i = s_i + eps_i          selects without replacement, p_i ∝ exp(beta * s_i)
//   Power   : key_i = log(s_i) + eps_i     p_i ∝ s_i^beta
//   SoftRank: key_i = -log(r_i) + eps_i    p_i ∝ r_i^(-beta), r_i = descending rank (1 = best)
//
// with eps_i ~ Gumbel(0, 1/beta) i.i.d. Taking the k largest keys yields an ordered sample
// without replacement from the corresponding categorical distribution.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <boost/random/exponential_distribution.hpp>

#include "stochal/errors.hpp"
#include "stochal/rng.hpp"

namespace stochal {

using ScoreVector = std::vector<double>;

/// Scores below this are treated as zero by the power policy.
inline constexpr double kPowerFloor = 1e-12;

enum class PolicyKind { TopB, Uniform, Softmax, Power, SoftRank };

inline constexpr std::string_view to_string(PolicyKind k) noexcept {
    switch (k) {
        case PolicyKind::TopB: return "topb";
        case PolicyKind::Uniform: return "uniform";
        case PolicyKind::Softmax: return "softmax";
        case PolicyKind::Power: return "power";
        case PolicyKind::SoftRank: return "softrank";
    }
    return "?";
}

inline std::optional<PolicyKind> parse_policy_kind(std::string_view s) {
    for (auto k : {PolicyKind::TopB, PolicyKind::Uniform, PolicyKind::Softmax, PolicyKind::Power,
                   PolicyKind::SoftRank}) {
        if (s == to_string(k)) return k;
    }
    if (s == "top-b" || s == "top_b") return PolicyKind::TopB;
    if (s == "soft-rank" || s == "soft_rank") return PolicyKind::SoftRank;
    return std::nullopt;
}

inline constexpr bool is_stochastic(PolicyKind k) noexcept {
    return k == PolicyKind::Softmax || k == PolicyKind::Power || k == PolicyKind::SoftRank;
}

/// Inverse Gumbel noise scale. Zero means uniform sampling.
class Coldness {
public:
    constexpr Coldness() noexcept = default;
    explicit Coldness(double beta) : beta_(beta) {
        if (!(beta >= 0.0) || !std::isfinite(beta))
            throw ParameterError("coldness must be finite and >= 0, got " + std::to_string(beta));
    }
    constexpr double value() const noexcept { return beta_; }
    constexpr bool is_zero() const noexcept { return beta_ == 0.0; }

private:
    double beta_ = 1.0;
};

struct AcquisitionPolicy {
    PolicyKind kind = PolicyKind::TopB;
    Coldness coldness{};

    static AcquisitionPolicy top_b() { return {PolicyKind::TopB, Coldness{}}; }
    static AcquisitionPolicy uniform() { return {PolicyKind::Uniform, Coldness{}}; }
    static AcquisitionPolicy softmax(double beta) { return {PolicyKind::Softmax, Coldness(beta)}; }
    static AcquisitionPolicy power(double beta) { return {PolicyKind::Power, Coldness(beta)}; }
    static AcquisitionPolicy soft_rank(double beta) { return {PolicyKind::SoftRank, Coldness(beta)}; }

    double beta() const noexcept { return coldness.value(); }

    /// "power(beta=1)", "topb", ...
    std::string describe() const {
        std::ostringstream os;
        os << to_string(kind);
        if (is_stochastic(kind)) os << "(beta=" << coldness.value() << ')';
        return os.str();
    }
};

/// Ordered, distinct candidate indices; front() was selected first.
struct BatchSelection {
    std::vector<std::size_t> indices;

    std::size_t size() const noexcept { return indices.size(); }
    bool empty() const noexcept { return indices.empty(); }
    std::size_t operator[](std::size_t i) const { return indices[i]; }

    friend bool operator==(const BatchSelection&, const BatchSelection&) = default;
};

// ---------------------------------------------------------------------------------------------
// Gumbel noise

/// mu - scale * log(-log(u)) for u on (0, 1).
inline double gumbel_from_uniform(double u, double mu, double scale) noexcept {
    return mu - scale * std::log(-std::log(u));
}

inline double gumbel_sample(RngStream& rng, double mu, double scale) {
    if (!(scale > 0.0)) throw ParameterError("gumbel scale must be > 0");
    return gumbel_from_uniform(rng.uniform(), mu, scale);
}

namespace detail {

/// Bits for candidate i: the first draw is counter i of the stream; the ziggurat's rare extra
/// draws use counters (k << 40) | i for k = 1, 2, ...
class CandidateBits {
public:
    using result_type = std::uint64_t;

    CandidateBits(const RngState& state, std::uint64_t index) noexcept : state_(state), index_(index) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return state_.bits((extra_++ << 40) | index_); }

private:
    const RngState& state_;
    std::uint64_t index_;
    std::uint64_t extra_ = 0;
};

inline constexpr std::size_t kMaxNoiseCandidates = std::size_t{1} << 40;

/// E_i ~ Exp(1) from candidate i's bits, kept above zero.
inline Eigen::ArrayXd exponential_draws(const RngState& rng, std::size_t n) {
    if (n > kMaxNoiseCandidates) throw ParameterError("too many candidates for per-candidate noise");
    Eigen::ArrayXd e(static_cast<Eigen::Index>(n));
    boost::random::exponential_distribution<double> exponential;
    for (std::size_t i = 0; i < n; ++i) {
        CandidateBits bits(rng, i);
        e[static_cast<Eigen::Index>(i)] = std::max(exponential(bits), std::numeric_limits<double>::denorm_min());
    }
    return e;
}

/// keys[i] += -scale * log(E_i).
inline void add_gumbel_noise(const RngState& rng, std::span<double> keys, double scale) {
    const auto e = exponential_draws(rng, keys.size());
    Eigen::Map<Eigen::ArrayXd>(keys.data(), static_cast<Eigen::Index>(keys.size())) -= scale * e.log();
}

}  // namespace detail

/// Gumbel(0, scale) noise where candidate i's value depends only on (rng, i).
inline std::vector<double> gumbel_noise(const RngState& rng, std::size_t n, double scale) {
    if (!(scale > 0.0)) throw ParameterError("gumbel scale must be > 0");
    std::vector<double> eps(n, 0.0);
    detail::add_gumbel_noise(rng, eps, scale);
    return eps;
}

// ---------------------------------------------------------------------------------------------
// Score preparation

namespace detail {

inline void require_nonempty_finite(std::span<const double> values, const char* what) {
    if (values.empty()) throw InputError(std::string(what) + " is empty");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]))
            throw InputError(std::string(what) + " has non-finite value at index " + std::to_string(i));
    }
}

/// Copy of scores with negatives clamped to zero, warning once per call if any were clamped.
inline std::vector<double> clamp_nonnegative(std::span<const double> scores, PolicyKind kind) {
    std::vector<double> out(scores.begin(), scores.end());
    std::size_t clamped = 0;
    for (auto& s : out) {
        if (s < 0.0) {
            s = 0.0;
            ++clamped;
        }
    }
    if (clamped > 0) {
        warn(std::to_string(clamped) + " negative score(s) clamped to 0 for " + std::string(to_string(kind)) +
             " acquisition");
    }
    return out;
}

inline double neg_log_rank(std::size_t rank) noexcept { return -std::log(static_cast<double>(rank)); }

/// Order by descending value, ascending index on ties.
inline std::vector<std::size_t> descending_order(std::span<const double> values) {
    std::vector<std::pair<double, std::size_t>> items(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) items[i] = {-values[i], i};
    std::sort(items.begin(), items.end());
    std::vector<std::size_t> order(values.size());
    for (std::size_t pos = 0; pos < items.size(); ++pos) order[pos] = items[pos].second;
    return order;
}

}  // namespace detail

/// Descending 1-based ranks; equal scores are ranked by ascending candidate index.
inline std::vector<double> descending_ranks(std::span<const double> scores) {
    const auto order = detail::descending_order(scores);
    std::vector<double> ranks(scores.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = static_cast<double>(pos + 1);
    return ranks;
}

/// Unperturbed keys (the location parameter each Gumbel variable is added to).
inline std::vector<double> base_keys(std::span<const double> scores, PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Softmax:
        case PolicyKind::TopB:
            return {scores.begin(), scores.end()};
        case PolicyKind::Power: {
            auto keys = detail::clamp_nonnegative(scores, kind);
            auto k = Eigen::Map<Eigen::ArrayXd>(keys.data(), static_cast<Eigen::Index>(keys.size()));
            k = k.max(kPowerFloor).log();
            for (std::size_t i = 0; i < keys.size(); ++i)
                if (!(scores[i] >= kPowerFloor)) keys[i] = -std::numeric_limits<double>::infinity();
            return keys;
        }
        case PolicyKind::SoftRank: {
            const auto order = detail::descending_order(detail::clamp_nonnegative(scores, kind));
            std::vector<double> keys(order.size());
            for (std::size_t pos = 0; pos < order.size(); ++pos) keys[order[pos]] = detail::neg_log_rank(pos + 1);
            return keys;
        }
        case PolicyKind::Uniform:
            return std::vector<double>(scores.size(), 0.0);
    }
    return {};
}

/// Perturbed keys using caller-supplied noise (already on the Gumbel(0, 1/beta) scale).
inline std::vector<double> perturb_with_noise(std::span<const double> scores, PolicyKind kind,
                                              std::span<const double> noise) {
    if (!is_stochastic(kind)) throw ParameterError("perturb requires softmax, power or softrank policy");
    detail::require_nonempty_finite(scores, "scores");
    if (noise.size() != scores.size()) throw ParameterError("noise length differs from score length");
    auto keys = base_keys(scores, kind);
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] += noise[i];
    return keys;
}

namespace detail {
inline std::vector<double> perturb_checked(std::span<const double> scores, const AcquisitionPolicy& policy,
                                          const RngState& rng) {
    auto keys = base_keys(scores, policy.kind);
    add_gumbel_noise(rng, keys, 1.0 / policy.beta());
    return keys;
}
}  // namespace detail

/// Perturbed keys with eps_i ~ Gumbel(0, 1/beta); eps_i depends only on (rng, i).
inline std::vector<double> perturb(std::span<const double> scores, const AcquisitionPolicy& policy,
                                   const RngState& rng) {
    if (!is_stochastic(policy.kind)) throw ParameterError("perturb requires softmax, power or softrank policy");
    if (policy.coldness.is_zero())
        throw ParameterError("perturb is undefined at beta = 0; use uniform acquisition");
    detail::require_nonempty_finite(scores, "scores");
    return detail::perturb_checked(scores, policy, rng);
}

// ---------------------------------------------------------------------------------------------
// Selection

namespace detail {
/// The k best (key, index) pairs, best first; exact ties go to the lower index.
inline BatchSelection take_best(std::vector<std::pair<double, std::size_t>>& items, std::size_t k) {
    const auto better = [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
    };
    const auto kth = items.begin() + static_cast<std::ptrdiff_t>(k);
    if (k > 0 && k < items.size()) std::nth_element(items.begin(), kth - 1, items.end(), better);
    std::sort(items.begin(), kth, better);
    BatchSelection out;
    out.indices.reserve(k);
    for (auto it = items.begin(); it != kth; ++it) out.indices.push_back(it->second);
    return out;
}
}  // namespace detail

/// Indices of the k largest keys, best first. Exact ties go to the lower index.
inline BatchSelection select_top_k(std::span<const double> keys, std::size_t k) {
    const std::size_t m = keys.size();
    if (k > m)
        throw ParameterError("cannot select " + std::to_string(k) + " of " + std::to_string(m) + " candidates");
    for (std::size_t i = 0; i < m; ++i) {
        if (std::isnan(keys[i])) throw InputError("NaN key at index " + std::to_string(i));
    }

    std::vector<std::pair<double, std::size_t>> items(m);
    for (std::size_t i = 0; i < m; ++i) items[i] = {keys[i], i};
    return detail::take_best(items, k);
}

namespace detail {

/// Same selection as select_top_k(perturb(scores, soft_rank, rng), b) without ranking the whole
/// pool: ranks past the first `head` only lower a key, so a candidate outside the head is ranked
/// exactly only when its noise could still lift it into the batch.
inline BatchSelection soft_rank_top_k(std::span<const double> raw_scores, const AcquisitionPolicy& policy,
                                      std::size_t b, const RngState& rng) {
    const auto scores = clamp_nonnegative(raw_scores, PolicyKind::SoftRank);
    const std::size_t m = scores.size();
    const std::size_t want = std::max<std::size_t>(1024, 8 * b);
    const auto eps = gumbel_noise(rng, m, 1.0 / policy.beta());
    const auto outranks = [&](std::size_t j, std::size_t i) {
        return scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    };

    // the head is every candidate scoring above v, so its ranks are exactly 1..head
    double v = -1.0;
    if (want < m / 4) {
        const std::size_t stride = m / 4096 + 1;
        std::vector<double> sample;
        for (std::size_t i = 0; i < m; i += stride) sample.push_back(scores[i]);
        const auto at = static_cast<std::size_t>(static_cast<double>(sample.size()) * static_cast<double>(want) /
                                                 static_cast<double>(m));
        std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(at), sample.end(),
                         std::greater<>());
        v = sample[at];
    }
    std::vector<std::size_t> top;
    for (std::size_t i = 0; i < m; ++i)
        if (scores[i] > v) top.push_back(i);
    if (top.size() < b || top.size() > 4 * want) return select_top_k(perturb_checked(scores, policy, rng), b);
    const std::size_t head = top.size();
    std::sort(top.begin(), top.end(), outranks);

    std::vector<std::pair<double, std::size_t>> items;
    items.reserve(head);
    for (std::size_t pos = 0; pos < head; ++pos) items.push_back({neg_log_rank(pos + 1) + eps[top[pos]], top[pos]});
    if (head == m) return take_best(items, b);

    std::vector<double> head_keys(items.size());
    for (std::size_t j = 0; j < items.size(); ++j) head_keys[j] = items[j].first;
    std::nth_element(head_keys.begin(), head_keys.begin() + static_cast<std::ptrdiff_t>(b - 1), head_keys.end(),
                     std::greater<>());
    const double threshold = head_keys[b - 1];
    const double bound = neg_log_rank(head + 1);

    std::vector<std::size_t> contenders;
    for (std::size_t i = 0; i < m; ++i) {
        if (scores[i] <= v && bound + eps[i] >= threshold) contenders.push_back(i);
    }
    if (contenders.size() > m / 8) return select_top_k(perturb_checked(scores, policy, rng), b);

    // rank of each contender: one pass over the pool, binary-searching the sorted contenders
    std::sort(contenders.begin(), contenders.end(), outranks);
    const std::size_t n = contenders.size();
    std::vector<double> cs(n);
    for (std::size_t q = 0; q < n; ++q) cs[q] = scores[contenders[q]];
    std::vector<std::size_t> outranked_from(n + 1, 0);
    constexpr std::size_t lanes = 16;  // independent searches interleaved
    for (std::size_t j0 = 0; n > 0 && j0 < m; j0 += lanes) {
        std::array<double, lanes> sv;
        std::array<std::size_t, lanes> base{};  // count of contenders scoring >= sv
        for (std::size_t l = 0; l < lanes; ++l)
            sv[l] = j0 + l < m ? scores[j0 + l] : std::numeric_limits<double>::infinity();
        for (std::size_t len = n; len > 1;) {
            const std::size_t half = len / 2;
            for (std::size_t l = 0; l < lanes; ++l)
                base[l] += cs[base[l] + half - 1] >= sv[l] ? half : 0;
            len -= half;
        }
        for (std::size_t l = 0; l < lanes && j0 + l < m; ++l) {
            const std::size_t j = j0 + l;
            std::size_t at = base[l] + static_cast<std::size_t>(cs[base[l]] >= sv[l]);
            // equal scores sit in index order; j only follows those with a lower or equal index
            while (at > 0 && cs[at - 1] == sv[l] && contenders[at - 1] > j) --at;
            ++outranked_from[at];
        }
    }
    std::size_t above = 0;
    for (std::size_t q = 0; q < n; ++q) {
        above += outranked_from[q];
        items.push_back({neg_log_rank(above + 1) + eps[contenders[q]], contenders[q]});
    }
    return take_best(items, b);
}

}  // namespace detail

/// b distinct indices from [0, m), uniformly without replacement (partial Fisher-Yates).
inline BatchSelection sample_uniform(std::size_t m, std::size_t b, const RngState& rng) {
    if (b > m) throw ParameterError("cannot sample " + std::to_string(b) + " of " + std::to_string(m));
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RngStream stream(rng);
    for (std::size_t i = 0; i < b; ++i) {
        const auto j = i + static_cast<std::size_t>(stream.below(m - i));
        std::swap(perm[i], perm[j]);
    }
    perm.resize(b);
    return {std::move(perm)};
}

/// Select a batch of b candidates under `policy`.
///
/// beta = 0 with a stochastic kind is uniform sampling. Under the power policy, candidates whose
/// score is below kPowerFloor are only taken once every positive candidate has been selected; the
/// shortfall is then filled uniformly at random from them.
inline BatchSelection acquire_batch(std::span<const double> scores, const AcquisitionPolicy& policy, std::size_t b,
                                    const RngState& rng) {
    if (scores.empty()) throw InputError("empty pool");
    const std::size_t m = scores.size();
    if (b > m) throw ParameterError("batch size " + std::to_string(b) + " exceeds pool size " + std::to_string(m));
    detail::require_nonempty_finite(scores, "scores");

    if (policy.kind == PolicyKind::TopB) return select_top_k(scores, b);
    if (policy.kind == PolicyKind::Uniform || policy.coldness.is_zero()) return sample_uniform(m, b, rng);

    if (policy.kind == PolicyKind::SoftRank) return detail::soft_rank_top_k(scores, policy, b, rng);
    const auto keys = detail::perturb_checked(scores, policy, rng);
    std::size_t finite = 0;
    for (double k : keys) finite += std::isfinite(k) ? 1 : 0;
    if (finite >= b) return select_top_k(keys, b);

    // Fewer positive candidates than requested: all of them first, then a uniform fill.
    auto selection = select_top_k(keys, finite);
    std::vector<std::size_t> rest;
    rest.reserve(m - finite);
    for (std::size_t i = 0; i < m; ++i) {
        if (!std::isfinite(keys[i])) rest.push_back(i);
    }
    const auto fill = sample_uniform(rest.size(), b - finite, rng.with_purpose(Purpose::AcquireFill));
    for (auto j : fill.indices) selection.indices.push_back(rest[j]);
    return selection;
}

// ---------------------------------------------------------------------------------------------
// Analytic distribution (test oracle)

/// Exact probability of drawing `selection` in that order when sampling without replacement
/// with probability proportional to `weights`.
inline double swor_batch_probability(std::span<const double> weights, const BatchSelection& selection) {
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
            throw ParameterError("weight " + std::to_string(i) + " is not a finite positive number");
        total += weights[i];
    }
    std::vector<bool> used(weights.size(), false);
    double p = 1.0;
    for (auto idx : selection.indices) {
        if (idx >= weights.size()) throw ParameterError("selection index out of range");
        if (used[idx]) throw ParameterError("selection indices are not distinct");
        p *= weights[idx] / total;
        total -= weights[idx];
        used[idx] = true;
    }
    return p;
}

/// log of the unnormalised selection weight each candidate gets under `policy`.
inline std::vector<double> policy_log_weights(std::span<const double> scores, const AcquisitionPolicy& policy) {
    detail::require_nonempty_finite(scores, "scores");
    const double beta = policy.beta();
    switch (policy.kind) {
        case PolicyKind::Uniform:
            return std::vector<double>(scores.size(), 0.0);
        case PolicyKind::TopB:
            throw ParameterError("top-b acquisition has no sampling distribution");
        default:
            break;
    }
    auto w = base_keys(scores, policy.kind);
    for (auto& v : w) {
        if (policy.coldness.is_zero())
            v = 0.0;
        else if (std::isfinite(v))
            v *= beta;
    }
    return w;
}

/// Normalised single-draw selection probabilities under `policy`.
inline std::vector<double> policy_probabilities(std::span<const double> scores, const AcquisitionPolicy& policy) {
    auto w = policy_log_weights(scores, policy);
    const double mx = *std::max_element(w.begin(), w.end());
    if (!std::isfinite(mx)) return std::vector<double>(w.size(), 1.0 / static_cast<double>(w.size()));
    double total = 0.0;
    for (auto& v : w) {
        v = std::isfinite(v) ? std::exp(v - mx) : 0.0;
        total += v;
    }
    for (auto& v : w) v /= total;
    return w;
}

}  // namespace stochal
