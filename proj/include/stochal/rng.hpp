#pragma once

// Counter-based random numbers. A stream is identified by (seed, trial, step, purpose);
// the i-th draw of a stream is a pure function of that tuple and i, so per-candidate
// noise does not depend on the order in which candidates are visited.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace stochal {

/// What a random stream is used for. Distinct purposes never share draws.
enum class Purpose : std::uint64_t {
    None = 0,
    Split = 1,
    Init = 2,
    Shuffle = 3,
    Acquire = 4,
    AcquireFill = 5,
    Data = 6,
    Bench = 7,
    Test = 8,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t combine(std::uint64_t h, std::uint64_t v) noexcept {
    return splitmix64(h ^ splitmix64(v + 0x632be59bd9b4e019ULL));
}

}  // namespace detail

struct StreamLabel {
    std::uint64_t trial = 0;
    std::uint64_t step = 0;
    Purpose purpose = Purpose::None;
    std::uint64_t sub = 0;  // free slot: ensemble member, repeat index, ...

    friend bool operator==(const StreamLabel&, const StreamLabel&) = default;
};

/// Seed plus stream label. Immutable; derive() returns relabelled copies.
class RngState {
public:
    constexpr RngState() noexcept : RngState(0) {}
    constexpr explicit RngState(std::uint64_t seed, StreamLabel label = {}) noexcept
        : seed_(seed), label_(label), key_(make_key(seed, label)) {}

    constexpr std::uint64_t seed() const noexcept { return seed_; }
    constexpr const StreamLabel& label() const noexcept { return label_; }

    constexpr RngState with_trial(std::uint64_t trial) const noexcept {
        auto l = label_;
        l.trial = trial;
        return RngState(seed_, l);
    }
    constexpr RngState with_step(std::uint64_t step) const noexcept {
        auto l = label_;
        l.step = step;
        return RngState(seed_, l);
    }
    constexpr RngState with_purpose(Purpose p, std::uint64_t sub = 0) const noexcept {
        auto l = label_;
        l.purpose = p;
        l.sub = sub;
        return RngState(seed_, l);
    }

    /// 64 random bits at position `counter` of this stream.
    constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
        return detail::splitmix64(key_ + counter * 0xd1342543de82ef95ULL);
    }

    /// Uniform double on the open interval (0, 1).
    constexpr double uniform(std::uint64_t counter) const noexcept {
        return to_open_unit(bits(counter));
    }

    static constexpr double to_open_unit(std::uint64_t b) noexcept {
        const double u = static_cast<double>(b >> 11) * 0x1.0p-53;  // [0, 1 - 2^-53]
        return u > 0.0 ? u : std::numeric_limits<double>::denorm_min();
    }

private:
    static constexpr std::uint64_t make_key(std::uint64_t seed, const StreamLabel& l) noexcept {
        std::uint64_t h = detail::splitmix64(seed);
        h = detail::combine(h, l.trial);
        h = detail::combine(h, l.step);
        h = detail::combine(h, static_cast<std::uint64_t>(l.purpose));
        h = detail::combine(h, l.sub);
        return h;
    }

    std::uint64_t seed_;
    StreamLabel label_;
    std::uint64_t key_;
};

/// Sequential cursor over an RngState. Satisfies UniformRandomBitGenerator.
class RngStream {
public:
    using result_type = std::uint64_t;

    explicit RngStream(RngState state, std::uint64_t start = 0) noexcept : state_(state), counter_(start) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return state_.bits(counter_++); }

    double uniform() noexcept { return state_.uniform(counter_++); }

    /// Standard normal via Box-Muller (consumes two draws, no caching).
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n) by Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t x = (*this)();
            const __uint128_t m = static_cast<__uint128_t>(x) * n;
            if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    const RngState& state() const noexcept { return state_; }
    std::uint64_t position() const noexcept { return counter_; }

private:
    RngState state_;
    std::uint64_t counter_;
};

/// In-place Fisher-Yates shuffle driven by `rng`.
template <typename Range>
void shuffle(Range& range, RngStream& rng) {
    using std::begin;
    using std::end;
    auto first = begin(range);
    const auto n = static_cast<std::uint64_t>(end(range) - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = rng.below(i);
        using std::swap;
        swap(first[i - 1], first[j]);
    }
}

}  // namespace stochal
