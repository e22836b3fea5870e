#pragma once

// Single-point acquisition scores from Monte-Carlo predictive samples. All logs are natural.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stochal/errors.hpp"
#include "stochal/sampling.hpp"

namespace stochal {

/// Class probabilities for M candidates under K posterior samples: shape (M, K, C), row-major.
class PredictiveSamples {
public:
    static constexpr double kRowTolerance = 1e-6;

    PredictiveSamples() = default;

    /// Validates shape and that every (candidate, sample) row is a probability vector.
    PredictiveSamples(std::size_t candidates, std::size_t samples, std::size_t classes, std::vector<double> probs)
        : m_(candidates), k_(samples), c_(classes), probs_(std::move(probs)) {
        if (k_ < 1) throw InputError("predictive samples need K >= 1");
        if (c_ < 2) throw InputError("predictive samples need C >= 2");
        if (probs_.size() != m_ * k_ * c_) throw InputError("predictive sample buffer has wrong size");
        for (std::size_t i = 0; i < m_; ++i) {
            for (std::size_t k = 0; k < k_; ++k) {
                const auto r = row(i, k);
                double sum = 0.0;
                for (double p : r) {
                    if (!(p >= 0.0) || p > 1.0 + kRowTolerance)
                        throw InputError("probability outside [0, 1] at candidate " + std::to_string(i));
                    sum += p;
                }
                if (std::abs(sum - 1.0) > kRowTolerance)
                    throw InputError("row (" + std::to_string(i) + ", " + std::to_string(k) +
                                     ") does not sum to 1");
            }
        }
    }

    /// Convenience for tests: rows[candidate][sample][class].
    static PredictiveSamples from_nested(const std::vector<std::vector<std::vector<double>>>& rows) {
        if (rows.empty() || rows.front().empty()) throw InputError("empty predictive samples");
        const std::size_t k = rows.front().size();
        const std::size_t c = rows.front().front().size();
        std::vector<double> flat;
        flat.reserve(rows.size() * k * c);
        for (const auto& cand : rows) {
            if (cand.size() != k) throw InputError("ragged sample dimension");
            for (const auto& r : cand) {
                if (r.size() != c) throw InputError("ragged class dimension");
                flat.insert(flat.end(), r.begin(), r.end());
            }
        }
        return PredictiveSamples(rows.size(), k, c, std::move(flat));
    }

    std::size_t candidates() const noexcept { return m_; }
    std::size_t samples() const noexcept { return k_; }
    std::size_t classes() const noexcept { return c_; }

    std::span<const double> row(std::size_t candidate, std::size_t sample) const {
        return {probs_.data() + (candidate * k_ + sample) * c_, c_};
    }

    const std::vector<double>& data() const noexcept { return probs_; }

private:
    std::size_t m_ = 0;
    std::size_t k_ = 0;
    std::size_t c_ = 0;
    std::vector<double> probs_;
};

enum class ScoreKind { Entropy, BALD };

inline constexpr std::string_view to_string(ScoreKind k) noexcept {
    return k == ScoreKind::BALD ? "bald" : "entropy";
}

inline std::optional<ScoreKind> parse_score_kind(std::string_view s) {
    if (s == "bald" || s == "BALD") return ScoreKind::BALD;
    if (s == "entropy") return ScoreKind::Entropy;
    return std::nullopt;
}

/// Shannon entropy; probabilities are clamped to [1e-12, 1] inside the log.
inline double entropy(std::span<const double> p) noexcept {
    double h = 0.0;
    for (double v : p) h -= v * std::log(std::clamp(v, 1e-12, 1.0));
    return h < 0.0 ? 0.0 : h;
}

namespace detail {
inline void check_candidate(const PredictiveSamples& s, std::size_t candidate) {
    if (candidate >= s.candidates())
        throw ParameterError("candidate " + std::to_string(candidate) + " out of range");
}
}  // namespace detail

/// Posterior predictive: average of the K sample rows.
inline std::vector<double> mean_prediction(const PredictiveSamples& samples, std::size_t candidate) {
    detail::check_candidate(samples, candidate);
    std::vector<double> mean(samples.classes(), 0.0);
    for (std::size_t k = 0; k < samples.samples(); ++k) {
        const auto r = samples.row(candidate, k);
        for (std::size_t c = 0; c < r.size(); ++c) mean[c] += r[c];
    }
    const double inv = 1.0 / static_cast<double>(samples.samples());
    for (auto& v : mean) v *= inv;
    return mean;
}

inline double entropy_score(const PredictiveSamples& samples, std::size_t candidate) {
    return entropy(mean_prediction(samples, candidate));
}

/// Mutual information between the label and the model parameters:
/// H[mean prediction] - mean_k H[sample k], clamped at zero.
inline double bald_score(const PredictiveSamples& samples, std::size_t candidate) {
    const auto first = samples.row(candidate, 0);
    bool agree = true;
    for (std::size_t k = 1; k < samples.samples() && agree; ++k) {
        const auto r = samples.row(candidate, k);
        agree = std::equal(r.begin(), r.end(), first.begin());
    }
    if (agree) return 0.0;
    const double total = entropy_score(samples, candidate);
    double expected = 0.0;
    for (std::size_t k = 0; k < samples.samples(); ++k) expected += entropy(samples.row(candidate, k));
    expected /= static_cast<double>(samples.samples());
    return std::max(0.0, total - expected);
}

inline ScoreVector score_pool(const PredictiveSamples& samples, ScoreKind kind) {
    ScoreVector out(samples.candidates());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = kind == ScoreKind::BALD ? bald_score(samples, i) : entropy_score(samples, i);
    return out;
}

}  // namespace stochal
