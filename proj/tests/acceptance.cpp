// Acceptance suite. One PASS/FAIL line per criterion; exit status 1 if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/distributions/students_t.hpp>

#include "stochal/cli.hpp"
#include "stochal/stochal.hpp"
#include "test_support.hpp"

using namespace stochal;
namespace fs = std::filesystem;

namespace {

// tolerances
constexpr double kExactnessTv = 0.01;
constexpr int kExactnessDraws = 200'000;
constexpr double kExactnessSeconds = 10.0;
constexpr double kOracleAgreement = 1e-12;
constexpr int kIdentityVectors = 1000;
constexpr std::size_t kIdentityMaxPool = 50;
constexpr std::size_t kIdentityMaxBatch = 10;
constexpr double kUniformAlpha = 0.001;
constexpr int kUniformDraws = 100'000;
constexpr double kColdBeta = 100.0;
constexpr double kTopBFrequency = 0.99;
constexpr int kTopBDraws = 10'000;
constexpr double kGumbelKs = 0.01;
constexpr int kGumbelDraws = 100'000;
constexpr int kSimplexTensors = 10'000;
constexpr double kGradientRelError = 1e-4;
constexpr double kFiniteDifferenceStep = 1e-5;
constexpr std::size_t kRedundancyTrials = 30;
constexpr double kPlateauFraction = 0.9;
constexpr double kOneSidedLevel = 0.9;
constexpr double kRedundancySeconds = 20.0 * 60.0;
constexpr std::size_t kAleatoricTrials = 20;
constexpr std::size_t kDiagnosticSeeds = 8;
constexpr double kRuntimeRatio = 2.0;
constexpr double kPoolGrowth = 15.0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        if (!detail.empty()) detail += "; ";
        detail += what;
        if (!ok) detail += " [x]";
    }
};

// --- 1 ------------------------------------------------------------------------------------------

Outcome sampler_exactness() {
    Outcome o;
    struct Case {
        AcquisitionPolicy policy;
        std::vector<double> scores;
        std::vector<double> weights;
    };
    const std::vector<Case> cases{
        {AcquisitionPolicy::softmax(1.0), {0.0, std::log(2.0), std::log(3.0), std::log(5.0)}, {1, 2, 3, 5}},
        {AcquisitionPolicy::power(1.0), {1, 2, 3, 5}, {1, 2, 3, 5}},
        // descending ranks of [1, 2, 3, 5] are [4, 3, 2, 1]
        {AcquisitionPolicy::soft_rank(1.0), {1, 2, 3, 5}, {1.0 / 4, 1.0 / 3, 1.0 / 2, 1.0}},
    };
    for (const auto& c : cases) {
        const auto t0 = std::chrono::steady_clock::now();
        std::map<std::vector<std::size_t>, double> empirical;
        const RngState rng(101, {0, 0, Purpose::Test});
        for (int i = 0; i < kExactnessDraws; ++i)
            empirical[acquire_batch(c.scores, c.policy, 2, rng.with_step(static_cast<std::uint64_t>(i))).indices] +=
                1.0 / kExactnessDraws;
        const double secs = seconds_since(t0);
        std::map<std::vector<std::size_t>, double> expected;
        double oracle_gap = 0.0;
        for (const auto& sel : testing::ordered_selections(4, 2)) {
            expected[sel] = swor_batch_probability(c.weights, {sel});
            oracle_gap = std::max(oracle_gap, std::abs(expected[sel] - testing::sequential_probability(c.weights, sel)));
        }
        const double tv = testing::total_variation(empirical, expected);
        const auto name = std::string(to_string(c.policy.kind));
        o.check(expected.size() == 12 && oracle_gap <= kOracleAgreement, name + fmt(" oracle gap %.1e", oracle_gap));
        o.check(tv <= kExactnessTv, name + fmt(" TV %.4f", tv));
        o.check(secs < kExactnessSeconds, name + fmt(" %.2fs", secs));
    }
    return o;
}

// --- 2 ------------------------------------------------------------------------------------------

Outcome key_identity() {
    Outcome o;
    RngStream gen(RngState(202, {0, 0, Purpose::Test}));
    int mismatches = 0;
    for (int rep = 0; rep < kIdentityVectors; ++rep) {
        const std::size_t m = 1 + gen.below(kIdentityMaxPool);
        const std::size_t b = 1 + gen.below(std::min(kIdentityMaxBatch, m));
        std::vector<double> s(m), logs(m);
        for (std::size_t i = 0; i < m; ++i) {
            s[i] = 1e-6 + 10.0 * gen.uniform();
            logs[i] = std::log(s[i]);
        }
        const double beta = 0.1 + 5.0 * gen.uniform();
        const RngState shared(static_cast<std::uint64_t>(rep), {0, 0, Purpose::Acquire});
        mismatches += acquire_batch(s, AcquisitionPolicy::power(beta), b, shared) !=
                      acquire_batch(logs, AcquisitionPolicy::softmax(beta), b, shared);
    }
    o.check(mismatches == 0, fmt("%d/%d vectors differ", mismatches, kIdentityVectors));
    return o;
}

// --- 3 ------------------------------------------------------------------------------------------

Outcome limits() {
    Outcome o;
    const std::vector<double> s{0.5, 1.5, 1.0, 3.0, 2.0, 2.5};
    const double critical = testing::chi_square_critical(s.size() - 1, kUniformAlpha);
    const auto top = acquire_batch(s, AcquisitionPolicy::top_b(), 3, RngState(0));
    for (auto kind : {PolicyKind::Softmax, PolicyKind::Power, PolicyKind::SoftRank}) {
        const auto name = std::string(to_string(kind));
        std::vector<std::size_t> counts(s.size(), 0);
        const RngState rng(303, {0, 0, Purpose::Test});
        for (int i = 0; i < kUniformDraws; ++i)
            ++counts[acquire_batch(s, {kind, Coldness(0.0)}, 2, rng.with_step(static_cast<std::uint64_t>(i)))[0]];
        const double chi = testing::chi_square_uniform(counts);
        o.check(chi < critical, name + fmt(" beta=0 chi2 %.2f < %.2f", chi, critical));

        int same = 0;
        const RngState cold(304, {0, 0, Purpose::Test});
        for (int i = 0; i < kTopBDraws; ++i)
            same += acquire_batch(s, {kind, Coldness(kColdBeta)}, 3, cold.with_step(static_cast<std::uint64_t>(i))) == top;
        const double freq = static_cast<double>(same) / kTopBDraws;
        o.check(freq >= kTopBFrequency, name + fmt(" beta=100 top-b %.4f", freq));
    }
    return o;
}

// --- 4 ------------------------------------------------------------------------------------------

Outcome gumbel_closure() {
    Outcome o;
    const auto cdf = [](double x) { return testing::gumbel_cdf(x, 3.0, 2.0); };
    RngStream rng(RngState(404, {0, 0, Purpose::Test}));
    std::vector<double> xs(kGumbelDraws);
    for (auto& x : xs) x = 2.0 * gumbel_sample(rng, 0.0, 1.0) + 3.0;
    const double ks = testing::ks_distance(xs, cdf);
    o.check(ks <= kGumbelKs, fmt("sampler KS %.4f", ks));
    // the acquisition noise path draws Gumbels differently
    auto noise = gumbel_noise(RngState(405, {0, 0, Purpose::Acquire}), kGumbelDraws, 1.0);
    for (auto& x : noise) x = 2.0 * x + 3.0;
    const double ks_noise = testing::ks_distance(noise, cdf);
    o.check(ks_noise <= kGumbelKs, fmt("acquisition noise KS %.4f", ks_noise));
    return o;
}

// --- 5 ------------------------------------------------------------------------------------------

Outcome scoring() {
    Outcome o;
    const auto disagree = PredictiveSamples::from_nested({{{1.0, 0.0}, {0.0, 1.0}}});
    const double b = bald_score(disagree, 0);
    o.check(b == std::numbers::ln2, fmt("bald([[1,0],[0,1]]) = %.17g", b));
    const auto same = PredictiveSamples::from_nested({{{0.3, 0.7}, {0.3, 0.7}, {0.3, 0.7}}});
    o.check(bald_score(same, 0) == 0.0, fmt("identical rows %.3g", bald_score(same, 0)));

    RngStream rng(RngState(505, {0, 0, Purpose::Test}));
    int violations = 0;
    for (int rep = 0; rep < kSimplexTensors; ++rep) {
        const std::size_t k = 1 + rng.below(10);
        const std::size_t c = 2 + rng.below(9);
        std::vector<double> flat(k * c);
        for (std::size_t r = 0; r < k; ++r) {
            // flat Dirichlet, occasionally sharpened to near-one-hot rows
            const double sharpen = rng.uniform() < 0.2 ? 8.0 : 1.0;
            double total = 0.0;
            for (std::size_t j = 0; j < c; ++j) total += flat[r * c + j] = std::pow(-std::log(rng.uniform()), sharpen);
            for (std::size_t j = 0; j < c; ++j) flat[r * c + j] /= total;
        }
        const PredictiveSamples s(1, k, c, std::move(flat));
        const double bald = bald_score(s, 0);
        const double h = entropy_score(s, 0);
        violations += !(0.0 <= bald && bald <= h && h <= std::log(static_cast<double>(c)) + kOracleAgreement);
    }
    o.check(violations == 0, fmt("%d/%d tensors break 0 <= BALD <= H <= ln C", violations, kSimplexTensors));
    return o;
}

// --- 6 ------------------------------------------------------------------------------------------

// Plain-loop forward pass and mean cross-entropy.
double reference_loss(const MlpParams& p, const Matrix& x, const std::vector<int>& y) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<double> h(static_cast<std::size_t>(x.cols()));
        for (Eigen::Index j = 0; j < x.cols(); ++j) h[static_cast<std::size_t>(j)] = x(i, j);
        for (std::size_t l = 0; l < p.layers.size(); ++l) {
            const auto& w = p.layers[l].weights;
            std::vector<double> z(static_cast<std::size_t>(w.cols()));
            for (Eigen::Index out = 0; out < w.cols(); ++out) {
                double acc = p.layers[l].bias(out);
                for (Eigen::Index in = 0; in < w.rows(); ++in) acc += h[static_cast<std::size_t>(in)] * w(in, out);
                z[static_cast<std::size_t>(out)] = l + 1 < p.layers.size() ? std::max(0.0, acc) : acc;
            }
            h = std::move(z);
        }
        const double mx = *std::max_element(h.begin(), h.end());
        double s = 0.0;
        for (double v : h) s += std::exp(v - mx);
        total += mx + std::log(s) - h[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
    }
    return total / static_cast<double>(x.rows());
}

Outcome gradient_check() {
    Outcome o;
    const MlpArchitecture arch{2, {3}, 2};
    auto params = init_ensemble(arch, 1, RngState(606)).members[0];
    RngStream rng(RngState(606, {0, 0, Purpose::Test}));
    for (auto& l : params.layers)
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = 0.1 * rng.normal();
    Matrix x(5, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const std::vector<int> y{0, 1, 1, 0, 1};

    const auto analytic = loss_and_gradient(params, x, y).gradient;
    const double h = kFiniteDifferenceStep;
    double worst = 0.0;
    std::size_t checked = 0;
    const auto check = [&](double& param, double grad) {
        const double saved = param;
        param = saved + h;
        const double up = reference_loss(params, x, y);
        param = saved - h;
        const double down = reference_loss(params, x, y);
        param = saved;
        const double fd = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - grad) / std::max({std::abs(fd), std::abs(grad), 1e-8}));
        ++checked;
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& w = params.layers[l].weights;
        for (Eigen::Index i = 0; i < w.size(); ++i) check(w.data()[i], analytic.layers[l].weights.data()[i]);
        auto& b = params.layers[l].bias;
        for (Eigen::Index i = 0; i < b.size(); ++i) check(b.data()[i], analytic.layers[l].bias.data()[i]);
    }
    o.check(checked == 17, fmt("%zu parameters", checked));
    o.check(worst < kGradientRelError, fmt("max relative error %.2e", worst));
    return o;
}

// --- 7, 8 ---------------------------------------------------------------------------------------

LoopConfig experiment_loop(ScoreKind score, std::size_t initial_train) {
    LoopConfig cfg;
    cfg.score_kind = score;
    cfg.batch_size = 10;
    cfg.num_steps = 15;
    cfg.ensemble_k = 10;
    cfg.initial_train = initial_train;
    cfg.hidden_dims = {32};
    return cfg;
}

std::vector<double> mean_curve(const ExperimentResult& r) {
    std::vector<double> curve(r.trials.front().size(), 0.0);
    for (const auto& t : r.trials)
        for (std::size_t s = 0; s < t.size(); ++s) curve[s] += t[s].metrics.accuracy / static_cast<double>(r.trials.size());
    return curve;
}

/// Labels needed to reach `target` accuracy; one batch past the budget when never reached.
double labels_to_reach(const std::vector<RunRecord>& trial, double target, std::size_t batch) {
    for (const auto& rec : trial)
        if (rec.metrics.accuracy >= target) return static_cast<double>(rec.train_size);
    return static_cast<double>(trial.back().train_size + batch);
}

Outcome redundancy() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    const auto ds = gen_repeated_clusters(4, 40, 4, 0.1, 64, RngState(707));
    auto cfg = experiment_loop(ScoreKind::BALD, 8);
    cfg.policy = AcquisitionPolicy::power(1.0);
    const auto power = run_experiment(ds, cfg, kRedundancyTrials, RngState(708));
    cfg.policy = AcquisitionPolicy::top_b();
    const auto topb = run_experiment(ds, cfg, kRedundancyTrials, RngState(708));
    const double secs = seconds_since(t0);

    const auto pc = mean_curve(power), tc = mean_curve(topb);
    o.check(pc.back() >= tc.back(), fmt("final accuracy power %.4f topb %.4f", pc.back(), tc.back()));

    const double plateau = std::max(*std::max_element(pc.begin(), pc.end()), *std::max_element(tc.begin(), tc.end()));
    const double target = kPlateauFraction * plateau;
    std::vector<double> diff;
    double lp = 0.0, lt = 0.0;
    for (std::size_t t = 0; t < kRedundancyTrials; ++t) {
        const double a = labels_to_reach(power.trials[t], target, cfg.batch_size);
        const double b = labels_to_reach(topb.trials[t], target, cfg.batch_size);
        lp += a / kRedundancyTrials;
        lt += b / kRedundancyTrials;
        diff.push_back(b - a);
    }
    double mean = 0.0, ss = 0.0;
    for (double d : diff) mean += d / static_cast<double>(diff.size());
    for (double d : diff) ss += (d - mean) * (d - mean);
    const double n = static_cast<double>(diff.size());
    const double se = std::sqrt(ss / (n - 1.0) / n);
    const double tq = boost::math::quantile(boost::math::students_t(n - 1.0), kOneSidedLevel);
    const double lower = mean - tq * se;
    o.check(lp <= lt, fmt("labels to %.3f: power %.1f topb %.1f", target, lp, lt));
    o.check(lower >= 0.0, fmt("paired topb-power lower bound %.2f", lower));
    o.check(secs < kRedundancySeconds, fmt("%.0fs", secs));
    return o;
}

Outcome aleatoric() {
    Outcome o;
    const auto ds = gen_high_aleatoric(0.3, 4, 1000, 2, RngState(808));
    auto cfg = experiment_loop(ScoreKind::Entropy, 20);
    const auto summarise = [&](const AcquisitionPolicy& policy) {
        cfg.policy = policy;
        const auto r = run_experiment(ds, cfg, kAleatoricTrials, RngState(809));
        double acc = 0.0, occluded = 0.0;
        for (const auto& t : r.trials) {
            acc += t.back().metrics.accuracy / kAleatoricTrials;
            std::size_t hit = 0, total = 0;
            for (const auto& rec : t)
                for (auto i : rec.selected) {
                    ++total;
                    hit += (*ds.subgroup)[i] == 1;
                }
            occluded += static_cast<double>(hit) / static_cast<double>(total) / kAleatoricTrials;
        }
        return std::pair{acc, occluded};
    };
    const auto [pa, po] = summarise(AcquisitionPolicy::power(1.0));
    const auto [ta, to] = summarise(AcquisitionPolicy::top_b());
    o.check(pa >= ta, fmt("final accuracy power %.4f topb %.4f", pa, ta));
    o.check(to > po, fmt("occluded picks topb %.3f power %.3f", to, po));
    return o;
}

// --- 9, 10 --------------------------------------------------------------------------------------

LoopConfig single_point_loop() {
    LoopConfig cfg;
    cfg.policy = AcquisitionPolicy::top_b();
    cfg.score_kind = ScoreKind::BALD;
    cfg.batch_size = 1;
    cfg.num_steps = 1;
    cfg.ensemble_k = 10;
    cfg.initial_train = 20;
    cfg.hidden_dims = {32};
    return cfg;
}

Outcome rank_decay() {
    Outcome o;
    const auto ds = gen_repeated_clusters(4, 40, 4, 0.1, 16, RngState(909));
    const auto cfg = single_point_loop();
    double early = 0.0, late = 0.0;
    for (std::size_t s = 0; s < kDiagnosticSeeds; ++s) {
        const auto tr = rank_trajectory(ds, cfg, 0, 50, RankSubset::All, RngState(910).with_trial(s));
        early += mean_rho(tr, 1, 10) / kDiagnosticSeeds;
        late += mean_rho(tr, 40, 50) / kDiagnosticSeeds;
    }
    o.check(early > late, fmt("rho offsets 1-10 %.3f, 40-50 %.3f over %zu seeds", early, late, kDiagnosticSeeds));
    return o;
}

Outcome frozen_replay() {
    Outcome o;
    const auto ds = gen_repeated_clusters(4, 40, 4, 0.1, 16, RngState(1010));
    const auto cfg = single_point_loop();
    constexpr std::size_t kLateStep = 40, kHorizon = 20;
    double early = 0.0, late = 0.0;
    for (std::size_t s = 0; s < kDiagnosticSeeds; ++s) {
        const auto rng = RngState(1011).with_trial(s);
        early += frozen_score_replay(ds, cfg, 0, kHorizon, rng).deficit() / kDiagnosticSeeds;
        late += frozen_score_replay(ds, cfg, kLateStep, kHorizon, rng).deficit() / kDiagnosticSeeds;
    }
    o.check(early >= late, fmt("deficit frozen at 20 labels %.4f, at 60 labels %.4f", early, late));
    return o;
}

// --- 11 -----------------------------------------------------------------------------------------

Outcome runtime() {
    Outcome o;
    BenchConfig cfg;
    cfg.pool_sizes = {10'000, 100'000};
    cfg.batch_sizes = {10, 100, 500};
    cfg.repeats = 31;
    cfg.seed = 1111;
    const auto report = bench_acquisition(cfg);
    for (std::size_t b : cfg.batch_sizes) {
        const double top = report.find("topb", 100'000, b).median_s;
        for (const auto& p : cfg.policies) {
            if (p.kind == PolicyKind::TopB) continue;
            const auto name = p.describe();
            const double big = report.find(name, 100'000, b).median_s;
            const double small = report.find(name, 10'000, b).median_s;
            o.check(big <= kRuntimeRatio * top, fmt("%s B=%zu %.2fx topb", std::string(to_string(p.kind)).c_str(), b, big / top));
            o.check(big <= kPoolGrowth * small, fmt("%s B=%zu M x10 -> %.1fx", std::string(to_string(p.kind)).c_str(), b, big / small));
        }
    }
    return o;
}

// --- 12 -----------------------------------------------------------------------------------------

std::vector<std::string> lines_of(const fs::path& p) {
    std::vector<std::string> out;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::string csv_without(const fs::path& p, const std::vector<std::string>& drop) {
    std::ostringstream out;
    std::vector<bool> keep;
    bool header = true;
    for (const auto& line : lines_of(p)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (header)
            for (const auto& c : cells) keep.push_back(std::find(drop.begin(), drop.end(), c) == drop.end());
        header = false;
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (i >= keep.size() || keep[i]) out << cells[i] << ',';
        out << '\n';
    }
    return out.str();
}

std::string jsonl_without_timings(const fs::path& p) {
    std::ostringstream out;
    for (const auto& line : lines_of(p)) {
        auto j = nlohmann::json::parse(line);
        j.erase("timings");
        out << j.dump() << '\n';
    }
    return out.str();
}

Outcome determinism() {
    Outcome o;
    const fs::path root = fs::temp_directory_path() / ("stochal_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "config.yaml") << "seed: 1212\n"
                                           "trials: 3\n"
                                           "dataset:\n  generator: repeated-clusters\n  classes: 4\n"
                                           "  points_per_class: 10\n  repetitions: 4\n  dims: 4\n"
                                           "loop:\n  policy: power\n  beta: 1\n  batch_size: 5\n  num_steps: 4\n"
                                           "  ensemble_k: 3\n"
                                           "split:\n  initial_train: 8\n"
                                           "model:\n  hidden_dims: [16]\n"
                                           "train:\n  max_epochs: 30\n";
    std::vector<fs::path> dirs;
    for (int i = 0; i < 2; ++i) {
        const std::string config = (root / "config.yaml").string(), out = (root / "out").string();
        const char* argv[] = {"stochal", "run", "--config", config.c_str(), "--out", out.c_str(), "--quiet"};
        std::ostringstream so, se;
        const int code = cli::run_cli(7, argv, so, se);
        o.check(code == 0, fmt("run %d exit %d", i + 1, code));
        if (code != 0) return o;
        dirs.emplace_back(so.str().substr(0, so.str().find('\n')));
    }
    const std::vector<std::string> timing{"t_train_s", "t_score_s", "t_acquire_s"};
    o.check(dirs[0] != dirs[1], "separate output directories");
    o.check(jsonl_without_timings(dirs[0] / "runs.jsonl") == jsonl_without_timings(dirs[1] / "runs.jsonl"), "runs.jsonl");
    o.check(csv_without(dirs[0] / "runs.csv", timing) == csv_without(dirs[1] / "runs.csv", timing), "runs.csv");
    o.check(csv_without(dirs[0] / "summary.csv", timing) == csv_without(dirs[1] / "summary.csv", timing), "summary.csv");
    o.check(lines_of(dirs[0] / "config.yaml") == lines_of(dirs[1] / "config.yaml"), "config.yaml");
    fs::remove_all(root);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"sampler exactness", sampler_exactness},
        {"power/softmax key identity", key_identity},
        {"coldness limits", limits},
        {"gumbel closure", gumbel_closure},
        {"scoring correctness", scoring},
        {"gradient check", gradient_check},
        {"redundancy experiment", redundancy},
        {"aleatoric experiment", aleatoric},
        {"rank decay", rank_decay},
        {"frozen-score replay", frozen_replay},
        {"acquisition runtime", runtime},
        {"determinism", determinism},
    };
    // optional list of criterion numbers to run
    std::vector<bool> selected(criteria.size(), argc == 1);
    for (int i = 1; i < argc; ++i) {
        const int k = std::atoi(argv[i]);
        if (k >= 1 && static_cast<std::size_t>(k) <= criteria.size()) selected[static_cast<std::size_t>(k - 1)] = true;
    }
    set_warning_handler([](const std::string&) {});
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!selected[i]) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.check(false, std::string("threw: ") + e.what());
        }
        failed += !o.pass;
        std::printf("%s %2zu %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, seconds_since(t0),
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
