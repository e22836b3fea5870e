#pragma once

// Synthetic tabular datasets and CSV ingestion.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stochal/errors.hpp"
#include "stochal/rng.hpp"

namespace stochal {

struct Dataset {
    Eigen::MatrixXd features;               // N x d
    std::vector<int> labels;                // N, in [0, num_classes)
    std::optional<std::vector<int>> subgroup;
    std::string name;
    std::size_t num_classes = 2;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dims() const noexcept { return static_cast<std::size_t>(features.cols()); }

    void validate() const {
        if (static_cast<std::size_t>(features.rows()) != labels.size())
            throw InputError("dataset feature rows and labels disagree in length");
        if (num_classes < 2) throw SchemaError("dataset needs at least 2 classes");
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
                throw SchemaError("label out of range at row " + std::to_string(i));
        }
        if (subgroup && subgroup->size() != labels.size())
            throw InputError("subgroup tags and labels disagree in length");
    }
};

/// Index sets of one active-learning run; each set is sorted ascending.
struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> pool;
    std::vector<std::size_t> test;

    bool pool_empty() const noexcept { return pool.empty(); }
};

/// Default distance between neighbouring class means.
inline constexpr double kClassSeparation = 6.0;

/// Class means with pairwise (d >= C) or neighbouring (d < C) distance `separation`.
///
/// d >= C: scaled standard basis vectors (a regular simplex). 2 <= d < C: regular polygon in the
/// first two coordinates. d = 1: evenly spaced on a line.
inline Eigen::MatrixXd class_means(std::size_t num_classes, std::size_t dims, double separation = kClassSeparation) {
    if (num_classes < 2) throw ParameterError("need at least 2 classes");
    if (dims < 1) throw ParameterError("need at least 1 feature dimension");
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(dims));
    const auto c_count = static_cast<Eigen::Index>(num_classes);
    if (dims >= num_classes) {
        for (Eigen::Index c = 0; c < c_count; ++c) means(c, c) = separation / std::numbers::sqrt2;
    } else if (dims >= 2) {
        const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(num_classes)));
        for (Eigen::Index c = 0; c < c_count; ++c) {
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(num_classes);
            means(c, 0) = radius * std::cos(angle);
            means(c, 1) = radius * std::sin(angle);
        }
    } else {
        for (Eigen::Index c = 0; c < c_count; ++c)
            means(c, 0) = separation * (static_cast<double>(c) - 0.5 * static_cast<double>(num_classes - 1));
    }
    return means;
}

namespace detail {
inline void fill_normal(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, RngStream& rng, double sd) {
    for (Eigen::Index j = 0; j < row.size(); ++j) row(j) += sd * rng.normal();
}
}  // namespace detail

/// Unit-variance Gaussian blobs; example i has class i mod C.
inline Dataset gen_blobs(std::size_t num_classes, std::size_t n_total, std::size_t dims, const RngState& rng) {
    const auto means = class_means(num_classes, dims);
    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = num_classes;
    ds.features.resize(static_cast<Eigen::Index>(n_total), static_cast<Eigen::Index>(dims));
    ds.labels.resize(n_total);
    RngStream feat(rng.with_purpose(Purpose::Data, 0));
    for (std::size_t i = 0; i < n_total; ++i) {
        const auto c = static_cast<int>(i % num_classes);
        ds.labels[i] = c;
        ds.features.row(static_cast<Eigen::Index>(i)) = means.row(c);
        detail::fill_normal(ds.features.row(static_cast<Eigen::Index>(i)), feat, 1.0);
    }
    return ds;
}

/// C blobs of n points each, then every base point repeated R-1 more times with isotropic
/// Gaussian jitter of standard deviation `noise_sd`. Rows are ordered repetition-major:
/// rows [r*C*n, (r+1)*C*n) hold repetition r, repetition 0 being the base set.
inline Dataset gen_repeated_clusters(std::size_t num_classes, std::size_t points_per_class, std::size_t repetitions,
                                     double noise_sd, std::size_t dims, const RngState& rng) {
    if (num_classes < 2) throw ParameterError("repeated-clusters needs C >= 2");
    if (points_per_class < 1) throw ParameterError("repeated-clusters needs n >= 1");
    if (repetitions < 1) throw ParameterError("repeated-clusters needs R >= 1");
    if (!(noise_sd >= 0.0)) throw ParameterError("noise_sd must be >= 0");

    const std::size_t base_n = num_classes * points_per_class;
    Dataset base = gen_blobs(num_classes, base_n, dims, rng);

    Dataset ds;
    ds.name = "repeated-clusters";
    ds.num_classes = num_classes;
    ds.features.resize(static_cast<Eigen::Index>(base_n * repetitions), static_cast<Eigen::Index>(dims));
    ds.labels.resize(base_n * repetitions);
    RngStream jitter(rng.with_purpose(Purpose::Data, 1));
    for (std::size_t r = 0; r < repetitions; ++r) {
        for (std::size_t i = 0; i < base_n; ++i) {
            const auto row = static_cast<Eigen::Index>(r * base_n + i);
            ds.features.row(row) = base.features.row(static_cast<Eigen::Index>(i));
            if (r > 0 && noise_sd > 0.0) detail::fill_normal(ds.features.row(row), jitter, noise_sd);
            ds.labels[static_cast<std::size_t>(row)] = base.labels[i];
        }
    }
    return ds;
}

/// Two subgroups per class. Subgroup 0 holds round(majority_fraction * N) examples at the usual
/// class means; subgroup 1 sits `group_shift` away along the last axis with the class means
/// rotated by one, so it has to be learned from its own examples.
inline Dataset gen_imbalanced_groups(double majority_fraction, std::size_t num_classes, std::size_t n_total,
                                     std::size_t dims, const RngState& rng, double group_shift = kClassSeparation) {
    if (!(majority_fraction > 0.5 && majority_fraction < 1.0))
        throw ParameterError("majority_fraction must be in (0.5, 1)");
    const auto means = class_means(num_classes, dims);
    const auto n_major = static_cast<std::size_t>(std::llround(majority_fraction * static_cast<double>(n_total)));

    Dataset ds;
    ds.name = "imbalanced-groups";
    ds.num_classes = num_classes;
    ds.features.resize(static_cast<Eigen::Index>(n_total), static_cast<Eigen::Index>(dims));
    ds.labels.resize(n_total);
    ds.subgroup.emplace(n_total, 0);
    RngStream feat(rng.with_purpose(Purpose::Data, 0));
    for (std::size_t i = 0; i < n_total; ++i) {
        const bool minority = i >= n_major;
        const std::size_t local = minority ? i - n_major : i;
        const auto c = static_cast<int>(local % num_classes);
        const auto row = static_cast<Eigen::Index>(i);
        ds.labels[i] = c;
        (*ds.subgroup)[i] = minority ? 1 : 0;
        if (minority) {
            ds.features.row(row) = means.row(static_cast<Eigen::Index>((static_cast<std::size_t>(c) + 1) % num_classes));
            ds.features(row, ds.features.cols() - 1) += group_shift;
        } else {
            ds.features.row(row) = means.row(c);
        }
        detail::fill_normal(ds.features.row(row), feat, 1.0);
    }
    return ds;
}

/// Blobs where each example is independently occluded with probability `occlusion_fraction`:
/// its features are replaced by unit-variance noise around the centroid of all class means and
/// its label is drawn uniformly. Occluded examples carry subgroup tag 1.
inline Dataset gen_high_aleatoric(double occlusion_fraction, std::size_t num_classes, std::size_t n_total,
                                  std::size_t dims, const RngState& rng) {
    if (!(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0))
        throw ParameterError("occlusion_fraction must be in [0, 1)");
    Dataset ds = gen_blobs(num_classes, n_total, dims, rng);
    ds.name = "high-aleatoric";
    ds.subgroup.emplace(n_total, 0);
    const Eigen::RowVectorXd centroid = class_means(num_classes, dims).colwise().mean();
    RngStream coin(rng.with_purpose(Purpose::Data, 2));
    RngStream noise(rng.with_purpose(Purpose::Data, 3));
    for (std::size_t i = 0; i < n_total; ++i) {
        if (!coin.bernoulli(occlusion_fraction)) continue;
        const auto row = static_cast<Eigen::Index>(i);
        ds.features.row(row) = centroid;
        detail::fill_normal(ds.features.row(row), noise, 1.0);
        ds.labels[i] = static_cast<int>(noise.below(num_classes));
        (*ds.subgroup)[i] = 1;
    }
    return ds;
}

// ---------------------------------------------------------------------------------------------
// CSV: header row, comma separated, one example per row. Feature columns are every column that
// is not the label or group column.

struct CsvSchema {
    std::string label_column = "label";
    std::optional<std::string> group_column;
    std::optional<std::size_t> num_classes;  // inferred as max label + 1 when absent
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        auto cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
        out.push_back(cell);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
T parse_cell(std::string_view cell, std::size_t line, const std::string& column) {
    T value{};
    const auto* end = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
    if (cell.empty() || ec != std::errc{} || ptr != end)
        throw ParseError("cannot parse '" + std::string(cell) + "' in column '" + column + "'", line);
    return value;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);

    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError("missing header row", 1);
    ++lineno;
    const auto header_views = detail::split_commas(line);
    std::vector<std::string> header(header_views.begin(), header_views.end());
    if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);

    std::optional<std::size_t> label_col, group_col;
    std::vector<std::size_t> feature_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == schema.label_column)
            label_col = i;
        else if (schema.group_column && header[i] == *schema.group_column)
            group_col = i;
        else
            feature_cols.push_back(i);
    }
    if (!label_col) throw SchemaError("label column '" + schema.label_column + "' not found");
    if (schema.group_column && !group_col) throw SchemaError("group column '" + *schema.group_column + "' not found");
    if (feature_cols.empty()) throw SchemaError("no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::vector<int> groups;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_commas(line);
        if (cells.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()),
                             lineno);
        for (auto c : feature_cols) values.push_back(detail::parse_cell<double>(cells[c], lineno, header[c]));
        const int label = detail::parse_cell<int>(cells[*label_col], lineno, header[*label_col]);
        if (label < 0 || (schema.num_classes && static_cast<std::size_t>(label) >= *schema.num_classes))
            throw SchemaError("label " + std::to_string(label) + " out of range on line " + std::to_string(lineno));
        labels.push_back(label);
        if (group_col) groups.push_back(detail::parse_cell<int>(cells[*group_col], lineno, header[*group_col]));
    }

    Dataset ds;
    ds.name = path;
    const auto n = static_cast<Eigen::Index>(labels.size());
    const auto d = static_cast<Eigen::Index>(feature_cols.size());
    ds.features.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) ds.features(i, j) = values[static_cast<std::size_t>(i * d + j)];
    ds.labels = std::move(labels);
    if (group_col) ds.subgroup = std::move(groups);
    if (schema.num_classes) {
        ds.num_classes = *schema.num_classes;
    } else {
        const int mx = ds.labels.empty() ? 1 : *std::max_element(ds.labels.begin(), ds.labels.end());
        ds.num_classes = std::max<std::size_t>(2, static_cast<std::size_t>(mx) + 1);
    }
    ds.validate();
    return ds;
}

/// Columns f0..f{d-1}, label[, group]. Values are written with round-trip precision.
inline void write_csv(const Dataset& ds, std::ostream& out) {
    const auto d = ds.features.cols();
    for (Eigen::Index j = 0; j < d; ++j) out << 'f' << j << ',';
    out << "label";
    if (ds.subgroup) out << ",group";
    out << '\n';
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
        for (Eigen::Index j = 0; j < d; ++j) out << ds.features(i, j) << ',';
        out << ds.labels[static_cast<std::size_t>(i)];
        if (ds.subgroup) out << ',' << (*ds.subgroup)[static_cast<std::size_t>(i)];
        out << '\n';
    }
}

inline void write_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    write_csv(ds, out);
}

// ---------------------------------------------------------------------------------------------

/// Uniformly random disjoint test set (round(test_fraction * N) rows) and initial train set of
/// n0 rows; the rest is the pool.
inline SplitIndices make_splits(std::size_t n, std::size_t n0, double test_fraction, const RngState& rng) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ParameterError("test_fraction must be in [0, 1)");
    if (n0 == 0) throw ParameterError("initial train set must be nonempty");
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    if (n0 + n_test > n)
        throw ParameterError("initial train (" + std::to_string(n0) + ") + test (" + std::to_string(n_test) +
                             ") exceeds dataset size " + std::to_string(n));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    RngStream stream(rng.with_purpose(Purpose::Split));
    shuffle(perm, stream);

    SplitIndices s;
    const auto t_end = perm.begin() + static_cast<std::ptrdiff_t>(n_test);
    const auto tr_end = t_end + static_cast<std::ptrdiff_t>(n0);
    s.test.assign(perm.begin(), t_end);
    s.train.assign(t_end, tr_end);
    s.pool.assign(tr_end, perm.end());
    std::sort(s.test.begin(), s.test.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.pool.begin(), s.pool.end());
    return s;
}

inline SplitIndices make_splits(const Dataset& ds, std::size_t n0, double test_fraction, const RngState& rng) {
    return make_splits(ds.size(), n0, test_fraction, rng);
}

}  // namespace stochal
