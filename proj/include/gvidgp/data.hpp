#pragma once

// CSV ingestion, train/test splitting with z-score normalization, and
// metrics reported in original target units.

#include "gvidgp/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gvidgp {

struct RawTable {
    Eigen::MatrixXd values;
    std::vector<std::string> header;  // empty when the file had none
    std::size_t dropped_rows = 0;     // rows removed for missing or NaN cells

    [[nodiscard]] Eigen::Index rows() const noexcept { return values.rows(); }
    [[nodiscard]] Eigen::Index cols() const noexcept { return values.cols(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

inline bool is_missing(std::string_view cell) {
    return cell.empty() || cell == "nan" || cell == "NaN" || cell == "NAN" || cell == "NA" || cell == "?";
}

/// Parses a full cell as a double; nullopt if anything is left over.
inline std::optional<double> parse_double(std::string_view cell) {
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
    return v;
}

}  // namespace detail

/// Reads a comma-separated numeric table. Rows are reported by 1-based file
/// line, columns 1-based. Blank lines are skipped. Rows with a missing or NaN
/// cell are dropped and counted.
inline RawTable parse_csv(std::istream& in, bool has_header) {
    RawTable table;
    std::vector<double> data;
    std::size_t width = 0;
    std::size_t line_no = 0;
    bool header_pending = has_header;
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_commas(line);
        if (header_pending) {
            header_pending = false;
            width = cells.size();
            for (auto c : cells) table.header.emplace_back(c);
            continue;
        }
        if (width == 0) width = cells.size();
        if (cells.size() != width) {
            const std::size_t col = std::min(cells.size(), width) + 1;
            throw ParseError(line_no, col, "expected " + std::to_string(width) + " cells, found " +
                                               std::to_string(cells.size()));
        }
        bool missing = false;
        std::vector<double> row(width);
        for (std::size_t j = 0; j < width; ++j) {
            if (detail::is_missing(cells[j])) {
                missing = true;
                continue;
            }
            const auto v = detail::parse_double(cells[j]);
            if (!v) throw ParseError(line_no, j + 1, std::string(cells[j]));
            if (std::isnan(*v)) missing = true;
            row[j] = *v;
        }
        if (missing) {
            ++table.dropped_rows;
            continue;
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    if (data.empty()) throw EmptyFile("no data rows");
    const auto n = static_cast<Eigen::Index>(data.size() / width);
    table.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), n, static_cast<Eigen::Index>(width));
    return table;
}

inline RawTable load_csv(const std::filesystem::path& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    try {
        return parse_csv(in, has_header);
    } catch (const EmptyFile&) {
        throw EmptyFile("'" + path.string() + "' has no data rows");
    }
}

/// Writes values with shortest round-trip formatting, so `load_csv` restores
/// them bit for bit.
inline void write_csv(std::ostream& out, const Eigen::MatrixXd& values, const std::vector<std::string>& header = {}) {
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    if (!header.empty()) out << '\n';
    char buf[32];
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, values(i, j));
            if (j) out << ',';
            out.write(buf, ptr - buf);
        }
        out << '\n';
    }
}

inline void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& values,
                      const std::vector<std::string>& header = {}) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    write_csv(out, values, header);
}

/// Which columns are targets: by header name, or by index (negative counts
/// from the end). Defaults to the last column.
struct TargetSpec {
    std::vector<long> indices{-1};
    std::vector<std::string> names;

    [[nodiscard]] std::vector<Eigen::Index> resolve(const RawTable& table) const {
        std::vector<Eigen::Index> out;
        const auto ncol = table.cols();
        if (!names.empty()) {
            for (const auto& name : names) {
                const auto it = std::find(table.header.begin(), table.header.end(), name);
                if (it == table.header.end()) throw ConfigError("target", "no column named '" + name + "'");
                out.push_back(it - table.header.begin());
            }
        } else {
            for (long k : indices) {
                const long j = k < 0 ? ncol + k : k;
                if (j < 0 || j >= ncol)
                    throw ConfigError("target", "column index " + std::to_string(k) + " out of range");
                out.push_back(j);
            }
        }
        if (out.empty()) throw ConfigError("target", "no target columns");
        if (static_cast<Eigen::Index>(out.size()) >= ncol) throw ConfigError("target", "no feature columns left");
        for (std::size_t a = 0; a < out.size(); ++a)
            for (std::size_t b = a + 1; b < out.size(); ++b)
                if (out[a] == out[b]) throw ConfigError("target", "column listed twice");
        return out;
    }
};

struct NormalizationStats {
    Eigen::VectorXd feature_means, feature_stds;
    Eigen::VectorXd target_means, target_stds;

    [[nodiscard]] Eigen::MatrixXd normalize_features(const Eigen::MatrixXd& x) const {
        return (x.rowwise() - feature_means.transpose()).array().rowwise() / feature_stds.transpose().array();
    }
    [[nodiscard]] Eigen::MatrixXd normalize_targets(const Eigen::MatrixXd& y) const {
        return (y.rowwise() - target_means.transpose()).array().rowwise() / target_stds.transpose().array();
    }
    [[nodiscard]] Eigen::MatrixXd denormalize_targets(const Eigen::MatrixXd& y) const {
        return (y.array().rowwise() * target_stds.transpose().array()).matrix().rowwise() + target_means.transpose();
    }
};

/// Gross outliers injected into the training targets only, in raw units:
/// each selected target moves by `magnitude` training standard deviations.
struct Contamination {
    double fraction = 0.05;
    double magnitude = 5.0;
    bool symmetric = false;  // random sign per outlier instead of always upward
};

struct Dataset {
    Eigen::MatrixXd x;  // all rows, normalized with train statistics
    Eigen::MatrixXd y;
    NormalizationStats stats;
    std::vector<Eigen::Index> train, test;
    std::vector<Eigen::Index> outliers;  // contaminated training rows, if any
    std::vector<std::string> warnings;

    [[nodiscard]] Eigen::MatrixXd x_train() const { return x(train, Eigen::all); }
    [[nodiscard]] Eigen::MatrixXd y_train() const { return y(train, Eigen::all); }
    [[nodiscard]] Eigen::MatrixXd x_test() const { return x(test, Eigen::all); }
    [[nodiscard]] Eigen::MatrixXd y_test() const { return y(test, Eigen::all); }
};

inline constexpr Eigen::Index kMinRows = 10;

namespace detail {

/// Mean and population standard deviation of each column over `rows`.
inline void column_stats(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows, Eigen::VectorXd& mean,
                         Eigen::VectorXd& sd) {
    const auto sub = m(rows, Eigen::all);
    mean = sub.colwise().mean().transpose();
    sd = ((sub.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(rows.size()))
             .sqrt()
             .transpose();
}

}  // namespace detail

/// Seeded permutation into train and test parts, then z-scoring with the
/// training statistics. Test size is round(n * test_fraction), at least one row
/// on each side.
inline Dataset normalize_split(const RawTable& table, const TargetSpec& target, double test_fraction,
                               std::uint64_t seed, const std::optional<Contamination>& contamination = {}) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction", "must lie in (0, 1), got " + std::to_string(test_fraction));
    const Eigen::Index n = table.rows();
    if (n < kMinRows) throw TooFewRows("need at least " + std::to_string(kMinRows) + " rows, got " + std::to_string(n));

    const auto tcols = target.resolve(table);
    std::vector<Eigen::Index> fcols;
    for (Eigen::Index j = 0; j < table.cols(); ++j)
        if (std::find(tcols.begin(), tcols.end(), j) == tcols.end()) fcols.push_back(j);

    Eigen::MatrixXd x = table.values(Eigen::all, fcols);
    Eigen::MatrixXd y = table.values(Eigen::all, tcols);

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto n_test = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * test_fraction));
    n_test = std::clamp<Eigen::Index>(n_test, 1, n - 1);

    Dataset ds;
    ds.test.assign(perm.begin(), perm.begin() + n_test);
    ds.train.assign(perm.begin() + n_test, perm.end());

    if (contamination && contamination->fraction > 0.0) {
        if (contamination->fraction >= 1.0) throw ConfigError("contamination.fraction", "must lie in [0, 1)");
        Eigen::VectorXd mean, sd;
        detail::column_stats(y, ds.train, mean, sd);
        const auto k = static_cast<std::size_t>(
            std::llround(contamination->fraction * static_cast<double>(ds.train.size())));
        std::vector<Eigen::Index> pick = ds.train;
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(k);
        std::sort(pick.begin(), pick.end());
        std::bernoulli_distribution coin(0.5);
        for (auto i : pick) {
            const double sign = contamination->symmetric && coin(rng) ? -1.0 : 1.0;
            for (Eigen::Index c = 0; c < y.cols(); ++c)
                y(i, c) += sign * contamination->magnitude * (sd(c) > 0.0 ? sd(c) : 1.0);
        }
        ds.outliers = std::move(pick);
    }

    auto& st = ds.stats;
    detail::column_stats(x, ds.train, st.feature_means, st.feature_stds);
    detail::column_stats(y, ds.train, st.target_means, st.target_stds);
    auto guard = [&](Eigen::VectorXd& sd, const std::vector<Eigen::Index>& cols) {
        for (Eigen::Index j = 0; j < sd.size(); ++j)
            if (!(sd(j) > 0.0)) {
                sd(j) = 1.0;
                const auto name = table.header.empty() ? "column " + std::to_string(cols[static_cast<std::size_t>(j)] + 1)
                                                       : table.header[static_cast<std::size_t>(cols[static_cast<std::size_t>(j)])];
                ds.warnings.push_back(name + " is constant on the training split; using std 1");
            }
    };
    guard(st.feature_stds, fcols);
    guard(st.target_stds, tcols);
    if (table.dropped_rows > 0)
        ds.warnings.push_back("dropped " + std::to_string(table.dropped_rows) + " rows with missing values");

    ds.x = st.normalize_features(x);
    ds.y = st.normalize_targets(y);
    return ds;
}

/// RMSE over every entry, with both arguments in normalized units and the
/// error measured after mapping back to original units.
inline double rmse(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth, const NormalizationStats& stats) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw DimensionMismatch("rmse: prediction and truth shapes differ");
    if (stats.target_stds.size() != pred.cols()) throw DimensionMismatch("rmse: stats do not match target width");
    if (pred.size() == 0) throw PreconditionViolation("rmse: no entries");
    const Eigen::ArrayXXd diff = (pred - truth).array().rowwise() * stats.target_stds.transpose().array();
    return std::sqrt(diff.square().mean());
}

/// Mean log density per test point in original units. `log_density(i, y)`
/// returns the normalized-unit log density of row i.
inline double test_log_likelihood(const std::function<double(Eigen::Index, const Eigen::RowVectorXd&)>& log_density,
                                  const Eigen::MatrixXd& y_test, const NormalizationStats& stats) {
    if (y_test.rows() == 0) throw PreconditionViolation("test_log_likelihood: no test rows");
    if (stats.target_stds.size() != y_test.cols())
        throw DimensionMismatch("test_log_likelihood: stats do not match target width");
    const double jacobian = stats.target_stds.array().log().sum();
    double total = 0.0;
    for (Eigen::Index i = 0; i < y_test.rows(); ++i) total += log_density(i, y_test.row(i));
    return total / static_cast<double>(y_test.rows()) - jacobian;
}

/// Noisy sine on [-3, 3] in a two-column table (x, y).
inline RawTable synthetic_sine(Eigen::Index n, double noise_sd, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::normal_distribution<double> z;
    RawTable t;
    t.header = {"x", "y"};
    t.values.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double xi = u(rng);
        t.values(i, 0) = xi;
        t.values(i, 1) = std::sin(xi) + noise_sd * z(rng);
    }
    return t;
}

}  // namespace gvidgp
