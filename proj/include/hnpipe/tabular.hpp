#pragma once
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "log.hpp"
#include "parallel.hpp"

namespace hnpipe::tabular {

enum class ColumnKind { continuous, categorical };

/// One named column. Only the vector matching `kind` is populated; nullopt is a missing cell.
struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::continuous;
    std::vector<std::optional<double>> values;
    std::vector<std::optional<std::string>> labels;

    static Column continuous(std::string name, std::vector<std::optional<double>> v)
    {
        Column c;
        c.name = std::move(name);
        c.values = std::move(v);
        return c;
    }

    static Column categorical(std::string name, std::vector<std::optional<std::string>> v)
    {
        Column c;
        c.name = std::move(name);
        c.kind = ColumnKind::categorical;
        c.labels = std::move(v);
        return c;
    }

    std::size_t rows() const { return kind == ColumnKind::continuous ? values.size() : labels.size(); }

    bool missing(std::size_t r) const
    {
        return kind == ColumnKind::continuous ? !values[r].has_value() : !labels[r].has_value();
    }

    std::size_t missing_count() const
    {
        std::size_t n = 0;
        for (std::size_t r = 0; r < rows(); ++r) n += missing(r);
        return n;
    }
};

class FeatureTable {
public:
    FeatureTable() = default;
    explicit FeatureTable(std::vector<std::string> row_ids) : row_ids_(std::move(row_ids))
    {
        std::set<std::string> seen;
        for (const auto& id : row_ids_)
            if (!seen.insert(id).second) throw InvalidArgument("duplicate row id '" + id + "'");
    }

    const std::vector<std::string>& row_ids() const { return row_ids_; }
    const std::vector<Column>& columns() const { return columns_; }
    std::size_t rows() const { return row_ids_.size(); }
    std::size_t cols() const { return columns_.size(); }

    void add_column(Column c)
    {
        if (c.rows() != rows())
            throw ShapeMismatch("column '" + c.name + "' has " + std::to_string(c.rows()) + " cells, table has " +
                                std::to_string(rows()) + " rows");
        if (find(c.name)) throw InvalidArgument("duplicate column name '" + c.name + "'");
        columns_.push_back(std::move(c));
    }

    const Column* find(const std::string& name) const
    {
        for (const auto& c : columns_)
            if (c.name == name) return &c;
        return nullptr;
    }

    const Column& column(const std::string& name) const
    {
        if (const auto* c = find(name)) return *c;
        throw InvalidArgument("no column named '" + name + "'");
    }

    Column& column(std::size_t i) { return columns_.at(i); }
    const Column& column(std::size_t i) const { return columns_.at(i); }

    std::vector<std::string> column_names() const
    {
        std::vector<std::string> out;
        for (const auto& c : columns_) out.push_back(c.name);
        return out;
    }

    std::optional<std::size_t> row_of(const std::string& id) const
    {
        for (std::size_t r = 0; r < row_ids_.size(); ++r)
            if (row_ids_[r] == id) return r;
        return std::nullopt;
    }

    bool is_numeric() const
    {
        return std::all_of(columns_.begin(), columns_.end(),
                           [](const Column& c) { return c.kind == ColumnKind::continuous; });
    }

    std::size_t missing_count() const
    {
        std::size_t n = 0;
        for (const auto& c : columns_) n += c.missing_count();
        return n;
    }

    /// Dense copy of a numeric table without missing cells.
    Eigen::MatrixXd matrix() const
    {
        Eigen::MatrixXd m(rows(), cols());
        for (std::size_t j = 0; j < cols(); ++j) {
            const auto& c = columns_[j];
            if (c.kind != ColumnKind::continuous) throw InvalidArgument("column '" + c.name + "' is categorical");
            for (std::size_t r = 0; r < rows(); ++r) {
                if (!c.values[r]) throw InvalidArgument("column '" + c.name + "' has a missing cell");
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = *c.values[r];
            }
        }
        return m;
    }

    FeatureTable select(const std::vector<std::string>& names) const
    {
        FeatureTable t(row_ids_);
        for (const auto& n : names) t.add_column(column(n));
        return t;
    }

private:
    std::vector<std::string> row_ids_;
    std::vector<Column> columns_;
};

/// Left join on row id: every row of `left` is kept, cells absent from `right` are missing.
inline FeatureTable join(const FeatureTable& left, const FeatureTable& right)
{
    FeatureTable out = left;
    std::map<std::string, std::size_t> rmap;
    for (std::size_t r = 0; r < right.rows(); ++r) rmap[right.row_ids()[r]] = r;
    for (const auto& c : right.columns()) {
        Column nc;
        nc.name = c.name;
        nc.kind = c.kind;
        for (const auto& id : left.row_ids()) {
            const auto it = rmap.find(id);
            if (c.kind == ColumnKind::continuous)
                nc.values.push_back(it == rmap.end() ? std::nullopt : c.values[it->second]);
            else
                nc.labels.push_back(it == rmap.end() ? std::nullopt : c.labels[it->second]);
        }
        out.add_column(std::move(nc));
    }
    return out;
}

/// Builds a table from CSV cells. A column is categorical when listed in
/// `categorical` or when any non-empty cell is not a number.
inline FeatureTable from_csv(const csv::Table& t, const std::string& id_column,
                             const std::set<std::string>& categorical = {},
                             const std::set<std::string>& exclude = {})
{
    const auto id_col = t.require_column(id_column, "feature table");
    std::vector<std::string> ids;
    for (const auto& r : t.rows) ids.push_back(r[id_col]);
    FeatureTable out(std::move(ids));
    for (std::size_t c = 0; c < t.header.size(); ++c) {
        const auto& name = t.header[c];
        if (c == id_col || exclude.count(name)) continue;
        bool cat = categorical.count(name) > 0;
        std::vector<std::optional<double>> nums;
        for (const auto& r : t.rows) {
            if (r[c].empty()) {
                nums.emplace_back();
                continue;
            }
            auto v = csv::parse_double(r[c]);
            if (!v) cat = true;
            nums.push_back(v);
        }
        if (cat) {
            std::vector<std::optional<std::string>> labels;
            for (const auto& r : t.rows)
                labels.push_back(r[c].empty() ? std::nullopt : std::optional<std::string>(r[c]));
            out.add_column(Column::categorical(name, std::move(labels)));
        } else {
            out.add_column(Column::continuous(name, std::move(nums)));
        }
    }
    return out;
}

inline csv::Table to_csv(const FeatureTable& t, const std::string& id_column = "PatientID")
{
    csv::Table out;
    out.header.push_back(id_column);
    for (const auto& c : t.columns()) out.header.push_back(c.name);
    for (std::size_t r = 0; r < t.rows(); ++r) {
        std::vector<std::string> row{t.row_ids()[r]};
        for (const auto& c : t.columns()) {
            if (c.missing(r))
                row.emplace_back();
            else
                row.push_back(c.kind == ColumnKind::continuous ? csv::format_double(*c.values[r]) : *c.labels[r]);
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

inline constexpr std::size_t kMaxCategories = 64;

/// Replaces each categorical column with k-1 indicator columns named "col=value".
/// The alphabetically first category is the reference level.
inline FeatureTable encode_dummies(const FeatureTable& table)
{
    FeatureTable out(table.row_ids());
    for (const auto& c : table.columns()) {
        if (c.kind == ColumnKind::continuous) {
            out.add_column(c);
            continue;
        }
        std::set<std::string> cats;
        for (const auto& l : c.labels)
            if (l) cats.insert(*l);
        if (cats.size() > kMaxCategories)
            throw InvalidArgument("column '" + c.name + "' has " + std::to_string(cats.size()) +
                                  " categories, limit is " + std::to_string(kMaxCategories));
        if (cats.size() < 2) {
            warn("dropping categorical column '" + c.name + "' with " + std::to_string(cats.size()) + " observed categories");
            continue;
        }
        for (auto it = std::next(cats.begin()); it != cats.end(); ++it) {
            std::vector<std::optional<double>> ind;
            for (const auto& l : c.labels)
                ind.push_back(l ? std::optional<double>(*l == *it ? 1.0 : 0.0) : std::nullopt);
            out.add_column(Column::continuous(c.name + "=" + *it, std::move(ind)));
        }
    }
    return out;
}

struct ImputeOptions {
    int rounds = 10;
    double ridge = 1e-3;
};

namespace detail {

// Ridge least squares with an unpenalized intercept (last column of the design).
inline Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double ridge)
{
    if (ridge == 0.0) return x.completeOrthogonalDecomposition().solve(y);
    Eigen::MatrixXd a = x.transpose() * x;
    for (Eigen::Index j = 0; j + 1 < a.cols(); ++j) a(j, j) += ridge;
    return a.ldlt().solve(x.transpose() * y);
}

} // namespace detail

/// Round-robin regression imputation of a numeric table. Produces one completed table.
inline FeatureTable iterative_impute(const FeatureTable& table, const ImputeOptions& opt = {})
{
    if (opt.rounds < 1) throw InvalidArgument("impute: rounds must be positive");
    if (!(opt.ridge >= 0.0)) throw InvalidArgument("impute: ridge must be non-negative");
    if (!table.is_numeric()) throw InvalidArgument("impute: table must be numeric, encode categorical columns first");
    const auto n = static_cast<Eigen::Index>(table.rows());
    const auto p = static_cast<Eigen::Index>(table.cols());
    Eigen::MatrixXd cur(n, p);
    std::vector<std::vector<Eigen::Index>> observed(table.cols()), missing(table.cols());
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto& c = table.column(static_cast<std::size_t>(j));
        double sum = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
            if (c.values[r]) {
                observed[j].push_back(r);
                sum += *c.values[r];
            } else {
                missing[j].push_back(r);
            }
        }
        if (observed[j].empty()) throw DegenerateInput("impute: column '" + c.name + "' has no observed values");
        const double mean = sum / static_cast<double>(observed[j].size());
        for (Eigen::Index r = 0; r < n; ++r) cur(r, j) = c.values[r] ? *c.values[r] : mean;
    }

    std::vector<bool> mean_only(table.cols(), false);
    for (Eigen::Index j = 0; j < p; ++j)
        if (!missing[j].empty() && observed[j].size() < 2) {
            warn("impute: column '" + table.column(static_cast<std::size_t>(j)).name +
                 "' has fewer than 2 observed rows, using the mean");
            mean_only[j] = true;
        }

    for (int round = 0; round < opt.rounds; ++round) {
        for (Eigen::Index j = 0; j < p; ++j) {
            if (missing[j].empty() || mean_only[j]) continue;
            const auto& obs = observed[j];
            const auto m = static_cast<Eigen::Index>(obs.size());
            Eigen::MatrixXd x(m, p);
            Eigen::VectorXd y(m);
            for (Eigen::Index i = 0; i < m; ++i) {
                Eigen::Index col = 0;
                for (Eigen::Index k = 0; k < p; ++k)
                    if (k != j) x(i, col++) = cur(obs[i], k);
                x(i, p - 1) = 1.0;
                y(i) = cur(obs[i], j);
            }
            const Eigen::VectorXd beta = detail::ridge_solve(x, y, opt.ridge);
            for (const auto r : missing[j]) {
                double pred = beta(p - 1);
                Eigen::Index col = 0;
                for (Eigen::Index k = 0; k < p; ++k)
                    if (k != j) pred += beta(col++) * cur(r, k);
                if (!std::isfinite(pred))
                    throw ConvergenceError("impute: non-finite prediction for column '" +
                                           table.column(static_cast<std::size_t>(j)).name + "'");
                cur(r, j) = pred;
            }
        }
    }

    FeatureTable out(table.row_ids());
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto& c = table.column(static_cast<std::size_t>(j));
        std::vector<std::optional<double>> v(c.values);
        for (const auto r : missing[j]) v[r] = cur(r, j);
        out.add_column(Column::continuous(c.name, std::move(v)));
    }
    return out;
}

/// Ranks starting at 1; tied values share the mean of their positions.
inline std::vector<double> mid_ranks(std::span<const double> x)
{
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
    std::vector<double> rank(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
        i = j + 1;
    }
    return rank;
}

inline double pearson(std::span<const double> x, std::span<const double> y)
{
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateInput("correlation of a constant vector");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman_rho(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size())
        throw ShapeMismatch("spearman: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
    if (x.size() < 3) throw InvalidArgument("spearman: need at least 3 observations");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw InvalidArgument("spearman: non-finite value");
    const auto rx = mid_ranks(x), ry = mid_ranks(y);
    return pearson(rx, ry);
}

struct DroppedPair {
    std::string kept;
    std::string dropped;
    double rho = 0.0;
};

struct LassoPath {
    std::vector<double> lambdas;
    std::vector<double> cv_error;
    double chosen_lambda = 0.0;
};

struct SelectionReport {
    std::size_t count_before = 0;
    std::size_t count_after_filter = 0;
    std::size_t count_after = 0;
    std::vector<std::string> kept;
    std::vector<DroppedPair> dropped_pairs;
    std::vector<std::string> dropped_constant;
    std::optional<LassoPath> lasso;
    std::string response;
};

inline nlohmann::json to_json(const SelectionReport& r)
{
    nlohmann::json j;
    j["count_before"] = r.count_before;
    j["count_after_filter"] = r.count_after_filter;
    j["count_after"] = r.count_after;
    j["kept"] = r.kept;
    j["dropped_constant"] = r.dropped_constant;
    j["dropped_pairs"] = nlohmann::json::array();
    for (const auto& d : r.dropped_pairs)
        j["dropped_pairs"].push_back({{"kept", d.kept}, {"dropped", d.dropped}, {"rho", d.rho}});
    if (r.lasso) {
        j["lasso"] = {{"lambdas", r.lasso->lambdas},
                      {"cv_error", r.lasso->cv_error},
                      {"chosen_lambda", r.lasso->chosen_lambda}};
        j["response"] = r.response;
    }
    return j;
}

/// Drops the later column (in name order) of every pair with |rho| > threshold.
/// Constant columns take part in no pair. Output keeps the input column order.
inline std::pair<FeatureTable, SelectionReport> spearman_filter(const FeatureTable& table, double threshold = 0.80)
{
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("spearman filter: threshold must be in [0,1]");
    const Eigen::MatrixXd m = table.matrix();
    const auto names = table.column_names();
    std::vector<std::size_t> order(names.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return names[a] < names[b]; });

    std::vector<std::vector<double>> ranks(names.size());
    std::vector<bool> constant(names.size(), false);
    for (std::size_t j = 0; j < names.size(); ++j) {
        std::vector<double> col(m.col(static_cast<Eigen::Index>(j)).data(),
                                m.col(static_cast<Eigen::Index>(j)).data() + m.rows());
        ranks[j] = mid_ranks(col);
        constant[j] = std::all_of(col.begin(), col.end(), [&](double v) { return v == col.front(); });
    }

    SelectionReport rep;
    rep.count_before = names.size();
    std::vector<bool> dropped(names.size(), false);
    for (std::size_t a = 0; a < order.size(); ++a) {
        const auto i = order[a];
        if (dropped[i] || constant[i]) continue;
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            const auto j = order[b];
            if (dropped[j] || constant[j]) continue;
            const double rho = pearson(ranks[i], ranks[j]);
            if (std::abs(rho) > threshold) {
                dropped[j] = true;
                rep.dropped_pairs.push_back({names[i], names[j], rho});
            }
        }
    }
    std::vector<std::string> kept;
    for (std::size_t j = 0; j < names.size(); ++j)
        if (!dropped[j]) kept.push_back(names[j]);
    rep.kept = kept;
    rep.count_after_filter = rep.count_after = kept.size();
    return {table.select(kept), std::move(rep)};
}

// ---- Lasso ----

struct LassoOptions {
    double tolerance = 1e-7;
    int max_sweeps = 100000;
};

struct LassoFit {
    Eigen::VectorXd beta;
    int sweeps = 0;
    bool converged = false;
    std::vector<double> objective_trace;
};

/// (1/2n)||y - X b||^2 + lambda ||b||_1 for centred y and centred X.
inline double lasso_objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                              double lambda)
{
    const double n = static_cast<double>(x.rows());
    return (y - x * beta).squaredNorm() / (2.0 * n) + lambda * beta.lpNorm<1>();
}

inline double soft_threshold(double z, double t)
{
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

/// Cyclic coordinate descent on centred columns (no intercept). Throws if a
/// sweep increases the objective or the sweep cap is hit. All-zero columns keep
/// their starting coefficient.
inline LassoFit lasso_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                          const LassoOptions& opt = {}, const Eigen::VectorXd* warm = nullptr)
{
    if (x.rows() != y.size()) throw ShapeMismatch("lasso: X and y row counts differ");
    if (!(lambda >= 0.0)) throw InvalidArgument("lasso: lambda must be non-negative");
    const double n = static_cast<double>(x.rows());
    const Eigen::Index p = x.cols();
    LassoFit fit;
    fit.beta = warm ? *warm : Eigen::VectorXd::Zero(p);
    Eigen::VectorXd resid = y - x * fit.beta;
    Eigen::VectorXd scale(p);
    for (Eigen::Index j = 0; j < p; ++j) scale(j) = x.col(j).squaredNorm() / n;
    double prev = lasso_objective(x, y, fit.beta, lambda);
    fit.objective_trace.push_back(prev);
    while (fit.sweeps < opt.max_sweeps) {
        ++fit.sweeps;
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (scale(j) == 0.0) continue; // all-zero column, coefficient stays put
            const double old = fit.beta(j);
            const double z = x.col(j).dot(resid) / n + scale(j) * old;
            const double nb = soft_threshold(z, lambda) / scale(j);
            if (nb != old) {
                resid -= (nb - old) * x.col(j);
                fit.beta(j) = nb;
                max_change = std::max(max_change, std::abs(nb - old));
            }
        }
        const double obj = lasso_objective(x, y, fit.beta, lambda);
        fit.objective_trace.push_back(obj);
        if (obj > prev + 1e-12 * (1.0 + std::abs(prev)))
            throw ConvergenceError("lasso: objective increased in sweep " + std::to_string(fit.sweeps));
        prev = obj;
        if (max_change < opt.tolerance) {
            fit.converged = true;
            return fit;
        }
    }
    throw ConvergenceError("lasso: no convergence after " + std::to_string(opt.max_sweeps) + " sweeps at lambda " +
                           std::to_string(lambda));
}

struct Standardizer {
    Eigen::VectorXd mean, sd;

    static Standardizer fit(const Eigen::MatrixXd& x)
    {
        Standardizer s;
        const double n = static_cast<double>(x.rows());
        s.mean = x.colwise().mean().transpose();
        s.sd.resize(x.cols());
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            s.sd(j) = std::sqrt((x.col(j).array() - s.mean(j)).square().sum() / n);
        return s;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const
    {
        Eigen::MatrixXd out = x.rowwise() - mean.transpose();
        for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) /= sd(j) > 0.0 ? sd(j) : 1.0;
        return out;
    }
};

/// 100 log-spaced values from the smallest all-zero lambda down to ratio times it.
inline std::vector<double> lambda_grid(const Eigen::MatrixXd& xs, const Eigen::VectorXd& yc, int count = 100,
                                       double ratio = 1e-3)
{
    if (count < 1) throw InvalidArgument("lasso: lambda grid needs at least one value");
    const double n = static_cast<double>(xs.rows());
    const double lmax = (xs.transpose() * yc).cwiseAbs().maxCoeff() / n;
    if (!(lmax > 0.0)) throw DegenerateInput("lasso: response is uncorrelated with every column");
    std::vector<double> grid(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k)
        grid[static_cast<std::size_t>(k)] =
            count == 1 ? lmax : lmax * std::pow(ratio, static_cast<double>(k) / static_cast<double>(count - 1));
    return grid;
}

/// Round-robin fold labels after a seeded shuffle.
inline std::vector<int> fold_labels(std::size_t n, int folds, std::uint64_t seed)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<int> label(n);
    for (std::size_t i = 0; i < n; ++i) label[idx[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
    return label;
}

struct LassoSelectOptions {
    int folds = 5;
    std::optional<std::vector<double>> grid; // descending lambdas; computed when absent
    int grid_size = 100;
    double grid_ratio = 1e-3;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    LassoOptions solver;
};

struct LassoSelection {
    std::vector<std::size_t> kept;        // column indices into the input
    std::vector<std::size_t> constant;    // zero-variance columns removed before fitting
    Eigen::VectorXd beta;                 // standardized scale, one per input column
    LassoPath path;
};

namespace detail {

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& rows)
{
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
    return out;
}

inline Eigen::VectorXd take_rows(const Eigen::VectorXd& y, const std::vector<Eigen::Index>& rows)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = y(rows[i]);
    return out;
}

} // namespace detail

/// Lasso path with k-fold cross-validated lambda; keeps columns with a
/// nonzero coefficient in the full-data refit at the chosen lambda.
inline LassoSelection lasso_select(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y,
                                   const LassoSelectOptions& opt = {})
{
    if (x_raw.rows() != y.size()) throw ShapeMismatch("lasso: X and y row counts differ");
    if (opt.folds < 2) throw InvalidArgument("lasso: need at least 2 folds");
    if (x_raw.rows() < opt.folds)
        throw InvalidArgument("lasso: " + std::to_string(x_raw.rows()) + " rows is fewer than " +
                              std::to_string(opt.folds) + " folds");
    if (opt.grid && opt.grid->empty()) throw InvalidArgument("lasso: empty lambda grid");
    if (!x_raw.allFinite() || !y.allFinite()) throw InvalidArgument("lasso: non-finite input");

    LassoSelection sel;
    const auto full_std = Standardizer::fit(x_raw);
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < x_raw.cols(); ++j) {
        if (full_std.sd(j) > 0.0)
            active.push_back(j);
        else {
            warn("lasso: dropping zero-variance column " + std::to_string(j));
            sel.constant.push_back(static_cast<std::size_t>(j));
        }
    }
    sel.beta = Eigen::VectorXd::Zero(x_raw.cols());
    if (active.empty()) throw DegenerateInput("lasso: every column has zero variance");
    Eigen::MatrixXd x(x_raw.rows(), static_cast<Eigen::Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = x_raw.col(active[k]);

    const auto st = Standardizer::fit(x);
    const Eigen::MatrixXd xs = st.apply(x);
    const Eigen::VectorXd yc = y.array() - y.mean();
    auto grid = opt.grid ? *opt.grid : lambda_grid(xs, yc, opt.grid_size, opt.grid_ratio);
    std::sort(grid.begin(), grid.end(), std::greater<>());

    const auto labels = fold_labels(static_cast<std::size_t>(x.rows()), opt.folds, opt.seed);
    std::vector<std::vector<double>> fold_sse(static_cast<std::size_t>(opt.folds), std::vector<double>(grid.size()));
    parallel_for(static_cast<std::size_t>(opt.folds), opt.threads, [&](std::size_t f) {
        std::vector<Eigen::Index> train, test;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            (labels[static_cast<std::size_t>(i)] == static_cast<int>(f) ? test : train).push_back(i);
        const Eigen::MatrixXd xtr = detail::take_rows(x, train);
        const Eigen::VectorXd ytr = detail::take_rows(y, train);
        const auto fst = Standardizer::fit(xtr);
        const Eigen::MatrixXd xtr_s = fst.apply(xtr);
        const Eigen::MatrixXd xte_s = fst.apply(detail::take_rows(x, test));
        const Eigen::VectorXd yte = detail::take_rows(y, test);
        const double ymean = ytr.mean();
        const Eigen::VectorXd ytr_c = ytr.array() - ymean;
        // columns constant within the training fold are all zero after centring
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(xtr_s.cols());
        for (std::size_t l = 0; l < grid.size(); ++l) {
            beta = lasso_fit(xtr_s, ytr_c, grid[l], opt.solver, &beta).beta;
            const Eigen::VectorXd pred = (xte_s * beta).array() + ymean;
            fold_sse[f][l] = (yte - pred).squaredNorm();
        }
    });

    sel.path.lambdas = grid;
    sel.path.cv_error.assign(grid.size(), 0.0);
    for (std::size_t l = 0; l < grid.size(); ++l) {
        for (const auto& f : fold_sse) sel.path.cv_error[l] += f[l];
        sel.path.cv_error[l] /= static_cast<double>(x.rows());
    }
    const auto best = static_cast<std::size_t>(
        std::min_element(sel.path.cv_error.begin(), sel.path.cv_error.end()) - sel.path.cv_error.begin());
    sel.path.chosen_lambda = grid[best];

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(xs.cols());
    for (std::size_t l = 0; l <= best; ++l) beta = lasso_fit(xs, yc, grid[l], opt.solver, &beta).beta;
    for (std::size_t k = 0; k < active.size(); ++k) {
        sel.beta(active[k]) = beta(static_cast<Eigen::Index>(k));
        if (beta(static_cast<Eigen::Index>(k)) != 0.0) sel.kept.push_back(static_cast<std::size_t>(active[k]));
    }
    return sel;
}

} // namespace hnpipe::tabular
