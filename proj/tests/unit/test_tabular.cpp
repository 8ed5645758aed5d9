#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <hnpipe/tabular.hpp>

using namespace hnpipe;
using namespace hnpipe::tabular;

namespace {

using Opt = std::optional<double>;

std::vector<std::string> ids(std::size_t n)
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back("P" + std::to_string(i));
    return out;
}

std::vector<Opt> to_opt(const std::vector<double>& v) { return {v.begin(), v.end()}; }

// rank_i = 1 + #{x_j < x_i} + (#{x_j == x_i} - 1) / 2
double brute_spearman(const std::vector<double>& x, const std::vector<double>& y)
{
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (double w : v) {
                less += w < v[i];
                equal += w == v[i];
            }
            r[i] = 1.0 + less + (equal - 1.0) / 2.0;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= x.size();
    my /= x.size();
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

Eigen::MatrixXd hadamard(int order)
{
    Eigen::MatrixXd h(1, 1);
    h(0, 0) = 1.0;
    while (h.rows() < order) {
        Eigen::MatrixXd n(2 * h.rows(), 2 * h.cols());
        n << h, h, h, -h;
        h = n;
    }
    return h;
}

} // namespace

TEST(FeatureTable, InvariantsAndCsvRoundTrip)
{
    EXPECT_THROW(FeatureTable({"a", "a"}), InvalidArgument);
    FeatureTable t(ids(3));
    t.add_column(Column::continuous("age", {60.0, std::nullopt, 71.5}));
    EXPECT_THROW(t.add_column(Column::continuous("age", {1.0, 2.0, 3.0})), InvalidArgument);
    EXPECT_THROW(t.add_column(Column::continuous("x", {1.0})), ShapeMismatch);

    std::istringstream in("PatientID,Age,Gender,CenterID\nA,60,M,1\nB,,F,2\nC,71.5,,1\n");
    const auto parsed = from_csv(csv::parse(in), "PatientID", {"CenterID"});
    ASSERT_EQ(parsed.cols(), 3u);
    EXPECT_EQ(parsed.column("Age").kind, ColumnKind::continuous);
    EXPECT_EQ(parsed.column("Gender").kind, ColumnKind::categorical);
    EXPECT_EQ(parsed.column("CenterID").kind, ColumnKind::categorical);
    EXPECT_FALSE(parsed.column("Age").values[1].has_value());
    EXPECT_FALSE(parsed.column("Gender").labels[2].has_value());
    const auto back = to_csv(parsed);
    EXPECT_EQ(back.rows[1], (std::vector<std::string>{"B", "", "F", "2"}));
    EXPECT_EQ(back.rows[2], (std::vector<std::string>{"C", "71.5", "", "1"}));
}

TEST(FeatureTable, LeftJoinMarksAbsentRowsMissing)
{
    FeatureTable a({"A", "B"});
    a.add_column(Column::continuous("x", {1.0, 2.0}));
    FeatureTable b({"B", "C"});
    b.add_column(Column::continuous("y", {5.0, 6.0}));
    const auto j = join(a, b);
    EXPECT_EQ(j.row_ids(), a.row_ids());
    EXPECT_FALSE(j.column("y").values[0].has_value());
    EXPECT_EQ(j.column("y").values[1], Opt(5.0));
}

TEST(EncodeDummies, ReferenceLevelAndMissing)
{
    FeatureTable t(ids(4));
    t.add_column(Column::categorical("gender", {"M", "F", std::nullopt, "M"}));
    t.add_column(Column::continuous("age", {50.0, 60.0, 70.0, 80.0}));
    t.add_column(Column::categorical("stage", {"III", "I", "II", "I"}));
    t.add_column(Column::categorical("site", {"oro", "oro", std::nullopt, "oro"}));
    t.add_column(Column::categorical("hpv", {std::nullopt, std::nullopt, std::nullopt, std::nullopt}));
    const auto e = encode_dummies(t);
    EXPECT_EQ(e.column_names(), (std::vector<std::string>{"gender=M", "age", "stage=II", "stage=III"}));
    EXPECT_EQ(e.column("gender=M").values, (std::vector<Opt>{1.0, 0.0, std::nullopt, 1.0}));
    EXPECT_EQ(e.column("age").values, t.column("age").values);
    EXPECT_EQ(e.column("stage=II").values, (std::vector<Opt>{0.0, 0.0, 1.0, 0.0}));
    EXPECT_EQ(e.column("stage=III").values, (std::vector<Opt>{1.0, 0.0, 0.0, 0.0}));
    EXPECT_TRUE(e.is_numeric());

    FeatureTable wide(ids(65));
    std::vector<std::optional<std::string>> many;
    for (int i = 0; i < 65; ++i) many.push_back("c" + std::to_string(i));
    wide.add_column(Column::categorical("code", many));
    EXPECT_THROW(encode_dummies(wide), InvalidArgument);
}

TEST(Impute, NoMissingIsIdentity)
{
    FeatureTable t(ids(4));
    t.add_column(Column::continuous("a", {1.0, 2.0, 3.0, 4.0}));
    t.add_column(Column::continuous("b", {2.0, -1.0, 0.5, 9.0}));
    const auto out = iterative_impute(t);
    for (std::size_t j = 0; j < t.cols(); ++j) EXPECT_EQ(out.column(j).values, t.column(j).values);
}

TEST(Impute, RecoversExactLinearRelation)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(5.0, 2.0);
    std::vector<Opt> a, b;
    for (int i = 0; i < 20; ++i) {
        const double x = nd(rng);
        a.push_back(x);
        b.push_back(2.0 * x);
    }
    const double hidden = *a[7];
    b[7].reset();
    FeatureTable t(ids(20));
    t.add_column(Column::continuous("a", a));
    t.add_column(Column::continuous("b", b));
    const auto out = iterative_impute(t, {.rounds = 1, .ridge = 0.0});
    EXPECT_NEAR(*out.column("b").values[7], 2.0 * hidden, 1e-6);
    // default ridge stays close to the relation
    EXPECT_NEAR(*iterative_impute(t).column("b").values[7], 2.0 * hidden, 1e-3);
}

TEST(Impute, ObservedCellsUnchangedAndBeatsMeanImputation)
{
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::bernoulli_distribution drop(0.15);
    const std::size_t n = 80;
    std::vector<std::vector<double>> truth(4, std::vector<double>(n));
    for (std::size_t r = 0; r < n; ++r) {
        const double z = nd(rng);
        truth[0][r] = z + 0.3 * nd(rng);
        truth[1][r] = 2.0 * z + 0.3 * nd(rng);
        truth[2][r] = -z + 0.3 * nd(rng) + 4.0;
        truth[3][r] = nd(rng);
    }
    FeatureTable t(ids(n));
    std::vector<std::pair<std::size_t, std::size_t>> masked;
    for (std::size_t j = 0; j < 4; ++j) {
        auto v = to_opt(truth[j]);
        for (std::size_t r = 0; r < n; ++r)
            if (j < 3 && drop(rng)) {
                v[r].reset();
                masked.emplace_back(j, r);
            }
        t.add_column(Column::continuous("c" + std::to_string(j), v));
    }
    ASSERT_GT(masked.size(), 10u);
    const auto out = iterative_impute(t);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t r = 0; r < n; ++r)
            if (t.column(j).values[r]) {
                EXPECT_EQ(out.column(j).values[r], t.column(j).values[r]);
            }

    double se_model = 0.0, se_mean = 0.0;
    for (auto [j, r] : masked) {
        double sum = 0.0, cnt = 0.0;
        for (const auto& v : t.column(j).values)
            if (v) {
                sum += *v;
                ++cnt;
            }
        se_model += std::pow(*out.column(j).values[r] - truth[j][r], 2);
        se_mean += std::pow(sum / cnt - truth[j][r], 2);
    }
    EXPECT_LT(se_model, se_mean);
}

TEST(Impute, Errors)
{
    FeatureTable t(ids(3));
    t.add_column(Column::continuous("a", {1.0, 2.0, 3.0}));
    t.add_column(Column::continuous("empty", {std::nullopt, std::nullopt, std::nullopt}));
    EXPECT_THROW(iterative_impute(t), DegenerateInput);

    FeatureTable one(ids(3));
    one.add_column(Column::continuous("a", {1.0, 2.0, 3.0}));
    one.add_column(Column::continuous("b", {4.0, std::nullopt, std::nullopt}));
    const auto out = iterative_impute(one);
    EXPECT_EQ(out.column("b").values[1], Opt(4.0));

    FeatureTable cat(ids(3));
    cat.add_column(Column::categorical("g", {"a", "b", "a"}));
    EXPECT_THROW(iterative_impute(cat), InvalidArgument);
    EXPECT_THROW(iterative_impute(one, {.rounds = 0}), InvalidArgument);
}

TEST(Spearman, HandCases)
{
    const std::vector<double> x{0.1, 0.5, 1.0, 2.0, 3.0};
    std::vector<double> ex, neg;
    for (double v : x) {
        ex.push_back(std::exp(v));
        neg.push_back(-v);
    }
    EXPECT_DOUBLE_EQ(spearman_rho(x, ex), 1.0);
    EXPECT_DOUBLE_EQ(spearman_rho(x, neg), -1.0);
    EXPECT_NEAR(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{2, 1, 3}), 0.5, 1e-12);
    EXPECT_THROW(spearman_rho(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DegenerateInput);
    EXPECT_THROW(spearman_rho(std::vector<double>{1, 2}, std::vector<double>{1, 2}), InvalidArgument);
    EXPECT_THROW(spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), ShapeMismatch);
}

TEST(Spearman, MatchesBruteForceWithTies)
{
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> small(0, 5);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 3 + trial % 30;
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = trial % 2 ? small(rng) : nd(rng);
            y[i] = small(rng) + 0.5 * x[i];
        }
        double r;
        try {
            r = spearman_rho(x, y);
        } catch (const DegenerateInput&) {
            continue;
        }
        EXPECT_NEAR(r, brute_spearman(x, y), 1e-12);
        EXPECT_GE(r, -1.0);
        EXPECT_LE(r, 1.0);
        EXPECT_DOUBLE_EQ(r, spearman_rho(y, x));
        std::vector<double> tx;
        for (double v : x) tx.push_back(std::atan(v) * 3.0 + 1.0);
        EXPECT_NEAR(r, spearman_rho(tx, y), 1e-12);
    }
}

TEST(SpearmanFilter, DuplicatesAndIndependence)
{
    std::mt19937_64 rng(23);
    std::normal_distribution<double> nd;
    const std::size_t n = 60;
    std::vector<double> a(n), b(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = nd(rng);
        b[i] = nd(rng);
        c[i] = nd(rng);
    }
    FeatureTable t(ids(n));
    t.add_column(Column::continuous("b", to_opt(b)));
    t.add_column(Column::continuous("a", to_opt(a)));
    t.add_column(Column::continuous("c", to_opt(c)));
    auto [same, rep0] = spearman_filter(t);
    EXPECT_EQ(same.column_names(), t.column_names());
    EXPECT_TRUE(rep0.dropped_pairs.empty());

    t.add_column(Column::continuous("a_copy", to_opt(a)));
    auto [one, rep1] = spearman_filter(t);
    EXPECT_EQ(one.column_names(), (std::vector<std::string>{"b", "a", "c"}));
    ASSERT_EQ(rep1.dropped_pairs.size(), 1u);
    EXPECT_EQ(rep1.dropped_pairs[0].kept, "a");
    EXPECT_EQ(rep1.dropped_pairs[0].dropped, "a_copy");
    EXPECT_DOUBLE_EQ(rep1.dropped_pairs[0].rho, 1.0);

    FeatureTable tri(ids(n));
    for (auto name : {"z", "y", "x"}) tri.add_column(Column::continuous(name, to_opt(a)));
    auto [first, rep2] = spearman_filter(tri);
    EXPECT_EQ(first.column_names(), (std::vector<std::string>{"x"}));
    EXPECT_EQ(rep2.dropped_pairs.size(), 2u);
}

TEST(SpearmanFilter, NoSurvivingPairAboveThreshold)
{
    std::mt19937_64 rng(29);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 40, p = 12;
        std::vector<double> base(n);
        for (auto& v : base) v = nd(rng);
        FeatureTable t(ids(n));
        for (std::size_t j = 0; j < p; ++j) {
            const double mix = (j % 3) * 0.4;
            std::vector<double> col(n);
            for (std::size_t i = 0; i < n; ++i) col[i] = mix * base[i] + (1.0 - mix) * nd(rng) * 0.5;
            t.add_column(Column::continuous("f" + std::to_string(j), to_opt(col)));
        }
        const auto [out, rep] = spearman_filter(t, 0.8);
        EXPECT_EQ(out.cols() + rep.dropped_pairs.size(), p);
        const auto m = out.matrix();
        for (Eigen::Index i = 0; i < m.cols(); ++i)
            for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
                std::vector<double> x(m.col(i).data(), m.col(i).data() + m.rows());
                std::vector<double> y(m.col(j).data(), m.col(j).data() + m.rows());
                EXPECT_LE(std::abs(brute_spearman(x, y)), 0.8);
            }
    }
}

TEST(Lasso, OrthonormalDesignIsSoftThreshold)
{
    const Eigen::MatrixXd h = hadamard(16);
    const Eigen::MatrixXd x = h.rightCols(15); // centred, x'x/n = 1
    std::mt19937_64 rng(31);
    std::normal_distribution<double> nd;
    Eigen::VectorXd y(16);
    for (auto& v : y) v = nd(rng);
    y.array() -= y.mean();
    const Eigen::VectorXd ols = x.transpose() * y / 16.0;
    for (double lambda : {0.0, 0.05, 0.2, 0.5, 10.0}) {
        const auto fit = lasso_fit(x, y, lambda);
        EXPECT_TRUE(fit.converged);
        for (Eigen::Index j = 0; j < 15; ++j) {
            const double a = std::abs(ols(j)) - lambda;
            const double expect = a > 0 ? std::copysign(a, ols(j)) : 0.0;
            EXPECT_NEAR(fit.beta(j), expect, 1e-12) << "lambda " << lambda << " column " << j;
        }
    }
}

TEST(Lasso, ObjectiveNonIncreasingAndConverges)
{
    std::mt19937_64 rng(37);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 30, p = 10;
        Eigen::MatrixXd x(n, p);
        for (auto& v : x.reshaped()) v = nd(rng);
        for (Eigen::Index j = 1; j < p; j += 3) x.col(j) = 0.9 * x.col(j - 1) + 0.1 * x.col(j); // collinear pairs
        const auto st = Standardizer::fit(x);
        const Eigen::MatrixXd xs = st.apply(x);
        Eigen::VectorXd y = xs.col(0) * 1.5 - xs.col(4);
        for (auto& v : y) v += 0.3 * nd(rng);
        y.array() -= y.mean();
        for (double lambda : {0.001, 0.05, 0.3}) {
            const auto fit = lasso_fit(xs, y, lambda);
            EXPECT_TRUE(fit.converged);
            for (std::size_t s = 1; s < fit.objective_trace.size(); ++s)
                EXPECT_LE(fit.objective_trace[s], fit.objective_trace[s - 1] + 1e-15);
            // KKT: |x_j'r/n| <= lambda, with equality on the support
            const Eigen::VectorXd g = xs.transpose() * (y - xs * fit.beta) / static_cast<double>(n);
            for (Eigen::Index j = 0; j < p; ++j) {
                if (fit.beta(j) != 0.0)
                    EXPECT_NEAR(g(j), lambda * (fit.beta(j) > 0 ? 1.0 : -1.0), 1e-5);
                else
                    EXPECT_LE(std::abs(g(j)), lambda + 1e-5);
            }
        }
    }
}

TEST(LassoSelect, SparseRecoveryAndGrid)
{
    std::mt19937_64 rng(41);
    std::normal_distribution<double> nd;
    const Eigen::Index n = 120, p = 20;
    Eigen::MatrixXd x(n, p);
    for (auto& v : x.reshaped()) v = nd(rng) * 2.0 + 1.0;
    Eigen::VectorXd y = 3.0 * x.col(1) - 2.0 * x.col(5);
    for (auto& v : y) v += 0.1 * nd(rng);
    LassoSelectOptions opt;
    opt.seed = 5;
    const auto sel = lasso_select(x, y, opt);
    EXPECT_NE(std::find(sel.kept.begin(), sel.kept.end(), 1u), sel.kept.end());
    EXPECT_NE(std::find(sel.kept.begin(), sel.kept.end(), 5u), sel.kept.end());
    ASSERT_EQ(sel.path.lambdas.size(), 100u);
    EXPECT_NEAR(sel.path.lambdas.back() / sel.path.lambdas.front(), 1e-3, 1e-12);
    for (std::size_t k = 1; k < sel.path.lambdas.size(); ++k) EXPECT_LT(sel.path.lambdas[k], sel.path.lambdas[k - 1]);

    // the first grid value is the smallest lambda with an all-zero solution
    const auto st = Standardizer::fit(x);
    const Eigen::VectorXd yc = y.array() - y.mean();
    const auto fit = lasso_fit(st.apply(x), yc, sel.path.lambdas.front());
    EXPECT_LE(fit.beta.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_GT(lasso_fit(st.apply(x), yc, sel.path.lambdas.front() * 0.99).beta.cwiseAbs().maxCoeff(), 0.0);

    opt.threads = 3;
    const auto same = lasso_select(x, y, opt);
    EXPECT_EQ(same.path.cv_error, sel.path.cv_error);
}

TEST(LassoSelect, LargeLambdaAndErrors)
{
    std::mt19937_64 rng(43);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(20, 4);
    for (auto& v : x.reshaped()) v = nd(rng);
    x.col(2).setConstant(7.0);
    Eigen::VectorXd y = x.col(0) + 0.1 * x.col(1);
    LassoSelectOptions opt;
    opt.grid = std::vector<double>{1e6};
    const auto none = lasso_select(x, y, opt);
    EXPECT_TRUE(none.kept.empty());
    EXPECT_EQ(none.constant, (std::vector<std::size_t>{2}));
    opt.grid = std::vector<double>{};
    EXPECT_THROW(lasso_select(x, y, opt), InvalidArgument);
    EXPECT_THROW(lasso_select(x.topRows(3), y.head(3)), InvalidArgument);
}

TEST(SelectionReport, JsonHasCounts)
{
    SelectionReport r;
    r.count_before = 5;
    r.count_after = 2;
    r.kept = {"a", "b"};
    r.dropped_pairs.push_back({"a", "c", 0.9});
    r.lasso = LassoPath{{1.0, 0.1}, {2.0, 1.5}, 0.1};
    const auto j = to_json(r);
    EXPECT_EQ(j["count_before"], 5);
    EXPECT_EQ(j["dropped_pairs"][0]["dropped"], "c");
    EXPECT_EQ(j["lasso"]["chosen_lambda"], 0.1);
}
