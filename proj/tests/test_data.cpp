#include "oracles.hpp"

#include <gvidgp/checkpoint.hpp>
#include <gvidgp/data.hpp>
#include <gvidgp/presets.hpp>
#include <gvidgp/trainer.hpp>

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

using namespace gvidgp;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("gvidgp_test_" + name);
}

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

RawTable table_of(const Eigen::MatrixXd& m) {
    RawTable t;
    t.values = m;
    return t;
}

}  // namespace

TEST(LoadCsv, HeaderThenThreeRows) {
    std::istringstream in("a,b\n1,2\n3,4\n5,6");
    const auto t = parse_csv(in, true);
    EXPECT_EQ(t.rows(), 3);
    EXPECT_EQ(t.cols(), 2);
    EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(t.values(2, 1), 6.0);
}

TEST(LoadCsv, MalformedCellNamesRowAndColumn) {
    std::istringstream in("1,x");
    try {
        parse_csv(in, false);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.row(), 1u);
        EXPECT_EQ(e.column(), 2u);
        EXPECT_EQ(e.content(), "x");
    }
}

TEST(LoadCsv, RaggedRowIsRejected) {
    std::istringstream in("1,2\n3\n");
    EXPECT_THROW(parse_csv(in, false), ParseError);
}

TEST(LoadCsv, EmptyInputs) {
    std::istringstream blank("\n\n");
    EXPECT_THROW(parse_csv(blank, false), EmptyFile);
    std::istringstream header_only("a,b\n");
    EXPECT_THROW(parse_csv(header_only, true), EmptyFile);
}

TEST(LoadCsv, MissingRowsAreDroppedAndCounted) {
    std::istringstream in("1,2\nnan,3\n4,\n5,6\n");
    const auto t = parse_csv(in, false);
    EXPECT_EQ(t.rows(), 2);
    EXPECT_EQ(t.dropped_rows, 2u);
    EXPECT_FALSE(t.values.hasNaN());
}

TEST(LoadCsv, MissingFile) { EXPECT_THROW(load_csv(temp_path("does_not_exist.csv"), false), Error); }

TEST(LoadCsv, RandomTableRoundTripsBitwise) {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        Eigen::MatrixXd m = oracle::random_matrix(rng, 100, 5, std::pow(10.0, 3 * rep - 6));
        m(0, 0) = -0.0;
        m(1, 1) = 5e-324;
        m(2, 2) = 1.7976931348623157e308;
        const auto path = temp_path("roundtrip.csv");
        write_csv(path, m, {"a", "b", "c", "d", "e"});
        const auto t = load_csv(path, true);
        EXPECT_TRUE(bitwise_equal(t.values, m)) << "rep " << rep;
        std::filesystem::remove(path);
    }
}

TEST(NormalizeSplit, NinetyTenSplit) {
    std::mt19937_64 rng(3);
    const auto t = table_of(oracle::random_matrix(rng, 100, 4));
    const auto ds = normalize_split(t, {}, 0.1, 5);
    EXPECT_EQ(ds.train.size(), 90u);
    EXPECT_EQ(ds.test.size(), 10u);
    std::vector<Eigen::Index> all = ds.train;
    all.insert(all.end(), ds.test.begin(), ds.test.end());
    std::sort(all.begin(), all.end());
    for (Eigen::Index i = 0; i < 100; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
}

TEST(NormalizeSplit, TrainStatisticsAreStandardized) {
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 10 + static_cast<int>(rng() % 200);
        const int d = 2 + static_cast<int>(rng() % 5);
        Eigen::MatrixXd m = oracle::random_matrix(rng, n, d, oracle::uniform(rng, 0.01, 100.0));
        m.rowwise() += oracle::random_matrix(rng, 1, d, 50.0).row(0);
        const auto ds = normalize_split(table_of(m), {}, oracle::uniform(rng, 0.05, 0.5), rng());
        for (const Eigen::MatrixXd& part : {ds.x_train(), ds.y_train()}) {
            const Eigen::RowVectorXd mean = part.colwise().mean();
            const Eigen::RowVectorXd sd =
                ((part.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(part.rows())).sqrt();
            EXPECT_LT(mean.cwiseAbs().maxCoeff(), 1e-10);
            EXPECT_LT((sd.array() - 1.0).abs().maxCoeff(), 1e-10);
        }
    }
}

TEST(NormalizeSplit, SameSeedSameSplitDifferentSeedDifferentSplit) {
    std::mt19937_64 rng(4);
    const auto t = table_of(oracle::random_matrix(rng, 50, 3));
    const auto a = normalize_split(t, {}, 0.2, 9);
    const auto b = normalize_split(t, {}, 0.2, 9);
    const auto c = normalize_split(t, {}, 0.2, 10);
    EXPECT_EQ(a.train, b.train);
    EXPECT_TRUE(bitwise_equal(a.x, b.x));
    EXPECT_NE(a.train, c.train);
}

TEST(NormalizeSplit, ConstantColumnGetsUnitStdAndWarning) {
    std::mt19937_64 rng(5);
    Eigen::MatrixXd m = oracle::random_matrix(rng, 30, 3);
    m.col(1).setConstant(4.0);
    const auto ds = normalize_split(table_of(m), {}, 0.1, 1);
    EXPECT_EQ(ds.stats.feature_stds(1), 1.0);
    EXPECT_EQ(ds.warnings.size(), 1u);
    EXPECT_TRUE(ds.x.col(1).isZero(0.0));
}

TEST(NormalizeSplit, Preconditions) {
    std::mt19937_64 rng(6);
    EXPECT_THROW(normalize_split(table_of(oracle::random_matrix(rng, 9, 2)), {}, 0.1, 0), TooFewRows);
    const auto t = table_of(oracle::random_matrix(rng, 20, 2));
    EXPECT_THROW(normalize_split(t, {}, 0.0, 0), ConfigError);
    EXPECT_THROW(normalize_split(t, {}, 1.0, 0), ConfigError);
    EXPECT_THROW(normalize_split(t, TargetSpec{{5}, {}}, 0.1, 0), ConfigError);
    EXPECT_THROW(normalize_split(t, TargetSpec{{0, 1}, {}}, 0.1, 0), ConfigError);
}

TEST(NormalizeSplit, TargetsByNameAndIndex) {
    std::istringstream in("u,v,w\n1,2,3\n4,5,6\n7,8,10\n1,1,1\n2,3,5\n8,13,21\n3,4,5\n6,6,6\n0,1,0\n9,9,8\n");
    const auto t = parse_csv(in, true);
    const auto by_name = normalize_split(t, TargetSpec{{}, {"u"}}, 0.2, 2);
    const auto by_index = normalize_split(t, TargetSpec{{0}, {}}, 0.2, 2);
    EXPECT_TRUE(bitwise_equal(by_name.y, by_index.y));
    EXPECT_EQ(by_name.x.cols(), 2);
}

TEST(NormalizeSplit, ContaminationTouchesTrainingTargetsOnly) {
    const auto t = synthetic_sine(200, 0.1, 3);
    const auto clean = normalize_split(t, {}, 0.1, 4);
    const auto dirty = normalize_split(t, {}, 0.1, 4, Contamination{0.05, 5.0, false});
    EXPECT_EQ(dirty.outliers.size(), 9u);  // round(0.05 * 180)
    EXPECT_EQ(clean.test, dirty.test);
    const Eigen::MatrixXd clean_test = clean.stats.denormalize_targets(clean.y_test());
    const Eigen::MatrixXd dirty_test = dirty.stats.denormalize_targets(dirty.y_test());
    EXPECT_LT((clean_test - dirty_test).cwiseAbs().maxCoeff(), 1e-12);
    for (auto i : dirty.outliers) EXPECT_TRUE(std::find(dirty.test.begin(), dirty.test.end(), i) == dirty.test.end());
}

TEST(Rmse, Examples) {
    NormalizationStats unit;
    unit.target_means = Eigen::VectorXd::Zero(2);
    unit.target_stds = Eigen::VectorXd::Ones(2);
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd truth = oracle::random_matrix(rng, 7, 2);
    EXPECT_EQ(rmse(truth, truth, unit), 0.0);
    EXPECT_NEAR(rmse(truth.array() + 1.0, truth, unit), 1.0, 1e-15);
    EXPECT_THROW(rmse(truth.topRows(3), truth, unit), DimensionMismatch);
}

TEST(Rmse, MatchesTwoPassDenormalizedFormula) {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 1 + static_cast<int>(rng() % 40), p = 1 + static_cast<int>(rng() % 3);
        NormalizationStats s;
        s.target_means = oracle::random_matrix(rng, p, 1, 10.0).col(0);
        s.target_stds = oracle::random_matrix(rng, p, 1).col(0).cwiseAbs().array() + 0.1;
        const Eigen::MatrixXd a = oracle::random_matrix(rng, n, p), b = oracle::random_matrix(rng, n, p);
        double sum = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) {
                const double ra = a(i, j) * s.target_stds(j) + s.target_means(j);
                const double rb = b(i, j) * s.target_stds(j) + s.target_means(j);
                sum += (ra - rb) * (ra - rb);
            }
        EXPECT_NEAR(rmse(a, b, s), std::sqrt(sum / (n * p)), 1e-12);
    }
}

TEST(TestLogLikelihood, PointMassLikePredictiveHasZeroLogDensity) {
    NormalizationStats s;
    s.target_means = Eigen::VectorXd::Zero(1);
    s.target_stds = Eigen::VectorXd::Ones(1);
    const double var = 1.0 / (2.0 * std::numbers::pi);
    Eigen::MatrixXd y(4, 1);
    y << 0.3, -1.0, 2.0, 0.0;
    auto eval = [&](Eigen::Index i, const Eigen::RowVectorXd& yi) { return oracle::normal_logpdf(yi(0), y(i, 0), var); };
    EXPECT_NEAR(test_log_likelihood(eval, y, s), 0.0, 1e-14);
    s.target_stds(0) = 2.0;
    EXPECT_NEAR(test_log_likelihood(eval, y, s), -std::log(2.0), 1e-14);
}

TEST(TestLogLikelihood, MixturePredictiveMatchesQuadratureInOriginalUnits) {
    const auto t = synthetic_sine(60, 0.2, 12);
    const auto ds = normalize_split(t, {}, 0.1, 12);
    ModelOptions opts;
    opts.layers = 2;
    opts.num_inducing = 10;
    auto model = init_model(ds.x_train(), 1, opts, 1);
    model.layers[0].q_mu.setConstant(0.4);
    model.layers[1].q_mu.setConstant(-0.3);
    for (auto& l : model.layers)
        for (Eigen::Index c = 0; c < l.output_dim(); ++c) l.set_q_sqrt(c, 0.5 * Eigen::MatrixXd::Identity(10, 10));
    const auto pred = predict(model, ds.x_test(), 25, 3);
    const double mu = ds.stats.target_means(0), sd = ds.stats.target_stds(0);

    const Eigen::MatrixXd y_raw = ds.stats.denormalize_targets(ds.y_test());
    double direct = 0.0;
    for (Eigen::Index i = 0; i < y_raw.rows(); ++i) {
        auto density = [&](double y) {
            double acc = 0.0;
            for (std::size_t s = 0; s < pred.path_means.size(); ++s)
                acc += oracle::normal_pdf(y, pred.path_means[s](i, 0) * sd + mu,
                                          (pred.path_variances[s](i, 0) + pred.noise_variance) * sd * sd);
            return acc / static_cast<double>(pred.path_means.size());
        };
        EXPECT_NEAR(oracle::simpson(density, mu - 20 * sd, mu + 20 * sd), 1.0, 1e-6);
        direct += std::log(density(y_raw(i, 0)));
    }
    direct /= static_cast<double>(y_raw.rows());
    auto eval = [&](Eigen::Index i, const Eigen::RowVectorXd& yi) { return pred.log_density(i, yi.transpose()); };
    EXPECT_NEAR(test_log_likelihood(eval, ds.y_test(), ds.stats), direct, 1e-6);
}

TEST(Metrics, InvariantToRescalingRawData) {
    const auto t = synthetic_sine(80, 0.1, 21);
    RawTable scaled = t;
    scaled.values.col(0) = 7.0 * t.values.col(0).array() + 3.0;
    scaled.values.col(1) = 0.01 * t.values.col(1).array() - 2.0;

    auto fit = [](const RawTable& table) {
        const auto ds = normalize_split(table, {}, 0.1, 6);
        ModelOptions opts;
        opts.num_inducing = 15;
        auto model = init_model(ds.x_train(), 1, opts, 6);
        TrainConfig cfg;
        cfg.iterations = 100;
        cfg.seed = 6;
        const auto res = train(model, ds.x_train(), ds.y_train(), GviProblem{LossSpec::nll(), {QuantifierSpec::kld()}, 1}, cfg);
        const auto pred = predict(res.model, ds.x_test(), 1, 0);
        return std::pair{rmse(pred.mean, ds.y_test(), ds.stats), ds.stats.target_stds(0)};
    };
    const auto [raw_rmse, raw_sd] = fit(t);
    const auto [scaled_rmse, scaled_sd] = fit(scaled);
    EXPECT_NEAR(scaled_rmse / 0.01, raw_rmse, 1e-6);
    EXPECT_NEAR(scaled_sd / 0.01, raw_sd, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    auto ref = reference_problem(3);
    ref.model.layers[1].whiten = false;
    Checkpoint ck{ref.model, 0xDEADBEEFCAFEULL, NormalizationStats{}};
    ck.stats->feature_means = Eigen::Vector2d(0.1, -1.0 / 3.0);
    ck.stats->feature_stds = Eigen::Vector2d(1.0 / 7.0, 2.0);
    ck.stats->target_means = Eigen::VectorXd::Constant(1, std::numbers::pi);
    ck.stats->target_stds = Eigen::VectorXd::Constant(1, std::numbers::e);
    const auto path = temp_path("checkpoint.json");
    save_checkpoint(path, ck);
    const auto back = load_checkpoint(path);
    std::filesystem::remove(path);

    EXPECT_EQ(back.seed, ck.seed);
    EXPECT_EQ(parameter_fingerprint(back.model), parameter_fingerprint(ck.model));
    ASSERT_EQ(back.model.num_layers(), 2u);
    for (std::size_t l = 0; l < 2; ++l) {
        const auto& a = ck.model.layers[l];
        const auto& b = back.model.layers[l];
        EXPECT_EQ(a.whiten, b.whiten);
        EXPECT_EQ(a.mean_fn, b.mean_fn);
        EXPECT_TRUE(bitwise_equal(a.projection, b.projection));
        EXPECT_TRUE(bitwise_equal(a.inducing, b.inducing));
        EXPECT_TRUE(bitwise_equal(a.q_mu, b.q_mu));
    }
    EXPECT_TRUE(bitwise_equal(back.stats->feature_stds, ck.stats->feature_stds));
    EXPECT_TRUE(bitwise_equal(back.stats->target_means, ck.stats->target_means));
    EXPECT_EQ(to_json(back).dump(), to_json(ck).dump());
}

TEST(Checkpoint, RejectsForeignOrInconsistentFiles) {
    auto j = to_json(Checkpoint{reference_problem().model, 1, {}});
    auto bad_version = j;
    bad_version["version"] = 99;
    EXPECT_THROW(checkpoint_from_json(bad_version), Error);
    auto bad_shape = j;
    bad_shape["layers"][0]["q_mu"]["rows"] = 3;
    EXPECT_THROW(checkpoint_from_json(bad_shape), Error);
    auto missing = j;
    missing.erase("likelihood");
    EXPECT_THROW(checkpoint_from_json(missing), Error);
    EXPECT_NO_THROW(checkpoint_from_json(j));
}
