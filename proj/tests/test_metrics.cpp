#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "faultdiff/errors.hpp"
#include "faultdiff/metrics.hpp"
#include "test_util.hpp"
#include "json.hpp"

namespace fd = faultdiff;
namespace mt = faultdiff::metrics;
namespace data = faultdiff::data;
using fd::TensorD;
using fd::TensorF;

namespace {

using SampleFn = std::function<double(std::size_t i, std::size_t t, std::size_t c)>;

data::Dataset make_set(const std::string& id, std::size_t n, std::size_t seq, std::size_t ch, const SampleFn& f) {
    data::Dataset ds;
    ds.id = id;
    for (std::size_t i = 0; i < n; ++i) {
        TensorF v({seq, ch});
        for (std::size_t t = 0; t < seq; ++t)
            for (std::size_t c = 0; c < ch; ++c) v.at(t, c) = static_cast<float>(f(i, t, c));
        ds.samples.emplace_back(std::move(v), data::default_channel_names(ch));
    }
    return ds;
}

data::Dataset sines(const std::string& id, std::size_t n, std::uint64_t seed) {
    fd::Rng rng(seed);
    std::vector<double> phase(n), amp(n);
    for (std::size_t i = 0; i < n; ++i) {
        phase[i] = rng.uniform(0, 2 * M_PI);
        amp[i] = rng.uniform(0.5, 1.0);
    }
    fd::Rng noise(seed + 1);
    return make_set(id, n, 24, 2, [&](std::size_t i, std::size_t t, std::size_t c) {
        return amp[i] * std::sin(2 * M_PI * double(t) / 12.0 + phase[i] + 0.5 * double(c)) + 0.05 * noise.normal();
    });
}

data::Dataset white_noise(const std::string& id, std::size_t n, std::uint64_t seed) {
    fd::Rng rng(seed);
    return make_set(id, n, 24, 2, [&](std::size_t, std::size_t, std::size_t) { return 0.7 * rng.normal(); });
}

TensorD gaussian_cloud(std::size_t n, const std::vector<double>& mean, const std::vector<double>& sd,
                       std::uint64_t seed) {
    fd::Rng rng(seed);
    TensorD x({n, mean.size()});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < mean.size(); ++c) x.at(r, c) = mean[c] + sd[c] * rng.normal();
    return x;
}

} // namespace

TEST(Frechet, IdenticalCloudsAreAtZero) {
    const TensorD a = gaussian_cloud(500, {0, 1, -1}, {1, 2, 0.5}, 1);
    EXPECT_LT(std::abs(mt::frechet_distance(a, a)), 1e-6);
}

TEST(Frechet, UnitShiftInOneDimension) {
    const TensorD a = gaussian_cloud(10000, {0}, {1}, 2), b = gaussian_cloud(10000, {1}, {1}, 3);
    EXPECT_NEAR(mt::frechet_distance(a, b), 1.0, 0.1);
}

TEST(Frechet, DiagonalGaussiansMatchClosedForm) {
    // For diagonal covariances: |m1 - m2|^2 + sum (s1 - s2)^2.
    const std::vector<double> m1{0, 1, 2}, m2{0.5, -1, 2}, s1{1, 2, 0.5}, s2{2, 1, 0.5};
    double want = 0;
    for (int k = 0; k < 3; ++k) want += (m1[k] - m2[k]) * (m1[k] - m2[k]) + (s1[k] - s2[k]) * (s1[k] - s2[k]);
    const double got = mt::frechet_distance(gaussian_cloud(40000, m1, s1, 4), gaussian_cloud(40000, m2, s2, 5));
    EXPECT_NEAR(got, want, 0.05 * want);
}

TEST(ContextFid, SelfIsZeroAndStructureIsFar) {
    const auto a = sines("a", 200, 1);
    EXPECT_LT(std::abs(mt::context_fid(a, a)), 1e-6);
    const double same_process = mt::context_fid(a, sines("b", 200, 50));
    const double other_process = mt::context_fid(a, white_noise("c", 200, 7));
    EXPECT_LT(same_process, other_process);
    EXPECT_EQ(mt::context_embed(a, mt::kEncoderSeed), mt::context_embed(a, mt::kEncoderSeed));
    EXPECT_EQ(mt::context_embed(a, 1).cols(), 16u);
}

TEST(Correlational, MatchesHandComputedMatrices) {
    fd::Rng rng(3);
    std::vector<double> base(20 * 24);
    for (auto& v : base) v = rng.normal();
    auto same = make_set("s", 20, 24, 2, [&](std::size_t i, std::size_t t, std::size_t) { return base[i * 24 + t]; });
    auto flip = make_set("f", 20, 24, 2, [&](std::size_t i, std::size_t t, std::size_t c) {
        return c == 0 ? base[i * 24 + t] : -base[i * 24 + t];
    });
    EXPECT_NEAR(mt::correlational_score(same, same), 0.0, 1e-12);
    // [[1, 1], [1, 1]] against [[1, -1], [-1, 1]].
    EXPECT_NEAR(mt::correlational_score(same, flip), 4.0, 1e-5);
    const auto c = mt::mean_correlation(flip);
    EXPECT_NEAR(c.at(0, 1), -1.0, 1e-5);
    EXPECT_NEAR(c.at(0, 0), 1.0, 1e-5);
}

TEST(Correlational, ConstantChannelIsFlagged) {
    auto flat = make_set("flat", 5, 24, 2, [](std::size_t i, std::size_t t, std::size_t c) {
        return c == 0 ? std::sin(double(t + i)) : 3.0;
    });
    bool constant = false;
    const double score = mt::correlational_score(flat, flat, &constant);
    EXPECT_TRUE(constant);
    EXPECT_TRUE(std::isfinite(score));
}

TEST(AcfFeatures, MatchHandComputation) {
    // x = 1, 2, 3, 4 (mean 2.5, sum of squares 5).
    auto ds = make_set("a", 1, 4, 1, [](std::size_t, std::size_t t, std::size_t) { return double(t + 1); });
    const auto f = mt::acf_features(ds, 2);
    EXPECT_NEAR(f.at(0, 0), (-1.5 * -0.5 + -0.5 * 0.5 + 0.5 * 1.5) / 5.0, 1e-6);
    EXPECT_NEAR(f.at(0, 1), (-1.5 * 0.5 + -0.5 * 1.5) / 5.0, 1e-6);
    EXPECT_THROW(mt::acf_features(ds, 4), fd::ContractError);
}

TEST(Diversity, CollapseIsZeroAndPermutationIsOne) {
    const auto real = sines("r", 30, 4);
    data::Dataset collapsed = real;
    for (auto& s : collapsed.samples) s = real.samples.front();
    EXPECT_NEAR(mt::diversity_score(real, collapsed), 0.0, 1e-12);
    data::Dataset shuffled = real;
    std::reverse(shuffled.samples.begin(), shuffled.samples.end());
    EXPECT_NEAR(mt::diversity_score(real, shuffled), 1.0, 1e-12);
}

TEST(Discriminative, SeparatesStructureFromNoise) {
    EXPECT_GT(mt::discriminative_score(sines("r", 200, 1), white_noise("s", 200, 2), 1), 0.4);
}

TEST(Discriminative, HalvesOfOneCorpusAreIndistinguishable) {
    const auto all = sines("r", 800, 9);
    data::Dataset a = all, b = all;
    a.samples.assign(all.samples.begin(), all.samples.begin() + 400);
    b.samples.assign(all.samples.begin() + 400, all.samples.end());
    EXPECT_LT(mt::discriminative_score(a, b, 1), 0.1);
}

TEST(Predictive, SyntheticEqualToRealMatchesTheScaleOfTheBaseline) {
    const auto real = sines("r", 200, 3);
    const double tstr = mt::predictive_score(real, sines("s", 200, 30), 1);
    const double trtr = mt::predictive_baseline(real, 1);
    const double noise = mt::predictive_score(real, white_noise("n", 200, 4), 1);
    EXPECT_LT(tstr, 2 * trtr + 0.02);
    EXPECT_GT(noise, tstr);
}

TEST(ScorePredictions, HandComputedMacroAverages) {
    const auto s = mt::score_predictions({0, 0, 1, 1, 2, 2}, {0, 1, 1, 1, 2, 0}, 3);
    // Per class (p, r): (1/2, 1/2), (2/3, 1), (1, 1/2).
    EXPECT_NEAR(s.accuracy, 4.0 / 6.0, 1e-12);
    EXPECT_NEAR(s.precision, (0.5 + 2.0 / 3.0 + 1.0) / 3.0, 1e-12);
    EXPECT_NEAR(s.recall, (0.5 + 1.0 + 0.5) / 3.0, 1e-12);
    EXPECT_NEAR(s.f1, (0.5 + 0.8 + 2.0 / 3.0) / 3.0, 1e-12);
    EXPECT_THROW(mt::score_predictions({0}, {0, 1}, 2), fd::ContractError);
}

TEST(DownstreamEval, LearnsSeparableClasses) {
    auto cls = [](const std::string& label, double freq, std::size_t n, std::uint64_t seed) {
        fd::Rng rng(seed);
        auto ds = make_set(label, n, 24, 2, [&](std::size_t, std::size_t t, std::size_t) {
            return std::sin(2 * M_PI * freq * double(t) / 24.0) + 0.1 * rng.normal();
        });
        ds.label = label;
        return ds;
    };
    const std::vector<data::Dataset> train{cls("fault:a", 1, 8, 1), cls("fault:b", 4, 8, 2)};
    const std::vector<data::Dataset> test{cls("fault:a", 1, 20, 3), cls("fault:b", 4, 20, 4)};
    const auto s = mt::downstream_eval(train, {}, test, 1);
    EXPECT_GT(s.accuracy, 0.9);
}

TEST(Pca, MatchesEigenUpToSign) {
    fd::Rng rng(6);
    TensorD x({60, 5});
    for (std::size_t r = 0; r < 60; ++r) {
        const double a = 3 * rng.normal(), b = rng.normal();
        for (std::size_t c = 0; c < 5; ++c) x.at(r, c) = a * double(c + 1) + b * (c % 2 ? 1.0 : -1.0) + 0.1 * rng.normal();
    }
    const auto got = mt::pca_2d(x);
    Eigen::MatrixXd m(60, 5);
    for (std::size_t r = 0; r < 60; ++r)
        for (std::size_t c = 0; c < 5; ++c) m(r, c) = x.at(r, c);
    const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered);
    for (int a = 0; a < 2; ++a) {
        const Eigen::VectorXd want = centered * es.eigenvectors().col(4 - a);
        double same = 0, flipped = 0;
        for (int r = 0; r < 60; ++r) {
            same = std::max(same, std::abs(got.at(r, a) - want(r)));
            flipped = std::max(flipped, std::abs(got.at(r, a) + want(r)));
        }
        EXPECT_LT(std::min(same, flipped), 1e-8) << "component " << a;
    }
}

TEST(Tsne, SeparatesWellSeparatedClusters) {
    const TensorD a = gaussian_cloud(30, {0, 0, 0, 0}, {1, 1, 1, 1}, 1);
    const TensorD b = gaussian_cloud(30, {20, 20, 20, 20}, {1, 1, 1, 1}, 2);
    TensorD x({60, 4});
    for (std::size_t r = 0; r < 30; ++r)
        for (std::size_t c = 0; c < 4; ++c) {
            x.at(r, c) = a.at(r, c);
            x.at(30 + r, c) = b.at(r, c);
        }
    const auto y = mt::tsne_2d(x, 10, 500, 3);
    // Nearest-neighbour labels in the embedding agree with the clusters.
    std::size_t agree = 0;
    for (std::size_t i = 0; i < 60; ++i) {
        std::size_t best = i == 0 ? 1 : 0;
        double bd = 1e300;
        for (std::size_t j = 0; j < 60; ++j) {
            if (j == i) continue;
            const double d = std::hypot(y.at(i, 0) - y.at(j, 0), y.at(i, 1) - y.at(j, 1));
            if (d < bd) bd = d, best = j;
        }
        agree += (i < 30) == (best < 30);
    }
    EXPECT_EQ(agree, 60u);
    EXPECT_EQ(y, mt::tsne_2d(x, 10, 500, 3));
    EXPECT_THROW(mt::tsne_2d(TensorD({3, 2}), 30, 10, 0), fd::ContractError);
}

TEST(Kde, IntegratesToOne) {
    fd::Rng rng(8);
    std::vector<double> v(500);
    for (auto& x : v) x = rng.normal();
    const auto k = mt::kde_1d(v, -8, 8, 400);
    double area = 0;
    for (std::size_t i = 1; i < k.size(); ++i)
        area += 0.5 * (k[i].second + k[i - 1].second) * (k[i].first - k[i - 1].first);
    EXPECT_NEAR(area, 1.0, 0.01);
    EXPECT_THROW(mt::kde_1d({}, 0, 1, 10), fd::ContractError);
}

TEST(Embed, PointsAndDensitiesPerLabel) {
    mt::EmbedOptions opt;
    opt.kde_grid = 16;
    const auto e = mt::embed_2d({{"normal", sines("n", 20, 1)}, {"synthetic", white_noise("s", 10, 2)}}, opt);
    EXPECT_EQ(e.points.size(), 30u);
    EXPECT_EQ(e.kde.size(), 2u * 2u * 16u);
    EXPECT_EQ(std::count_if(e.points.begin(), e.points.end(), [](const auto& p) { return p.label == "synthetic"; }), 10);
}

TEST(Report, RowsMediansAndFormats) {
    const auto real = sines("real_id", 40, 1), synth = sines("synth_id", 40, 2);
    mt::EvaluateOptions opt;
    opt.metrics = {"correlational", "diversity", "discriminative"};
    opt.seeds = {1, 2, 3};
    opt.config_hash = "abc";
    const auto r = mt::evaluate(real, synth, opt);
    EXPECT_EQ(r.rows.size(), 9u);
    std::vector<double> disc;
    for (const auto& row : r.rows)
        if (row.metric == "discriminative") disc.push_back(row.value);
    std::sort(disc.begin(), disc.end());
    EXPECT_DOUBLE_EQ(*r.median("discriminative"), disc[1]);
    EXPECT_FALSE(r.median("predictive"));

    const auto j = nlohmann::json::parse(mt::report_json(r));
    EXPECT_EQ(j["metric_version"], mt::kMetricVersion);
    EXPECT_EQ(j["corpus_real"], "real_id");
    EXPECT_EQ(j["config_hash"], "abc");
    EXPECT_EQ(j["metrics"]["discriminative"]["per_seed"].size(), 3u);
    EXPECT_DOUBLE_EQ(j["metrics"]["discriminative"]["median"].get<double>(), disc[1]);

    const auto csv = mt::report_csv(r);
    EXPECT_EQ(csv.rfind("metric,value,seed,corpus_real,corpus_synth,metric_version\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 9 + 3);

    opt.metrics = {"bogus"};
    EXPECT_THROW(mt::evaluate(real, synth, opt), fd::ContractError);
}

TEST(Report, ShapeMismatchIsRejected) {
    const auto real = sines("r", 10, 1);
    auto other = make_set("o", 10, 12, 2, [](std::size_t, std::size_t t, std::size_t) { return double(t); });
    EXPECT_THROW(mt::evaluate(real, other, {}), fd::DimensionError);
}
