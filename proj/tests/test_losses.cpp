#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "faultdiff/errors.hpp"
#include "faultdiff/losses.hpp"
#include "faultdiff/ops.hpp"
#include "test_util.hpp"

namespace fd = faultdiff;
namespace tr = faultdiff::training;
using fd::TensorD;
using fd::Var;

namespace {

/// Brute-force diversity term over an explicit pair list.
double reference_diversity(const TensorD& preds, std::size_t batch,
                           const std::vector<std::pair<std::size_t, std::size_t>>& pairs, double margin,
                           tr::DiversityMode mode) {
    if (mode == tr::DiversityMode::off) return 0.0;
    const std::size_t per = preds.numel() / batch;
    double acc = 0;
    for (const auto& [i, j] : pairs) {
        double d = 0;
        for (std::size_t k = 0; k < per; ++k) {
            const double diff = preds[i * per + k] - preds[j * per + k];
            d += diff * diff;
        }
        d /= double(per);
        acc += mode == tr::DiversityMode::intent ? std::min(d, margin) : d;
    }
    acc /= double(pairs.size());
    return mode == tr::DiversityMode::intent ? -acc : acc;
}

} // namespace

TEST(DrawPairs, AllPairsWhenBudgetCoversThem) {
    const auto pairs = tr::draw_pairs(4, 100, 1);
    const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    EXPECT_EQ(pairs, expected);
}

TEST(DrawPairs, SampleIsDistinctOrderedAndSeeded) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto pairs = tr::draw_pairs(8, 10, seed);
        ASSERT_EQ(pairs.size(), 10u);
        std::set<std::pair<std::size_t, std::size_t>> seen(pairs.begin(), pairs.end());
        EXPECT_EQ(seen.size(), 10u);
        for (const auto& [i, j] : pairs) {
            EXPECT_LT(i, j);
            EXPECT_LT(j, 8u);
        }
        EXPECT_EQ(pairs, tr::draw_pairs(8, 10, seed));
    }
    EXPECT_NE(tr::draw_pairs(8, 10, 1), tr::draw_pairs(8, 10, 2));
    EXPECT_THROW(tr::draw_pairs(1, 4, 0), fd::ContractError);
}

TEST(DrawPairs, SamplingCoversEveryPairOverSeeds) {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (std::uint64_t seed = 0; seed < 200; ++seed)
        for (const auto& p : tr::draw_pairs(6, 3, seed)) seen.insert(p);
    EXPECT_EQ(seen.size(), 15u);
}

TEST(BaseLoss, IsMeanAbsoluteError) {
    const TensorD eps = TensorD::from_rows({{1, -2}, {0.5, 3}});
    const TensorD pred = TensorD::from_rows({{0, -1}, {1.5, 1}});
    const double got =
        tr::base_loss(Var<double>::constant(eps), Var<double>::constant(pred)).value().item();
    EXPECT_DOUBLE_EQ(got, (1 + 1 + 1 + 2) / 4.0);
    EXPECT_THROW(tr::base_loss(Var<double>::constant(eps), Var<double>::constant(TensorD({4, 1}))),
                 fd::DimensionError);
}

TEST(DiversityLoss, MatchesBruteForceInEveryMode) {
    fd::Rng rng(5);
    const std::size_t batch = 6;
    const TensorD preds = fd::testing::random_tensor({batch * 4, 2}, rng, 0.6);
    for (auto mode : {tr::DiversityMode::intent, tr::DiversityMode::literal, tr::DiversityMode::off})
        for (std::size_t pairs : {4u, 15u})
            for (double margin : {0.3, 1.0, 10.0}) {
                const double got =
                    tr::diversity_loss(Var<double>::constant(preds), batch, pairs, margin, 9, mode).value().item();
                const double want =
                    reference_diversity(preds, batch, tr::draw_pairs(batch, pairs, 9), margin, mode);
                EXPECT_NEAR(got, want, 1e-12) << tr::diversity_mode_name(mode) << " " << pairs << " " << margin;
            }
}

TEST(DiversityLoss, IdenticalPredictionsHaveZeroDiversity) {
    TensorD same({12, 2}, 0.25);
    for (auto mode : {tr::DiversityMode::intent, tr::DiversityMode::literal})
        EXPECT_EQ(tr::diversity_loss(Var<double>::constant(same), 3, 3, 1.0, 0, mode).value().item(), 0.0);
}

TEST(DiversityLoss, IntentSaturatesAtTheMargin) {
    // Far-apart predictions: every clamped distance equals the margin.
    TensorD preds({3 * 2, 1});
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t r = 0; r < 2; ++r) preds[b * 2 + r] = 100.0 * double(b);
    EXPECT_DOUBLE_EQ(
        tr::diversity_loss(Var<double>::constant(preds), 3, 3, 0.5, 0, tr::DiversityMode::intent).value().item(),
        -0.5);
}

TEST(DiversityLoss, GradientMatchesFiniteDifferences) {
    fd::Rng rng(6);
    const TensorD preds = fd::testing::random_tensor({5 * 3, 2}, rng, 0.3);
    for (auto mode : {tr::DiversityMode::intent, tr::DiversityMode::literal}) {
        const double err = fd::testing::gradcheck(
            [mode](const std::vector<Var<double>>& x) { return tr::diversity_loss(x[0], 5, 6, 10.0, 3, mode); },
            {preds});
        EXPECT_LT(err, 1e-6) << tr::diversity_mode_name(mode);
    }
}

TEST(TotalLoss, CombinesBaseAndWeightedDiversity) {
    fd::Rng rng(7);
    const auto eps = Var<double>::constant(fd::testing::random_tensor({8, 2}, rng));
    const auto preds = Var<double>::constant(fd::testing::random_tensor({8, 2}, rng));
    tr::LossConfig cfg;
    cfg.lambda = 0.3;
    cfg.pair_count = 6;
    const auto parts = tr::total_loss(eps, preds, 4, cfg, 11);
    EXPECT_NEAR(parts.total.value().item(),
                parts.base.value().item() + 0.3 * parts.diversity.value().item(), 1e-12);
}

TEST(TotalLoss, ZeroLambdaOrOffModeReturnsTheBaseNode) {
    fd::Rng rng(8);
    const auto eps = Var<double>::constant(fd::testing::random_tensor({8, 2}, rng));
    const auto preds = Var<double>::leaf(fd::testing::random_tensor({8, 2}, rng));
    tr::LossConfig zero;
    zero.lambda = 0.0;
    const auto a = tr::total_loss(eps, preds, 4, zero, 1);
    EXPECT_EQ(a.total.node(), a.base.node());
    tr::LossConfig off;
    off.mode = tr::DiversityMode::off;
    const auto b = tr::total_loss(eps, preds, 4, off, 1);
    EXPECT_EQ(b.total.node(), b.base.node());
    EXPECT_FALSE(b.diversity.valid());
}

TEST(LossConfig, ValidationAndNames) {
    tr::LossConfig c;
    EXPECT_NO_THROW(c.validate());
    c.lambda = -1;
    EXPECT_THROW(c.validate(), fd::ContractError);
    c = {};
    c.margin = 0;
    EXPECT_THROW(c.validate(), fd::ContractError);
    c = {};
    c.pair_count = 0;
    EXPECT_THROW(c.validate(), fd::ContractError);
    for (auto m : {tr::DiversityMode::intent, tr::DiversityMode::literal, tr::DiversityMode::off})
        EXPECT_EQ(tr::parse_diversity_mode(tr::diversity_mode_name(m)), m);
    EXPECT_THROW(tr::parse_diversity_mode("loud"), fd::ContractError);
}
