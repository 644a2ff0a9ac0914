#include <gtest/gtest.h>

#include <cmath>

#include "faultdiff/errors.hpp"
#include "faultdiff/ops.hpp"
#include "test_util.hpp"

namespace fd = faultdiff;
namespace ops = faultdiff::ops;
using fd::TensorD;
using fd::Var;
using fd::testing::gradcheck;
using fd::testing::random_tensor;
using V = std::vector<Var<double>>;

namespace {

constexpr double kOpTol = 1e-6;

/// Scalar probe sum(out * W) with a fixed random W, so every output entry
/// carries a distinct weight.
Var<double> probe(const Var<double>& out) {
    fd::Rng rng(99);
    return ops::sum(ops::mul(out, Var<double>::constant(random_tensor(out.shape(), rng))));
}

TensorD toy(std::uint64_t seed, std::size_t rows = 4, std::size_t cols = 2, double shift = 0.0) {
    fd::Rng rng(seed);
    TensorD t = random_tensor({rows, cols}, rng);
    for (auto& v : t.data()) v += shift;
    return t;
}

/// Entries pushed at least `gap` away from zero (keeps kinks out of reach).
TensorD away_from_zero(std::uint64_t seed, double gap) {
    TensorD t = toy(seed);
    for (auto& v : t.data()) v = v >= 0 ? v + gap : v - gap;
    return t;
}

} // namespace

TEST(OpsGrad, Matmul) {
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::matmul(x[0], x[1])); }, {toy(1), toy(2, 2, 3)}), kOpTol);
}

TEST(OpsGrad, Linear) {
    fd::Rng rng(3);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::linear(x[0], x[1], x[2])); },
                        {toy(1), toy(2, 2, 3), random_tensor({3}, rng)}),
              kOpTol);
}

TEST(OpsGrad, ElementwiseBinary) {
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::add(x[0], x[1])); }, {toy(1), toy(2)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::sub(x[0], x[1])); }, {toy(1), toy(2)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::mul(x[0], x[1])); }, {toy(1), toy(2)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::scale(x[0], -1.7)); }, {toy(1)}), kOpTol);
}

TEST(OpsGrad, Broadcasts) {
    fd::Rng rng(4);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::add_row(x[0], x[1])); }, {toy(1), random_tensor({2}, rng)}),
              kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::repeat_rows(x[0], 3)); }, {toy(1)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::tile_rows(x[0], 3)); }, {toy(1)}), kOpTol);
}

TEST(OpsGrad, Activations) {
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::gelu(x[0])); }, {toy(5)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::tanh(x[0])); }, {toy(5)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::square(x[0])); }, {toy(5)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::relu(x[0])); }, {away_from_zero(5, 0.1)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::abs(x[0])); }, {away_from_zero(6, 0.1)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::clamp_max(x[0], 0.0)); }, {away_from_zero(7, 0.1)}), kOpTol);
}

TEST(OpsGrad, Softmax) {
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::softmax(x[0], 1)); }, {toy(8)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::softmax(x[0], 0)); }, {toy(8)}), kOpTol);
}

TEST(OpsGrad, LayerNorm) {
    fd::Rng rng(9);
    const TensorD g = random_tensor({3}, rng), b = random_tensor({3}, rng);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::layer_norm(x[0], x[1], x[2])); }, {toy(9, 4, 3), g, b}),
              kOpTol);
}

TEST(OpsGrad, Reductions) {
    EXPECT_LT(gradcheck([](const V& x) { return ops::sum(ops::square(x[0])); }, {toy(10)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return ops::mean(ops::square(x[0])); }, {toy(10)}), kOpTol);
}

TEST(OpsGrad, Shapes) {
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::transpose(x[0])); }, {toy(11)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::reshape(x[0], {2, 4})); }, {toy(11)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::slice_rows(x[0], 1, 3)); }, {toy(11)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::slice_cols(x[0], 1, 2)); }, {toy(11)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::concat_rows<double>({x[0], x[1]})); }, {toy(1), toy(2)}),
              kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::concat_cols<double>({x[0], x[1]})); }, {toy(1), toy(2)}),
              kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::pad_rows(x[0], 2, 1, 2)); }, {toy(12)}), kOpTol);
    EXPECT_LT(gradcheck([](const V& x) { return probe(ops::mean_pool_rows(x[0], 2)); }, {toy(12)}), kOpTol);
}

TEST(OpsGrad, BasisExpand) {
    fd::Rng rng(13);
    const TensorD basis = random_tensor({4, 3}, rng);
    EXPECT_LT(gradcheck([&](const V& x) { return probe(ops::basis_expand(x[0], basis, 2)); }, {toy(13, 2, 6)}), kOpTol);
}

TEST(OpsGrad, Attention) {
    // batch 2, sequence 2, model width 2 split over 2 heads.
    for (long band : {-1L, 0L, 1L})
        EXPECT_LT(gradcheck([band](const V& x) { return probe(ops::attention(x[0], x[1], x[2], 2, 2, band)); },
                            {toy(14), toy(15), toy(16)}),
                  kOpTol)
            << "band " << band;
    for (std::size_t w : {1u, 3u})
        EXPECT_LT(gradcheck([w](const V& x) { return probe(ops::window_attention(x[0], x[1], x[2], 2, 1, w)); },
                            {toy(14), toy(15), toy(16)}),
                  kOpTol)
            << "window " << w;
}

TEST(OpsGrad, SoftmaxCrossEntropy) {
    EXPECT_LT(gradcheck([](const V& x) { return ops::softmax_cross_entropy(x[0], {0, 1, 1, 0}); }, {toy(17)}), kOpTol);
}

TEST(Ops, SoftmaxRowsSumToOne) {
    const auto s = ops::softmax(Var<double>::constant(toy(18, 5, 4, 100.0)), 1).value();
    for (std::size_t r = 0; r < 5; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 4; ++c) total += s.at(r, c);
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Ops, LayerNormStandardizesRows) {
    const auto y = ops::layer_norm(Var<double>::constant(toy(19, 3, 8)), Var<double>::constant(TensorD({8}, 1.0)),
                                   Var<double>::constant(TensorD({8})))
                       .value();
    for (std::size_t r = 0; r < 3; ++r) {
        double m = 0, v = 0;
        for (std::size_t c = 0; c < 8; ++c) m += y.at(r, c) / 8;
        for (std::size_t c = 0; c < 8; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 8;
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v, 1.0, 1e-3);
    }
}

TEST(Ops, MatmulMatchesHandProduct) {
    const TensorD a = TensorD::from_rows({{1, 2}, {3, 4}});
    const TensorD b = TensorD::from_rows({{5, 6}, {7, 8}});
    const auto c = ops::matmul(Var<double>::constant(a), Var<double>::constant(b)).value();
    EXPECT_EQ(c, TensorD::from_rows({{19, 22}, {43, 50}}));
}

TEST(Ops, ShapeMismatchThrows) {
    EXPECT_THROW(ops::matmul(Var<double>::constant(toy(1)), Var<double>::constant(toy(2))), fd::DimensionError);
    EXPECT_THROW(ops::add(Var<double>::constant(toy(1)), Var<double>::constant(toy(2, 2, 4))), fd::DimensionError);
    EXPECT_THROW(ops::window_attention(Var<double>::constant(toy(1)), Var<double>::constant(toy(1)),
                                       Var<double>::constant(toy(1)), 2, 1, 2),
                 fd::ContractError);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
    auto x = Var<double>::leaf(toy(1));
    {
        fd::NoGradGuard guard;
        EXPECT_FALSE(fd::grad_enabled());
        const auto y = ops::square(x);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_TRUE(fd::grad_enabled());
}

TEST(Autograd, BackwardRejectsNonScalar) {
    auto x = Var<double>::leaf(toy(1));
    EXPECT_THROW(fd::backward(ops::square(x)), fd::ContractError);
}

TEST(Autograd, GradientsAccumulateOverUses) {
    auto x = Var<double>::leaf(TensorD::from_rows({{3.0}}));
    fd::backward(ops::add(ops::square(x), ops::scale(x, 2.0)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3.0 + 2.0);
}

TEST(Autograd, GradcheckDetectsWrongBackward) {
    // y = x^2 with a backward that claims dy/dx = x.
    auto wrong_square = [](const V& x) {
        const auto& in = x[0];
        TensorD out = in.value();
        for (auto& v : out.data()) v *= v;
        auto y = fd::make_result<double>(std::move(out), {in}, [in](fd::Node<double>& n) {
            auto& g = in.node()->grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * in.value()[i];
        });
        return ops::sum(y);
    };
    EXPECT_GT(gradcheck(wrong_square, {toy(20)}), 0.1);
}
