#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "faultdiff/denoiser.hpp"
#include "faultdiff/errors.hpp"
#include "faultdiff/losses.hpp"
#include "faultdiff/ops.hpp"
#include "test_util.hpp"

namespace fd = faultdiff;
namespace dn = faultdiff::denoiser;
namespace ops = faultdiff::ops;
using fd::TensorD;
using fd::Var;

namespace {

dn::DenoiserConfig tiny() {
    dn::DenoiserConfig c;
    c.model_dim = 8;
    c.enc_layers = 1;
    c.dec_layers = 2;
    c.heads = 2;
    c.ff_dim = 16;
    c.fourier_pairs = 2;
    c.seq_len = 6;
    c.channels = 2;
    c.steps = 10;
    return c;
}

/// Replaces every parameter (including the zero-initialized heads) by
/// small random values so that all paths carry gradient.
void randomize(fd::ParameterSet<double>& ps, std::uint64_t seed, double scale = 0.3) {
    fd::Rng rng(seed);
    for (auto& p : ps)
        for (auto& v : p->value.data()) v += scale * rng.normal();
}

Var<double> noisy_input(const dn::DenoiserConfig& c, std::size_t batch, std::uint64_t seed) {
    fd::Rng rng(seed);
    return Var<double>::constant(fd::testing::random_tensor({batch * c.seq_len, c.channels}, rng));
}

/// Least-squares residual norm of y against the columns of basis.
double span_residual(const TensorD& basis, const std::vector<double>& y) {
    Eigen::MatrixXd a(basis.rows(), basis.cols());
    for (std::size_t r = 0; r < basis.rows(); ++r)
        for (std::size_t c = 0; c < basis.cols(); ++c) a(r, c) = basis.at(r, c);
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), Eigen::Index(y.size()));
    const Eigen::VectorXd x = a.colPivHouseholderQr().solve(b);
    return (a * x - b).norm();
}

std::vector<double> column(const TensorD& t, std::size_t sample, std::size_t seq, std::size_t c) {
    std::vector<double> out;
    for (std::size_t s = 0; s < seq; ++s) out.push_back(t.at(sample * seq + s, c));
    return out;
}

class IdentityHook : public dn::DecoderHook<double> {
public:
    Var<double> after_layer(std::size_t, const Var<double>& h, std::size_t) override {
        ++calls;
        return h;
    }
    int calls = 0;
};

class ShiftHook : public dn::DecoderHook<double> {
public:
    Var<double> after_layer(std::size_t, const Var<double>& h, std::size_t) override {
        TensorD shift(h.shape(), 0.5);
        return ops::add(h, Var<double>::constant(shift));
    }
};

} // namespace

TEST(DenoiserConfig, Validation) {
    auto c = tiny();
    EXPECT_NO_THROW(c.validate());
    c.heads = 3;
    EXPECT_THROW(c.validate(), fd::ContractError);
    c = tiny();
    c.dec_layers = 0;
    EXPECT_THROW(c.validate(), fd::ContractError);
    c = tiny();
    c.steps = 1;
    EXPECT_THROW(c.validate(), fd::ContractError);
}

TEST(Bases, CubicPolynomialsLieInTrendSpan) {
    const auto basis = dn::polynomial_basis<double>(24);
    ASSERT_EQ(basis.shape(), (fd::Shape{24, 4}));
    fd::Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const double a = rng.normal(), b = rng.normal(), c = rng.normal(), d = rng.normal();
        std::vector<double> y;
        for (std::size_t t = 0; t < 24; ++t) {
            const double x = double(t);
            y.push_back(a + b * x + c * x * x + d * x * x * x);
        }
        EXPECT_LT(span_residual(basis, y), 1e-8);
    }
    std::vector<double> quartic;
    for (std::size_t t = 0; t < 24; ++t) quartic.push_back(std::pow(double(t) / 23.0, 4));
    EXPECT_GT(span_residual(basis, quartic), 1e-3);
}

TEST(Bases, FourierColumnsAreOrthogonalHarmonics) {
    const std::size_t tau = 24, k_max = 4;
    const auto basis = dn::fourier_basis<double>(tau, k_max);
    ASSERT_EQ(basis.shape(), (fd::Shape{tau, 2 * k_max}));
    for (std::size_t k = 1; k <= k_max; ++k)
        for (std::size_t t = 0; t < tau; ++t) {
            EXPECT_NEAR(basis.at(t, 2 * k - 2), std::cos(2 * M_PI * double(k * t) / double(tau)), 1e-12);
            EXPECT_NEAR(basis.at(t, 2 * k - 1), std::sin(2 * M_PI * double(k * t) / double(tau)), 1e-12);
        }
    for (std::size_t i = 0; i < 2 * k_max; ++i)
        for (std::size_t j = 0; j < 2 * k_max; ++j) {
            double dot = 0;
            for (std::size_t t = 0; t < tau; ++t) dot += basis.at(t, i) * basis.at(t, j);
            EXPECT_NEAR(dot, i == j ? double(tau) / 2 : 0.0, 1e-9) << i << "," << j;
        }
}

TEST(TimestepEmbed, NormAndDistinctness) {
    for (std::size_t dim : {8u, 64u}) {
        const auto a = dn::timestep_embed(3, dim), b = dn::timestep_embed(4, dim);
        double n2 = 0, diff = 0;
        for (std::size_t i = 0; i < dim; ++i) {
            n2 += a[i] * a[i];
            diff += std::abs(a[i] - b[i]);
        }
        EXPECT_NEAR(std::sqrt(n2), std::sqrt(dim / 2.0), 1e-12);
        EXPECT_GT(diff, 1e-3);
    }
    const auto zero = dn::timestep_embed(0, 8);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(zero[i], 0.0);
        EXPECT_EQ(zero[4 + i], 1.0);
    }
}

TEST(Denoiser, ShapesAndZeroInitializedHeads) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    const std::vector<std::size_t> steps{1, 7, 3};
    const auto out = model.forward(noisy_input(c, 3, 2), steps);
    EXPECT_EQ(out.eps_hat.shape(), (fd::Shape{18, 2}));
    ASSERT_EQ(out.taps.size(), c.dec_layers);
    for (const auto& tap : out.taps) EXPECT_EQ(tap.shape(), (fd::Shape{18, 8}));
    for (double v : out.eps_hat.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Denoiser, DeterministicInSeed) {
    const auto c = tiny();
    dn::Denoiser<double> a(c, 5), b(c, 5), other(c, 6);
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        EXPECT_EQ(a.params()[i].name, b.params()[i].name);
        EXPECT_EQ(a.params()[i].value, b.params()[i].value);
    }
    EXPECT_NE(a.params().get("backbone.input.w").value, other.params().get("backbone.input.w").value);
    EXPECT_NE(a.params().find("backbone.head.trend.w"), nullptr);
    EXPECT_NE(a.params().find("backbone.dec.1.cross.q.w"), nullptr);
}

TEST(Denoiser, HeadsSumAndStayInTheirBases) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    randomize(model.params(), 3);
    const std::vector<std::size_t> steps{2, 9};
    const auto out = model.forward(noisy_input(c, 2, 4), steps);
    const auto parts = model.decompose(out.final_state, 2);
    const auto& e = out.eps_hat.value();
    for (std::size_t i = 0; i < e.numel(); ++i)
        EXPECT_NEAR(e[i], parts.trend.value()[i] + parts.seasonal.value()[i] + parts.residual.value()[i], 1e-12);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t ch = 0; ch < 2; ++ch) {
            EXPECT_LT(span_residual(model.trend_basis(), column(parts.trend.value(), b, 6, ch)), 1e-10);
            EXPECT_LT(span_residual(model.seasonal_basis(), column(parts.seasonal.value(), b, 6, ch)), 1e-10);
        }
}

TEST(Denoiser, BatchMembersAreIndependent) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    randomize(model.params(), 8);
    const auto x = noisy_input(c, 3, 5);
    const std::vector<std::size_t> steps{4, 0, 9};
    const auto joint = model.forward(x, steps).eps_hat.value();
    for (std::size_t b = 0; b < 3; ++b) {
        const auto single = model.forward(ops::slice_rows(x, b * 6, (b + 1) * 6), std::span(&steps[b], 1)).eps_hat.value();
        for (std::size_t i = 0; i < single.numel(); ++i) EXPECT_NEAR(single[i], joint[b * 12 + i], 1e-12);
    }
}

TEST(Denoiser, TimestepChangesThePrediction) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    randomize(model.params(), 8);
    const auto x = noisy_input(c, 1, 5);
    const std::vector<std::size_t> s0{0}, s1{9};
    EXPECT_NE(model.forward(x, s0).eps_hat.value(), model.forward(x, s1).eps_hat.value());
}

TEST(Denoiser, HooksSeeEveryDecoderLayer) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    randomize(model.params(), 8);
    const auto x = noisy_input(c, 2, 5);
    const std::vector<std::size_t> steps{1, 2};
    const auto plain = model.forward(x, steps).eps_hat.value();
    IdentityHook identity;
    EXPECT_EQ(model.forward(x, steps, &identity).eps_hat.value(), plain);
    EXPECT_EQ(identity.calls, 2);
    ShiftHook shift;
    EXPECT_NE(model.forward(x, steps, &shift).eps_hat.value(), plain);
}

TEST(Denoiser, NonFiniteActivationNamesTheLayer) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    model.params().get("backbone.dec.1.ff.up.w").value[0] = std::numeric_limits<double>::infinity();
    const std::vector<std::size_t> steps{1};
    try {
        model.forward(noisy_input(c, 1, 5), steps);
        FAIL() << "expected ForwardError";
    } catch (const fd::ForwardError& e) {
        EXPECT_NE(std::string(e.what()).find("decoder layer 1"), std::string::npos) << e.what();
    }
}

TEST(Denoiser, RejectsBadInputs) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    const std::vector<std::size_t> two{1, 2}, late{10};
    EXPECT_THROW(model.forward(noisy_input(c, 1, 5), two), fd::ContractError);
    EXPECT_THROW(model.forward(noisy_input(c, 1, 5), late), fd::ContractError);
}

TEST(DenoiserGrad, EndToEndLossMatchesFiniteDifferences) {
    const auto c = tiny();
    dn::Denoiser<double> model(c, 1);
    randomize(model.params(), 12);
    fd::Rng rng(13);
    const auto x = noisy_input(c, 3, 14);
    const auto eps = Var<double>::constant(fd::testing::random_tensor({18, 2}, rng));
    const std::vector<std::size_t> steps{1, 5, 8};
    fd::training::LossConfig loss;
    loss.margin = 50.0;  // keep the clamp inactive so the loss is smooth
    const double err = fd::testing::param_gradcheck(model.params(), [&] {
        const auto out = model.forward(x, steps);
        return fd::training::total_loss(eps, out.eps_hat, 3, loss, 7).total;
    });
    EXPECT_LT(err, 1e-4);
}
