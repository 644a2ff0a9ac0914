#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "faultdiff/data.hpp"
#include "faultdiff/tensor.hpp"

namespace faultdiff::diffusion {

enum class ScheduleKind { linear, cosine };

/// Per-step variance tables, indexed 0 .. steps-1.
struct NoiseSchedule {
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
    std::vector<double> posterior_var;  // beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); 0 at t = 0

    std::size_t steps() const { return beta.size(); }
    /// alpha_bar strictly decreasing and terminal alpha_bar below 0.05.
    bool well_formed() const;
};

/// Throws ContractError unless steps >= 2 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(std::size_t steps, ScheduleKind kind, double beta_start, double beta_end);

/// Builds the tables from an explicit beta sequence.
NoiseSchedule schedule_from_betas(std::vector<double> beta);

/// Linear schedule with the 1e-4 .. 0.02 endpoints rescaled by 1000 / steps.
NoiseSchedule default_schedule(std::size_t steps);

std::string schedule_kind_name(ScheduleKind kind);
ScheduleKind parse_schedule_kind(const std::string& name);

namespace detail {
inline void check_step(const NoiseSchedule& s, std::size_t t) {
    if (t >= s.steps())
        throw ContractError("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(s.steps()) + ")");
}
} // namespace detail

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <typename T>
Tensor<T> forward_sample(const Tensor<T>& x0, std::size_t t, const Tensor<T>& eps, const NoiseSchedule& s) {
    detail::check_step(s, t);
    if (x0.numel() != eps.numel()) throw DimensionError("forward_sample: x0 and eps shapes differ");
    const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
    Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<T>(a * double(x0[i]) + b * double(eps[i]));
    return out;
}

/// One ancestral step: mu + sqrt(posterior_var_t) z with
/// mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t).
/// z must be zero at t = 0.
template <typename T>
Tensor<T> reverse_step(const Tensor<T>& x_t, std::size_t t, const Tensor<T>& eps_hat, const Tensor<T>& z,
                       const NoiseSchedule& s) {
    detail::check_step(s, t);
    if (x_t.numel() != eps_hat.numel() || x_t.numel() != z.numel())
        throw DimensionError("reverse_step: x_t, eps_hat and z shapes differ");
    if (t == 0)
        for (std::size_t i = 0; i < z.numel(); ++i)
            if (z[i] != T(0)) throw ContractError("reverse_step: z must be zero at t = 0");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha[t]);
    const double eps_coef = s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t]);
    const double sigma = std::sqrt(s.posterior_var[t]);
    Tensor<T> out(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(inv_sqrt_alpha * (double(x_t[i]) - eps_coef * double(eps_hat[i])) + sigma * double(z[i]));
    return out;
}

/// Anything that predicts the injected noise for a batch of noised series.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    /// x: [batch*seq_len x channels]; steps: one diffusion step per sample.
    virtual TensorF predict_noise(const TensorF& x, std::span<const std::size_t> steps) const = 0;
};

struct SampleOptions {
    std::size_t seq_len = 24;
    std::size_t channels = 2;
    std::size_t batch = 64;
    const data::Normalizer* normalizer = nullptr;  // de-normalize outputs when set
};

/// Ancestral sampling from pure noise, t = steps-1 down to 0. Sample i draws
/// all of its noise from its own stream derived from (seed, i), so results
/// do not depend on the batch size. Throws SamplingError on a non-finite
/// intermediate.
std::vector<data::TimeSeries> sample(const NoisePredictor& model, const NoiseSchedule& schedule, std::size_t n,
                                     std::uint64_t seed, const SampleOptions& options);

} // namespace faultdiff::diffusion
