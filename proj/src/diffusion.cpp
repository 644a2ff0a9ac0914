#include "faultdiff/diffusion.hpp"

#include <algorithm>

#include "faultdiff/rng.hpp"

namespace faultdiff::diffusion {

bool NoiseSchedule::well_formed() const {
    if (beta.empty()) return false;
    for (std::size_t t = 0; t < beta.size(); ++t) {
        if (!(beta[t] > 0 && beta[t] < 1)) return false;
        if (t > 0 && !(alpha_bar[t] < alpha_bar[t - 1])) return false;
    }
    return alpha_bar.back() < 0.05;
}

NoiseSchedule schedule_from_betas(std::vector<double> beta) {
    if (beta.empty()) throw ContractError("schedule needs at least one step");
    NoiseSchedule s;
    const std::size_t n = beta.size();
    s.alpha.resize(n);
    s.alpha_bar.resize(n);
    s.posterior_var.resize(n);
    double prod = 1.0;
    for (std::size_t t = 0; t < n; ++t) {
        if (!(beta[t] > 0 && beta[t] < 1)) throw ContractError("beta[" + std::to_string(t) + "] outside (0, 1)");
        s.alpha[t] = 1.0 - beta[t];
        const double prev = prod;
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
        s.posterior_var[t] = t == 0 ? 0.0 : beta[t] * (1.0 - prev) / (1.0 - prod);
    }
    s.beta = std::move(beta);
    return s;
}

NoiseSchedule make_schedule(std::size_t steps, ScheduleKind kind, double beta_start, double beta_end) {
    if (steps < 2) throw ContractError("make_schedule: steps must be >= 2");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
        throw ContractError("make_schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> beta(steps);
    if (kind == ScheduleKind::linear) {
        for (std::size_t t = 0; t < steps; ++t)
            beta[t] = beta_start + (beta_end - beta_start) * double(t) / double(steps - 1);
    } else {
        // Squared-cosine alpha_bar, betas clipped into [beta_start, max(beta_end, 0.999)].
        constexpr double s = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / double(steps) + s) / (1.0 + s) * M_PI / 2.0);
            return c * c;
        };
        for (std::size_t t = 0; t < steps; ++t)
            beta[t] = std::clamp(1.0 - f(double(t + 1)) / f(double(t)), beta_start, std::max(beta_end, 0.999));
    }
    return schedule_from_betas(std::move(beta));
}

NoiseSchedule default_schedule(std::size_t steps) {
    const double scale = 1000.0 / double(steps);
    return make_schedule(steps, ScheduleKind::linear, 1e-4 * scale, std::min(0.02 * scale, 0.999));
}

std::string schedule_kind_name(ScheduleKind kind) { return kind == ScheduleKind::linear ? "linear" : "cosine"; }

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "linear") return ScheduleKind::linear;
    if (name == "cosine") return ScheduleKind::cosine;
    throw ContractError("unknown schedule kind '" + name + "'");
}

std::vector<data::TimeSeries> sample(const NoisePredictor& model, const NoiseSchedule& schedule, std::size_t n,
                                     std::uint64_t seed, const SampleOptions& options) {
    const std::size_t tau = options.seq_len, dim = options.channels, per = tau * dim;
    std::vector<data::TimeSeries> out;
    out.reserve(n);
    const std::size_t batch_cap = std::max<std::size_t>(1, options.batch);

    for (std::size_t first = 0; first < n; first += batch_cap) {
        const std::size_t b = std::min(batch_cap, n - first);
        std::vector<Rng> streams;
        for (std::size_t i = 0; i < b; ++i) streams.emplace_back(derive_seed(seed, first + i));

        TensorF x = TensorF::matrix(b * tau, dim);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t k = 0; k < per; ++k) x[i * per + k] = static_cast<float>(streams[i].normal());

        std::vector<std::size_t> steps(b);
        for (std::size_t t = schedule.steps(); t-- > 0;) {
            std::fill(steps.begin(), steps.end(), t);
            const TensorF eps_hat = model.predict_noise(x, steps);
            TensorF z = TensorF::matrix(b * tau, dim);
            if (t > 0)
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t k = 0; k < per; ++k) z[i * per + k] = static_cast<float>(streams[i].normal());
            x = reverse_step(x, t, eps_hat, z, schedule);
            if (!x.all_finite()) throw SamplingError(t, "non-finite value during sampling at step " + std::to_string(t));
        }

        for (std::size_t i = 0; i < b; ++i) {
            TensorF v = TensorF::matrix(tau, dim);
            std::copy_n(x.data().data() + i * per, per, v.data().data());
            data::TimeSeries s(std::move(v), data::default_channel_names(dim));
            out.push_back(options.normalizer ? options.normalizer->invert(s) : std::move(s));
        }
    }
    return out;
}

} // namespace faultdiff::diffusion
