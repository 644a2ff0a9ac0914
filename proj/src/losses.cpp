#include "faultdiff/losses.hpp"

#include <cmath>
#include <numeric>

#include "faultdiff/ops.hpp"
#include "faultdiff/rng.hpp"

namespace faultdiff::training {

std::string diversity_mode_name(DiversityMode mode) {
    switch (mode) {
    case DiversityMode::intent: return "intent";
    case DiversityMode::literal: return "literal";
    case DiversityMode::off: return "off";
    }
    return "?";
}

DiversityMode parse_diversity_mode(const std::string& name) {
    if (name == "intent") return DiversityMode::intent;
    if (name == "literal") return DiversityMode::literal;
    if (name == "off") return DiversityMode::off;
    throw ContractError("unknown diversity mode '" + name + "' (expected intent, literal or off)");
}

void LossConfig::validate() const {
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw ContractError("loss: lambda must be finite and >= 0");
    if (!(margin > 0) || !std::isfinite(margin)) throw ContractError("loss: margin must be finite and > 0");
    if (pair_count == 0) throw ContractError("loss: pair_count must be positive");
}

template <typename T>
Var<T> base_loss(const Var<T>& eps, const Var<T>& eps_hat) {
    if (eps.shape() != eps_hat.shape())
        throw DimensionError("base_loss: shapes " + shape_str(eps.shape()) + " and " + shape_str(eps_hat.shape()) +
                             " differ");
    return ops::mean(ops::abs(ops::sub(eps_hat, eps)));
}

std::vector<std::pair<std::size_t, std::size_t>> draw_pairs(std::size_t batch, std::size_t pair_count,
                                                            std::uint64_t seed) {
    if (batch < 2) throw ContractError("diversity: batch must hold at least 2 samples");
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = i + 1; j < batch; ++j) all.emplace_back(i, j);
    if (pair_count >= all.size()) return all;
    Rng rng(seed);
    for (std::size_t k = 0; k < pair_count; ++k) std::swap(all[k], all[k + rng.below(all.size() - k)]);
    all.resize(pair_count);
    return all;
}

template <typename T>
Var<T> diversity_loss(const Var<T>& preds, std::size_t batch, std::size_t pair_count, double margin,
                      std::uint64_t seed, DiversityMode mode) {
    if (batch < 2) throw ContractError("diversity_loss: batch must hold at least 2 samples");
    if (preds.rows() % batch != 0) throw DimensionError("diversity_loss: rows not divisible by batch");
    if (mode == DiversityMode::off) return Var<T>::constant(Tensor<T>::scalar(T(0)));
    const std::size_t per = preds.rows() / batch;
    std::vector<Var<T>> samples;
    for (std::size_t b = 0; b < batch; ++b) samples.push_back(ops::slice_rows(preds, b * per, (b + 1) * per));

    const auto pairs = draw_pairs(batch, pair_count, seed);
    Var<T> acc;
    for (const auto& [i, j] : pairs) {
        Var<T> d = ops::mean(ops::square(ops::sub(samples[i], samples[j])));
        if (mode == DiversityMode::intent) d = ops::clamp_max(d, static_cast<T>(margin));
        acc = acc.valid() ? ops::add(acc, d) : d;
    }
    const T sign = mode == DiversityMode::intent ? T(-1) : T(1);
    return ops::scale(acc, sign / static_cast<T>(pairs.size()));
}

template <typename T>
LossParts<T> total_loss(const Var<T>& eps, const Var<T>& preds, std::size_t batch, const LossConfig& cfg,
                        std::uint64_t seed) {
    LossParts<T> parts;
    parts.base = base_loss(eps, preds);
    if (cfg.mode == DiversityMode::off || batch < 2) {
        parts.total = parts.base;
        return parts;
    }
    parts.diversity = diversity_loss(preds, batch, cfg.pair_count, cfg.margin, seed, cfg.mode);
    parts.total = cfg.lambda == 0.0
                      ? parts.base
                      : ops::add(parts.base, ops::scale(parts.diversity, static_cast<T>(cfg.lambda)));
    return parts;
}

#define FD_INSTANTIATE(T)                                                                                  \
    template Var<T> base_loss(const Var<T>&, const Var<T>&);                                               \
    template Var<T> diversity_loss(const Var<T>&, std::size_t, std::size_t, double, std::uint64_t,         \
                                   DiversityMode);                                                         \
    template LossParts<T> total_loss(const Var<T>&, const Var<T>&, std::size_t, const LossConfig&, std::uint64_t);

FD_INSTANTIATE(float)
FD_INSTANTIATE(double)

} // namespace faultdiff::training
