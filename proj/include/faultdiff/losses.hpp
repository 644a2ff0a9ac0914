#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "faultdiff/autograd.hpp"

namespace faultdiff::training {

/// How the pairwise-distance term enters the objective.
///   intent:  -mean(min(d, margin)); minimizing pushes predictions apart
///   literal: +mean(d), unclamped
///   off:     no diversity term
enum class DiversityMode { intent, literal, off };

std::string diversity_mode_name(DiversityMode mode);
DiversityMode parse_diversity_mode(const std::string& name);

struct LossConfig {
    double lambda = 0.1;
    double margin = 1.0;
    std::size_t pair_count = 16;
    DiversityMode mode = DiversityMode::intent;

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

/// Mean absolute error over every entry.
template <typename T> Var<T> base_loss(const Var<T>& eps, const Var<T>& eps_hat);

/// Distinct unordered index pairs (i < j) from a batch. All pairs, in
/// lexicographic order, when pair_count >= batch * (batch - 1) / 2;
/// otherwise a seeded sample without replacement.
std::vector<std::pair<std::size_t, std::size_t>> draw_pairs(std::size_t batch, std::size_t pair_count,
                                                            std::uint64_t seed);

/// preds: [batch*rows_per_sample x cols]. Per pair the squared distance is
/// divided by the entry count of one sample.
template <typename T>
Var<T> diversity_loss(const Var<T>& preds, std::size_t batch, std::size_t pair_count, double margin,
                      std::uint64_t seed, DiversityMode mode = DiversityMode::intent);

template <typename T>
struct LossParts {
    Var<T> total;
    Var<T> base;
    Var<T> diversity;  // invalid when not computed
};

/// base + lambda * diversity. With lambda = 0 or mode off, `total` is the
/// base-loss node itself.
template <typename T>
LossParts<T> total_loss(const Var<T>& eps, const Var<T>& preds, std::size_t batch, const LossConfig& cfg,
                        std::uint64_t seed);

} // namespace faultdiff::training
