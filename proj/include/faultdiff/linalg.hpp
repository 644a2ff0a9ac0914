#pragma once

#include <vector>

#include "faultdiff/tensor.hpp"

namespace faultdiff::linalg {

/// Eigen-decomposition of a symmetric matrix. `vectors` holds the
/// eigenvectors as columns, ordered to match `values` (descending).
struct SymEig {
    std::vector<double> values;
    TensorD vectors;
};

/// Cyclic Jacobi rotations. Requires a square matrix with n <= 256 that is
/// symmetric within `symmetry_tol` (relative to its largest entry).
SymEig sym_eig(const TensorD& a, double symmetry_tol = 1e-6);

/// V * diag(f(lambda)) * V^T for a symmetric matrix.
TensorD sym_apply(const SymEig& eig, double (*f)(double));

/// Plain (non-differentiable) dense helpers used by metrics.
TensorD matmul(const TensorD& a, const TensorD& b);
TensorD transpose(const TensorD& a);

/// Sample covariance (divisor n - 1) of the rows of `x` plus their mean.
struct Moments {
    std::vector<double> mean;
    TensorD cov;
};
Moments row_moments(const TensorD& x);

} // namespace faultdiff::linalg
