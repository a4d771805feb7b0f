#pragma once

#include <functional>
#include <span>
#include <vector>

#include "compbind/numkit/tensor.hpp"

namespace compbind {

// Numerically stable softmax. Rejects NaN entries; -inf-like large negative
// logits are allowed and produce (near) zero probability.
std::vector<double> softmax(std::span<const double> logits);

double l2_norm(std::span<const double> v);

// Central differences, one coordinate at a time:
//   g_k = (f(x + h e_k) - f(x - h e_k)) / (2h)
// Throws ValidationError for h <= 0 and RuntimeFailure if f is non-finite.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                                     std::span<const double> point, double h);

struct GaussianStats {
  MatD mean;  // 1 x k
  MatD cov;   // k x k
};

// Row-wise samples (n x k) -> mean and unbiased covariance (n - 1 denominator).
GaussianStats fit_gaussian(const MatD& samples);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
// The cross term is computed as Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}) with
// symmetric eigendecompositions; negative eigenvalues are clamped to zero.
double frechet_gaussian_distance(const GaussianStats& a, const GaussianStats& b);

}  // namespace compbind
