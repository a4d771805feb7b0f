#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "compbind/errors.hpp"
#include "compbind/numkit/adam.hpp"
#include "compbind/numkit/ops.hpp"
#include "compbind/numkit/rng.hpp"
#include "compbind/numkit/tensor.hpp"

namespace compbind {

// ---------------------------------------------------------------- Tensor

std::size_t element_count(std::span<const std::size_t> dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> dims, std::vector<float> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  for (std::size_t d : dims_) {
    if (d == 0) throw ValidationError("tensor dims must be positive");
  }
  if (element_count(dims_) != data_.size()) {
    throw ValidationError("tensor payload size " + std::to_string(data_.size()) +
                          " does not match dims product " + std::to_string(element_count(dims_)));
  }
  for (float x : data_) {
    if (!std::isfinite(x)) throw ValidationError("tensor contains a non-finite entry");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> dims) {
  std::size_t n = element_count(dims);
  return Tensor(std::move(dims), std::vector<float>(n, 0.0f));
}

Tensor Tensor::scalar(float value) {
  Tensor t;
  t.data_ = {value};
  if (!std::isfinite(value)) throw ValidationError("tensor contains a non-finite entry");
  return t;
}

Tensor Tensor::from_matrix(const MatF& m) {
  std::vector<float> data(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::move(data));
}

MatF Tensor::to_matrix() const {
  if (rank() == 0 || rank() > 2) throw ValidationError("to_matrix needs a rank-1 or rank-2 tensor");
  const Eigen::Index rows = rank() == 1 ? 1 : static_cast<Eigen::Index>(dims_[0]);
  const Eigen::Index cols = static_cast<Eigen::Index>(dims_.back());
  MatF m(rows, cols);
  std::copy(data_.begin(), data_.end(), m.data());
  return m;
}

// ---------------------------------------------------------------- Rng

std::uint64_t Rng::mix(std::uint64_t x) {
  x = (x ^ (x >> 30)) * kMul1;
  x = (x ^ (x >> 27)) * kMul2;
  return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix(seed_ + counter_ * kGamma);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ValidationError("Rng::below needs n > 0");
  // Rejection keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::derive(std::uint64_t key) const { return Rng(mix(seed_ ^ mix(key + kGamma))); }

// ---------------------------------------------------------------- ops

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("softmax of an empty vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (std::isnan(x)) throw ValidationError("softmax input contains NaN");
    mx = std::max(mx, x);
  }
  if (!std::isfinite(mx)) throw ValidationError("softmax needs at least one finite logit");
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& fn,
                                     std::span<const double> point, double h) {
  if (!(h > 0.0)) throw ValidationError("finite_diff_grad needs h > 0");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + h;
    const double fp = fn(x);
    x[k] = orig - h;
    const double fm = fn(x);
    x[k] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw RuntimeFailure("finite_diff_grad: function returned a non-finite value");
    }
    grad[k] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

GaussianStats fit_gaussian(const MatD& samples) {
  if (samples.rows() < 2) throw ValidationError("fit_gaussian needs at least two samples");
  GaussianStats st;
  st.mean = samples.colwise().mean();
  MatD centered = samples.rowwise() - st.mean.row(0);
  st.cov = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  return st;
}

namespace {

MatD sym_sqrt(const MatD& m) {
  Eigen::SelfAdjointEigenSolver<MatD> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double sqrt_trace_of_product(const MatD& a, const MatD& b) {
  const MatD ra = sym_sqrt(a);
  const MatD inner = ra * b * ra;
  Eigen::SelfAdjointEigenSolver<MatD> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

}  // namespace

double frechet_gaussian_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows() ||
      a.cov.cols() != b.cov.cols() || a.cov.rows() != a.mean.size()) {
    throw ValidationError("frechet_gaussian_distance: dimension mismatch");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  // Tr((A B)^{1/2}) is symmetric in exact arithmetic; averaging both orders
  // makes it symmetric in floating point too.
  const double cross = 0.5 * (sqrt_trace_of_product(a.cov, b.cov) +
                              sqrt_trace_of_product(b.cov, a.cov));
  const double d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(d, 0.0);
}

// ---------------------------------------------------------------- Adam

template <typename S>
void adam_step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads,
               AdamState<S>& state, double lr) {
  if (params.size() != grads.size()) throw ValidationError("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const Mat<S>* p : params) {
      state.m.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      state.v.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw ValidationError("adam_step: state/params count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i]->rows() || params[i]->cols() != grads[i]->cols() ||
        state.m[i].rows() != params[i]->rows() || state.m[i].cols() != params[i]->cols()) {
      throw ValidationError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(c.beta1);
  const S b2 = static_cast<S>(c.beta2);
  const S step_size = static_cast<S>(lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = *grads[i];
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    auto denom = (v.cwiseSqrt() * inv_sqrt_bc2).array() + eps;
    params[i]->array() -= step_size * m.array() / denom;
  }
}

template void adam_step<float>(const std::vector<MatF*>&, const std::vector<const MatF*>&,
                               AdamState<float>&, double);
template void adam_step<double>(const std::vector<MatD*>&, const std::vector<const MatD*>&,
                                AdamState<double>&, double);

double multistep_lr(double base, std::int64_t step, const std::vector<std::int64_t>& milestones,
                    double factor) {
  double lr = base;
  for (std::int64_t m : milestones) {
    if (step >= m) lr *= factor;
  }
  return lr;
}

}  // namespace compbind
