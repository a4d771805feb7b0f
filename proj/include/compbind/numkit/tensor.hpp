#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace compbind {

// Row-major dynamic matrix used by every model. Templated on the scalar so the
// same code runs in float for training and double for gradient checks.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

// Dense float tensor with explicit dims. Construction checks that the payload
// matches the dims and that every entry is finite.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> dims, std::vector<float> data);

  static Tensor zeros(std::vector<std::size_t> dims);
  static Tensor scalar(float value);
  static Tensor from_matrix(const MatF& m);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  // Views a rank-1 or rank-2 tensor as a matrix (rank 1 becomes 1 x n).
  MatF to_matrix() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<float> data_;
};

std::size_t element_count(std::span<const std::size_t> dims);

template <typename To, typename From>
Mat<To> cast_mat(const Mat<From>& m) {
  return m.template cast<To>();
}

}  // namespace compbind
