#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace adt {

/// Row-major matrix shape. Vectors are represented as 1 x n.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "[" << rows << ", " << cols << "]";
    return os.str();
  }
};

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : std::invalid_argument(op + ": shape mismatch " + a.str() + " vs " + b.str()) {}
  using std::invalid_argument::invalid_argument;
};

/// Dense 2-D array. Value type; copies are deep.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : shape_{rows, cols}, data_(rows * cols, fill) {}
  explicit Tensor(Shape shape, Real fill = Real(0)) : Tensor(shape.rows, shape.cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<Real> data)
      : shape_{rows, cols}, data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * shape_.cols, shape_.cols}; }
  std::span<const Real> row(std::size_t r) const {
    return {data_.data() + r * shape_.cols, shape_.cols};
  }
  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  Real* ptr() { return data_.data(); }
  const Real* ptr() const { return data_.data(); }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_.rows, shape_.cols);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<Real> data_;
};

}  // namespace adt
