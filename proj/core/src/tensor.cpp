// SPDX-License-Identifier: Apache-2.0

#include "propnet/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace propnet {

const char* to_string(Precision p) {
  return p == Precision::kSingle ? "single" : "double";
}

Precision parse_precision(const std::string& s) {
  if (s == "single" || s == "float" || s == "f32") return Precision::kSingle;
  if (s == "double" || s == "f64") return Precision::kDouble;
  throw ConfigError("unknown precision '" + s + "' (expected single or double)");
}

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() const {
  if (dims_.empty() || dims_.size() > kMaxRank) {
    throw ShapeError("tensor rank must be in [1, 4], got " + std::to_string(dims_.size()));
  }
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("zero extent in shape " + str());
  }
}

std::size_t Shape::numel() const {
  if (dims_.empty()) return 0;
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("buffer of " + std::to_string(data_.size()) + " elements does not match shape " +
                     shape_.str());
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace propnet
