#include "bssd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bssd/error.hpp"

namespace bssd {

std::size_t volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (volume(shape_) != values_.size()) {
    throw ShapeError("tensor: shape " + to_string(shape_) + " does not hold " +
                     std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("tensor: ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(values));
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ShapeError("tensor: item() on shape " + to_string(shape_));
  }
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (volume(shape) != size()) {
    throw ShapeError("reshape: " + to_string(shape_) + " -> " + to_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

Tensor Tensor::row(std::size_t r) const {
  if (rank() == 0 || r >= shape_[0]) throw ShapeError("row: index out of range");
  const std::size_t n = row_size();
  Shape inner(shape_.begin() + 1, shape_.end());
  return Tensor(std::move(inner), std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(r * n),
                                                      values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * n)));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  if (rank() == 0) throw ShapeError("gather_rows: rank-0 tensor");
  const std::size_t n = row_size();
  Shape shape = shape_;
  shape[0] = indices.size();
  Tensor out(std::move(shape));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= shape_[0]) throw ShapeError("gather_rows: index out of range");
    std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(indices[i] * n), n,
                out.values_.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

void Tensor::set_row(std::size_t r, const Tensor& value) {
  const std::size_t n = row_size();
  if (rank() == 0 || r >= shape_[0] || value.size() != n) throw ShapeError("set_row: shape mismatch");
  std::copy(value.values_.begin(), value.values_.end(), values_.begin() + static_cast<std::ptrdiff_t>(r * n));
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) throw ShapeError("+=: " + to_string(shape_) + " vs " + to_string(other.shape_));
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (other.shape_ != shape_) throw ShapeError("-=: " + to_string(shape_) + " vs " + to_string(other.shape_));
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

Tensor& Tensor::operator*=(double factor) {
  for (double& v : values_) v *= factor;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double factor) { return a *= factor; }

double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no items");
  Shape shape = items.front().shape();
  shape.insert(shape.begin(), items.size());
  std::vector<double> values;
  values.reserve(volume(shape));
  for (const auto& t : items) {
    if (t.shape() != items.front().shape()) throw ShapeError("stack: mismatched item shapes");
    values.insert(values.end(), t.values().begin(), t.values().end());
  }
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace bssd
