#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace hakw {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

// Row-major dense array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const noexcept { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const noexcept { return shape.size(); }
  double* ptr() noexcept { return data.data(); }
  const double* ptr() const noexcept { return data.data(); }

  void zero() { std::fill(data.begin(), data.end(), 0.0); }
  bool all_finite() const noexcept;
  Tensor reshaped(Shape s) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace hakw
