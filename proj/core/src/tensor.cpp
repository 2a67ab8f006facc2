#include "hakw/tensor.hpp"

#include <cmath>

#include "hakw/error.hpp"

namespace hakw {

std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw Error(Errc::ShapeMismatch, std::to_string(data.size()) + " values for shape " + shape_string(shape));
  }
}

bool Tensor::all_finite() const noexcept {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_size(s) != data.size()) {
    throw Error(Errc::ShapeMismatch, "cannot reshape " + shape_string(shape) + " to " + shape_string(s));
  }
  return Tensor(std::move(s), data);
}

}  // namespace hakw
