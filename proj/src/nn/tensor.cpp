#include "mfq/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "mfq/error.hpp"

namespace mfq::nn {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(values.begin(), values.end()) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("tensor data size " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::fabs(v));
  return m;
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace mfq::nn
