#include "mfq/numeric/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mfq/error.hpp"

namespace mfq::num {

namespace {

double quantize_in_range(double x, const MinifloatFormat& fmt, const QuantRange& r) {
  const double clamped = std::clamp(x, -r.x_max, r.x_max);
  if (clamped == 0.0) return 0.0;
  // Binade resolution 2^(floor(log2|x|) - m); ilogb is exact where log2 may not be.
  const int k = std::ilogb(clamped);
  const double steps = std::nearbyint(std::ldexp(clamped, fmt.m - k));
  const double q = std::ldexp(steps, k - fmt.m);
  if (std::fabs(q) < r.x_min) return 0.0;
  return q;
}

void check_finite(std::span<const double> x) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw NonFinite("non-finite input at element " + std::to_string(i), static_cast<long>(i));
    }
  }
}

// Smallest n with (2 - 2^-m) * 2^n >= max_abs.
int ceil_log2_ratio(double max_abs, int m) {
  const double top = 2.0 - std::ldexp(1.0, -m);
  int n = static_cast<int>(std::ceil(std::log2(max_abs / top)));
  while (std::ldexp(top, n) < max_abs) ++n;
  while (std::ldexp(top, n - 1) >= max_abs) --n;
  return n;
}

}  // namespace

double quantize_scalar(double x, const MinifloatFormat& fmt, int bias) {
  return quantize_in_range(x, fmt, quant_range(fmt, bias));
}

std::vector<double> quantize(std::span<const double> x, const MinifloatFormat& fmt, double E0) {
  std::vector<double> out(x.begin(), x.end());
  quantize_inplace(out, fmt, E0);
  return out;
}

void quantize_inplace(std::span<double> x, const MinifloatFormat& fmt, double E0) {
  check_finite(x);
  const QuantRange r = quant_range(fmt, integer_bias(E0));
  for (double& v : x) v = quantize_in_range(v, fmt, r);
}

double quantize_bias_grad(std::span<const double> g_up, std::span<const double> x,
                          const MinifloatFormat& fmt, double E0) {
  if (g_up.size() != x.size()) throw ShapeError("quantize_backward: gradient and input sizes differ");
  const double x_max = quant_range(fmt, integer_bias(E0)).x_max;
  const double dxmax = -std::numbers::ln2 * x_max;
  double g = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > x_max) {
      g += g_up[i] * dxmax;
    } else if (x[i] < -x_max) {
      g -= g_up[i] * dxmax;
    }
  }
  return g;
}

QuantizeGrad quantize_backward(std::span<const double> g_up, std::span<const double> x,
                               const MinifloatFormat& fmt, double E0, bool ste_clip_zero) {
  QuantizeGrad out;
  out.g_E0 = quantize_bias_grad(g_up, x, fmt, E0);
  out.g_x.assign(g_up.begin(), g_up.end());
  if (ste_clip_zero) {
    const double x_max = quant_range(fmt, integer_bias(E0)).x_max;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::fabs(x[i]) > x_max) out.g_x[i] = 0.0;
    }
  }
  return out;
}

double init_exponent_bias(double max_abs, const MinifloatFormat& fmt, BiasInit mode) {
  if (!std::isfinite(max_abs) || max_abs <= 0.0) {
    throw InvalidArgument("init_exponent_bias: max_abs must be positive and finite");
  }
  const int n = ceil_log2_ratio(max_abs, fmt.m);
  const int base = mode == BiasInit::Centered ? (1 << (fmt.e - 1)) : static_cast<int>(fmt.max_exponent_field());
  return static_cast<double>(base - n);
}

std::vector<double> fixed_point_quantize(std::span<const double> x, int bits, double max_abs) {
  if (bits < 2 || bits > 32) throw InvalidArgument("fixed_point_quantize: bits must be in [2, 32]");
  if (!std::isfinite(max_abs) || max_abs <= 0.0) {
    throw InvalidArgument("fixed_point_quantize: max_abs must be positive and finite");
  }
  check_finite(x);
  int k = std::ilogb(max_abs);
  if (std::ldexp(1.0, k) < max_abs) ++k;  // S = 2^ceil(log2 max_abs)
  const double step = std::ldexp(1.0, k - (bits - 1));
  const double lo = -std::ldexp(1.0, bits - 1);
  const double hi = std::ldexp(1.0, bits - 1) - 1.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double q = std::clamp(std::nearbyint(x[i] / step), lo, hi);
    out[i] = q * step + 0.0;  // +0.0 folds -0 into +0
  }
  return out;
}

}  // namespace mfq::num
