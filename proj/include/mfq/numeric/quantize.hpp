#pragma once

#include <span>
#include <vector>

#include "mfq/numeric/format.hpp"

namespace mfq::num {

/// Quantizes one finite scalar onto the EeMm grid with integer bias E_B.
///
/// Clamp to [-x_max, x_max], round to nearest (ties to even) at the
/// resolution of the value's own binade, then flush anything whose rounded
/// magnitude is below x_min to zero. The flush is applied after rounding,
/// so inputs just under x_min can go to zero even when x_min is closer.
double quantize_scalar(double x, const MinifloatFormat& fmt, int bias);

/// Elementwise quantize with E_B = ceil(E0). Throws NonFinite with the
/// offending element index.
std::vector<double> quantize(std::span<const double> x, const MinifloatFormat& fmt, double E0);

/// In-place variant used by the training graph.
void quantize_inplace(std::span<double> x, const MinifloatFormat& fmt, double E0);

struct QuantizeGrad {
  std::vector<double> g_x;
  double g_E0 = 0.0;
};

/// Straight-through backward of quantize.
///
/// g_x = g_up everywhere, or zero outside [-x_max, x_max] when ste_clip_zero.
/// g_E0 collects only saturated elements: g_up * (-ln 2) * x_max * sign(x).
QuantizeGrad quantize_backward(std::span<const double> g_up, std::span<const double> x,
                               const MinifloatFormat& fmt, double E0, bool ste_clip_zero = false);

/// The E0 part of quantize_backward alone.
double quantize_bias_grad(std::span<const double> g_up, std::span<const double> x,
                          const MinifloatFormat& fmt, double E0);

enum class BiasInit {
  Centered,  ///< 2^(e-1) - ceil(log2(max / (2 - 2^-m)))
  TightFit,      ///< 2^e - 1 - ceil(log2(max / (2 - 2^-m))): smallest x_max >= max
};

/// Initial exponent bias from the largest magnitude observed in a tensor.
double init_exponent_bias(double max_abs, const MinifloatFormat& fmt, BiasInit mode);

/// Symmetric fixed-point baseline with power-of-two range 2^ceil(log2 max_abs).
std::vector<double> fixed_point_quantize(std::span<const double> x, int bits, double max_abs);

}  // namespace mfq::num
