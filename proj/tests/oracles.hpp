// Independent reference implementations used only by tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "mfq/numeric/format.hpp"

namespace mfq::oracle {

inline double pow2(int k) {
  double p = 1.0;
  for (int i = 0; i < k; ++i) p *= 2.0;
  for (int i = 0; i > k; --i) p /= 2.0;
  return p;
}

inline double x_max(int e, int m, int bias) { return pow2((1 << e) - 1 - bias) * (2.0 - pow2(-m)); }

inline double x_min(int e, int m, num::ZeroEncoding z, int bias) {
  (void)e;
  return z == num::ZeroEncoding::ZeroPoint ? pow2(-bias) * (1.0 + pow2(-m)) : pow2(1 - bias);
}

/// Clamp, round within the binade with ties-to-even, flush below x_min.
/// Binade located by repeated doubling; candidates scanned linearly.
inline double quantize(double x, int e, int m, num::ZeroEncoding z, int bias) {
  const double hi_lim = x_max(e, m, bias);
  double a = x < 0 ? -x : x;
  const bool neg = x < 0;
  if (a > hi_lim) a = hi_lim;
  if (a == 0.0) return 0.0;
  double p = 1.0;
  while (p > a) p /= 2.0;
  while (p * 2.0 <= a) p *= 2.0;
  const long steps = 1L << m;
  const double ulp = p / static_cast<double>(steps);
  long j = steps;
  while (j + 1 <= 2 * steps && ulp * static_cast<double>(j + 1) <= a) ++j;
  const double lo = ulp * static_cast<double>(j);
  double r = lo;
  if (lo != a) {
    const double hi = ulp * static_cast<double>(j + 1);
    const double dlo = a - lo;
    const double dhi = hi - a;
    if (dhi < dlo || (dhi == dlo && (j + 1) % 2 == 0)) r = hi;
  }
  if (r < x_min(e, m, z, bias)) return 0.0;
  return neg ? -r : r;
}

/// Exact value of a codeword by direct formula evaluation with pow2.
inline double decode(std::uint32_t bits, int e, int m, num::ZeroEncoding z, int bias) {
  const std::uint32_t mant = bits % (1u << m);
  const std::uint32_t ex = (bits >> m) % (1u << e);
  const bool sign = (bits >> (e + m)) & 1u;
  if (ex == 0 && (z == num::ZeroEncoding::ZeroBinade || mant == 0)) return 0.0;
  const double v = (1.0 + mant * pow2(-m)) * pow2(static_cast<int>(ex) - bias);
  return sign ? -v : v;
}

// Truncated product from decoded operand values: significands in [1, 2),
// product cut toward zero on the 2^-(m+1) grid, then rescaled.
inline double truncated_product(std::uint32_t a, std::uint32_t b, int e, int m, num::ZeroEncoding z, int bias) {
  const double va = decode(a, e, m, z, bias);
  const double vb = decode(b, e, m, z, bias);
  if (va == 0.0 || vb == 0.0) return 0.0;
  const int ea = static_cast<int>((a >> m) % (1u << e));
  const int eb = static_cast<int>((b >> m) % (1u << e));
  const double sa = std::fabs(va) / pow2(ea - bias);
  const double sb = std::fabs(vb) / pow2(eb - bias);
  const double grid = pow2(m + 1);
  const double t = std::floor(sa * sb * grid) / grid;
  const double v = t * pow2(ea + eb - 2 * bias);
  return (va < 0) != (vb < 0) ? -v : v;
}

/// Central finite difference of a scalar function along one coordinate.
inline double central_diff(const std::function<double()>& f, double& coord, double h) {
  const double saved = coord;
  coord = saved + h;
  const double fp = f();
  coord = saved - h;
  const double fm = f();
  coord = saved;
  return (fp - fm) / (2.0 * h);
}

}  // namespace mfq::oracle
