#include "mfq/numeric/codec.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mfq/error.hpp"

namespace mfq::num {

bool is_zero_codeword(Codeword c, const MinifloatFormat& fmt) {
  const auto f = unpack(c, fmt);
  if (fmt.zero == ZeroEncoding::ZeroBinade) return f.exponent == 0;
  return f.exponent == 0 && f.mantissa == 0;
}

double decode(Codeword c, const MinifloatFormat& fmt, int bias) {
  if (is_zero_codeword(c, fmt)) return 0.0;
  const auto f = unpack(c, fmt);
  const double significand = static_cast<double>(fmt.mantissa_count() + f.mantissa);
  const double mag = std::ldexp(significand, static_cast<int>(f.exponent) - bias - fmt.m);
  return f.sign ? -mag : mag;
}

Codeword encode(double v, const MinifloatFormat& fmt, int bias) {
  if (v == 0.0) return Codeword{0};
  auto fail = [&] {
    std::ostringstream os;
    os.precision(17);
    os << v << " is not representable in " << fmt.to_string() << " with bias " << bias;
    return NotRepresentable(os.str());
  };
  if (!std::isfinite(v)) throw fail();

  const double mag = std::fabs(v);
  const int k = std::ilogb(mag);
  const long exponent = static_cast<long>(k) + bias;
  if (exponent < 0 || exponent > static_cast<long>(fmt.max_exponent_field())) throw fail();

  const double scaled = std::ldexp(mag, fmt.m - k);  // in [2^m, 2^(m+1))
  if (scaled != std::floor(scaled)) throw fail();
  CodewordFields f;
  f.sign = v < 0.0;
  f.exponent = static_cast<std::uint32_t>(exponent);
  f.mantissa = static_cast<std::uint32_t>(scaled) - fmt.mantissa_count();
  const Codeword c = pack(f, fmt);
  if (is_zero_codeword(c, fmt)) throw fail();
  return c;
}

std::vector<double> enumerate_values(const MinifloatFormat& fmt, int bias) {
  fmt.validate();
  std::vector<double> positives;
  positives.reserve(static_cast<std::size_t>(codeword_count(fmt) / 2));
  for (std::uint32_t bits = 0; bits < codeword_count(fmt) / 2; ++bits) {
    const Codeword c{bits};
    if (!is_zero_codeword(c, fmt)) positives.push_back(decode(c, fmt, bias));
  }
  // Positive codewords are already ordered by value.
  std::vector<double> out;
  out.reserve(2 * positives.size() + 1);
  for (auto it = positives.rbegin(); it != positives.rend(); ++it) out.push_back(-*it);
  out.push_back(0.0);
  out.insert(out.end(), positives.begin(), positives.end());
  return out;
}

}  // namespace mfq::num
