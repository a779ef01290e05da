#include "mfq/hw/multiplier.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "mfq/error.hpp"
#include "mfq/numeric/codec.hpp"

namespace mfq::hw {

using num::Codeword;
using num::MinifloatFormat;
using num::ZeroEncoding;

bool zero_detect(Codeword c, const MinifloatFormat& fmt) {
  const auto f = num::unpack(c, fmt);
  if (fmt.zero == ZeroEncoding::ZeroBinade) return f.exponent == 0;
  return f.exponent == 0 && f.mantissa == 0;
}

MulResult minifloat_mul_golden(Codeword a, Codeword b, const MinifloatFormat& fmt) {
  MulResult r;
  r.is_zero = zero_detect(a, fmt) || zero_detect(b, fmt);
  if (r.is_zero) return r;
  const auto fa = num::unpack(a, fmt);
  const auto fb = num::unpack(b, fmt);
  r.sign = fa.sign != fb.sign;
  r.exp_ext = fa.exponent + fb.exponent;
  // 2m fractional bits in, m+1 out.
  const std::uint64_t product =
      std::uint64_t{fmt.mantissa_count() + fa.mantissa} * std::uint64_t{fmt.mantissa_count() + fb.mantissa};
  r.mant_ext = static_cast<std::uint32_t>(product >> (fmt.m - 1));
  return r;
}

double mul_value(const MulResult& r, const MinifloatFormat& fmt, int bias_a, int bias_b) {
  if (r.is_zero) return 0.0;
  const double mag = std::ldexp(static_cast<double>(r.mant_ext),
                                static_cast<int>(r.exp_ext) - bias_a - bias_b - (fmt.m + 1));
  return r.sign ? -mag : mag;
}

MacConfig MacConfig::for_format(const MinifloatFormat& fmt, int bias_x, int bias_w, int width,
                                OverflowPolicy policy) {
  MacConfig cfg;
  cfg.width = width;
  cfg.bias_sum = bias_x + bias_w;
  cfg.lsb_exponent = -(bias_x + bias_w + fmt.m + 1);
  cfg.policy = policy;
  cfg.validate(fmt);
  return cfg;
}

void MacConfig::validate(const MinifloatFormat& fmt) const {
  if (width < fmt.m + 3 || width > 64) {
    throw InvalidArgument("accumulator width must be in [m+3, 64], got " + std::to_string(width));
  }
  if (lsb_exponent > -(bias_sum + fmt.m + 1)) {
    throw InvalidArgument("accumulator LSB is too coarse for the product grid");
  }
}

std::int64_t MacConfig::max_value() const {
  return width == 64 ? INT64_MAX : (std::int64_t{1} << (width - 1)) - 1;
}

std::int64_t MacConfig::min_value() const { return width == 64 ? INT64_MIN : -(std::int64_t{1} << (width - 1)); }

namespace {

// Returns false when |value| does not fit in the accumulator.
bool product_to_int(const MulResult& r, const MinifloatFormat& fmt, const MacConfig& cfg, std::int64_t& out) {
  out = 0;
  if (r.is_zero) return true;
  // value = mant_ext * 2^(exp_ext - bias_sum - (m+1)) = mant_ext * 2^shift * 2^lsb_exponent
  const long shift = static_cast<long>(r.exp_ext) - cfg.bias_sum - (fmt.m + 1) - cfg.lsb_exponent;
  const std::uint64_t limit = static_cast<std::uint64_t>(cfg.max_value()) + (r.sign ? 1u : 0u);
  if (shift >= 64) return false;
  const std::uint64_t mant = r.mant_ext;
  if (mant > (limit >> shift)) return false;
  const std::uint64_t mag = mant << shift;
  out = r.sign ? static_cast<std::int64_t>(0 - mag) : static_cast<std::int64_t>(mag);
  return true;
}

}  // namespace

std::int64_t to_fixed_point(const MulResult& r, const MinifloatFormat& fmt, const MacConfig& cfg) {
  std::int64_t v = 0;
  if (!product_to_int(r, fmt, cfg, v)) {
    if (cfg.policy == OverflowPolicy::Error) throw OverflowError("product exceeds accumulator range", -1);
    return r.sign ? cfg.min_value() : cfg.max_value();
  }
  return v;
}

double hybrid_mac_dot(std::span<const Codeword> x, std::span<const Codeword> w, const MinifloatFormat& fmt,
                      const MacConfig& cfg) {
  if (x.size() != w.size()) throw ShapeError("hybrid_mac_dot: operand lengths differ");
  cfg.validate(fmt);
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const MulResult r = minifloat_mul_golden(x[i], w[i], fmt);
    std::int64_t term = 0;
    const bool fits = product_to_int(r, fmt, cfg, term);
    std::int64_t next = 0;
    const bool overflow = !fits || __builtin_add_overflow(acc, term, &next) || next > cfg.max_value() ||
                          next < cfg.min_value();
    if (overflow) {
      if (cfg.policy == OverflowPolicy::Error) {
        throw OverflowError("accumulator overflow at term " + std::to_string(i), static_cast<long>(i));
      }
      acc = r.sign ? cfg.min_value() : cfg.max_value();
    } else {
      acc = next;
    }
  }
  return std::ldexp(static_cast<double>(acc), cfg.lsb_exponent);
}

MulVerifyReport verify_multiplier_exhaustive(const MinifloatFormat& fmt, int bias) {
  fmt.validate();
  if (fmt.width() > 12) throw InvalidArgument("exhaustive multiplier check limited to 12-bit formats");
  MulVerifyReport rep;
  const auto n = static_cast<std::uint32_t>(num::codeword_count(fmt));
  for (std::uint32_t a = 0; a < n; ++a) {
    for (std::uint32_t b = 0; b < n; ++b) {
      ++rep.pairs;
      const Codeword ca{a}, cb{b};
      const double va = num::decode(ca, fmt, bias);
      const double vb = num::decode(cb, fmt, bias);
      const MulResult r = minifloat_mul_golden(ca, cb, fmt);
      const double got = mul_value(r, fmt, bias, bias);
      double want = 0.0;
      if (va != 0.0 && vb != 0.0) {
        const double exact = va * vb;  // exact: at most 2m+2 significant bits
        const int scale = static_cast<int>(num::unpack(ca, fmt).exponent + num::unpack(cb, fmt).exponent) - 2 * bias;
        const double ulp = std::ldexp(1.0, scale - (fmt.m + 1));
        want = std::copysign(std::floor(std::fabs(exact) / ulp) * ulp, exact);
        rep.max_rel_error = std::max(rep.max_rel_error, std::fabs(got - exact) / std::fabs(exact));
      }
      if (got == want && r.is_zero == (va == 0.0 || vb == 0.0)) ++rep.exact;
    }
  }
  return rep;
}

void write_test_vectors(std::ostream& out, const MinifloatFormat& fmt) {
  const auto n = static_cast<std::uint32_t>(num::codeword_count(fmt));
  char line[96];
  for (std::uint32_t a = 0; a < n; ++a) {
    for (std::uint32_t b = 0; b < n; ++b) {
      const MulResult r = minifloat_mul_golden(Codeword{a}, Codeword{b}, fmt);
      std::snprintf(line, sizeof line, "%x %x %x %x %x %x\n", a, b, unsigned{r.sign}, r.exp_ext, r.mant_ext,
                    unsigned{r.is_zero});
      out << line;
    }
  }
}

}  // namespace mfq::hw
