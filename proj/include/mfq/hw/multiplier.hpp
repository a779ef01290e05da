#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>

#include "mfq/numeric/format.hpp"

namespace mfq::hw {

/// Bit-level output of the minifloat multiplier.
///
/// mant_ext is a fixed-point significand with 2 integer bits and m+1
/// fractional bits, i.e. its real value is mant_ext / 2^(m+1) in [1, 4).
/// exp_ext is the raw sum of the biased exponent fields (e+1 bits); the
/// operand biases are removed downstream.
struct MulResult {
  bool sign = false;
  std::uint32_t exp_ext = 0;
  std::uint32_t mant_ext = 0;
  bool is_zero = false;

  friend constexpr bool operator==(const MulResult&, const MulResult&) = default;
};

bool zero_detect(num::Codeword c, const num::MinifloatFormat& fmt);

/// Golden model of the EeMm multiplier: exact significand product truncated
/// toward zero to m+1 fractional bits, no renormalization.
MulResult minifloat_mul_golden(num::Codeword a, num::Codeword b, const num::MinifloatFormat& fmt);

/// Real value of a MulResult when the operands carried biases bias_a, bias_b.
double mul_value(const MulResult& r, const num::MinifloatFormat& fmt, int bias_a, int bias_b);

enum class OverflowPolicy { Saturate, Error };

/// Two's-complement accumulator of a hybrid minifloat x minifloat -> fixed MAC.
struct MacConfig {
  int width = 32;
  int lsb_exponent = 0;  ///< value of one LSB is 2^lsb_exponent
  int bias_sum = 0;      ///< E_B of the x operand plus E_B of the w operand
  OverflowPolicy policy = OverflowPolicy::Saturate;

  /// Grid with LSB 2^-(bias_x + bias_w + m + 1), the coarsest that holds every product.
  static MacConfig for_format(const num::MinifloatFormat& fmt, int bias_x, int bias_w, int width = 32,
                              OverflowPolicy policy = OverflowPolicy::Saturate);

  void validate(const num::MinifloatFormat& fmt) const;
  std::int64_t max_value() const;
  std::int64_t min_value() const;
};

/// Signed accumulator integer whose value times 2^lsb_exponent equals the product.
/// Overflow past the W-bit range saturates or throws OverflowError (index -1).
std::int64_t to_fixed_point(const MulResult& r, const num::MinifloatFormat& fmt, const MacConfig& cfg);

/// Dot product through the golden multiplier and a W-bit integer accumulator.
/// OverflowError carries the index of the term that overflowed.
double hybrid_mac_dot(std::span<const num::Codeword> x, std::span<const num::Codeword> w,
                      const num::MinifloatFormat& fmt, const MacConfig& cfg);

struct MulVerifyReport {
  std::uint64_t pairs = 0;
  std::uint64_t exact = 0;
  double max_rel_error = 0.0;  ///< over nonzero results
  bool ok() const { return pairs == exact; }
};

/// Exhaustive check of every codeword pair against a rational reference
/// built from decode(). Requires width() <= 12.
MulVerifyReport verify_multiplier_exhaustive(const num::MinifloatFormat& fmt, int bias);

/// One line per pair: `a_bits b_bits sign exp_ext mant_ext is_zero`, hex.
void write_test_vectors(std::ostream& out, const num::MinifloatFormat& fmt);

}  // namespace mfq::hw
