#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mfq::num {

/// Which codewords decode to zero.
enum class ZeroEncoding {
  ZeroPoint,   ///< only E_X = 0 and M_X = 0
  ZeroBinade,  ///< every codeword with E_X = 0
};

/// Sign / exponent / mantissa layout of an EeMm minifloat.
///
/// There are no infinities, NaNs, or subnormals. The sign bit is always
/// present, so the codeword width is 1 + e + m.
struct MinifloatFormat {
  int e = 3;
  int m = 2;
  ZeroEncoding zero = ZeroEncoding::ZeroPoint;

  constexpr int width() const noexcept { return 1 + e + m; }
  constexpr std::uint32_t max_exponent_field() const noexcept { return (1u << e) - 1u; }
  constexpr std::uint32_t mantissa_count() const noexcept { return 1u << m; }

  /// Throws InvalidArgument unless 1 <= e <= 8, 1 <= m <= 23.
  void validate() const;

  /// "E3M2" or "E3M2:zb".
  std::string to_string() const;

  /// Parses "E<e>M<m>" (case-insensitive) with optional ":zb" / ":zp" suffix.
  static MinifloatFormat parse(std::string_view text);

  friend constexpr bool operator==(const MinifloatFormat&, const MinifloatFormat&) = default;
};

/// The IEEE-style bias 2^(e-1) - 1.
constexpr int ieee_bias(const MinifloatFormat& fmt) noexcept { return (1 << (fmt.e - 1)) - 1; }

/// Packed sign | exponent | mantissa, mantissa in the LSBs.
struct Codeword {
  std::uint32_t bits = 0;
  friend constexpr bool operator==(Codeword, Codeword) = default;
};

struct CodewordFields {
  bool sign = false;
  std::uint32_t exponent = 0;
  std::uint32_t mantissa = 0;
};

CodewordFields unpack(Codeword c, const MinifloatFormat& fmt);
Codeword pack(const CodewordFields& f, const MinifloatFormat& fmt);

/// Total number of codewords, 2^(1+e+m).
std::uint64_t codeword_count(const MinifloatFormat& fmt);

/// Smallest positive and largest representable magnitudes at integer bias E_B.
struct QuantRange {
  double x_min = 0.0;
  double x_max = 0.0;
};

QuantRange quant_range(const MinifloatFormat& fmt, int bias);

/// Integer bias ceil(E0). Throws NonFinite / InvalidArgument on absurd E0.
int integer_bias(double E0);

/// Learned (or fixed) exponent bias of one tensor role.
///
/// E0 is stored as a real; the integer bias is derived on every read.
struct QuantizerState {
  double E0 = 0.0;
  bool learnable = true;
  MinifloatFormat format{};

  int bias() const { return integer_bias(E0); }
  QuantRange range() const { return quant_range(format, bias()); }
};

}  // namespace mfq::num
