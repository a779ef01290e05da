#include "mfq/numeric/format.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <string>

#include "mfq/error.hpp"

namespace mfq::num {

void MinifloatFormat::validate() const {
  if (e < 1 || e > 8) throw InvalidArgument("exponent width must be in [1, 8], got " + std::to_string(e));
  if (m < 1 || m > 23) throw InvalidArgument("mantissa width must be in [1, 23], got " + std::to_string(m));
}

std::string MinifloatFormat::to_string() const {
  std::string s = "E" + std::to_string(e) + "M" + std::to_string(m);
  if (zero == ZeroEncoding::ZeroBinade) s += ":zb";
  return s;
}

namespace {

int parse_int(std::string_view digits, std::string_view whole) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty()) {
    throw FormatError("bad format string '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

MinifloatFormat MinifloatFormat::parse(std::string_view text) {
  std::string s;
  for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

  MinifloatFormat fmt;
  std::string_view body = s;
  if (auto colon = body.find(':'); colon != std::string_view::npos) {
    std::string_view suffix = body.substr(colon + 1);
    if (suffix == "zb") {
      fmt.zero = ZeroEncoding::ZeroBinade;
    } else if (suffix == "zp") {
      fmt.zero = ZeroEncoding::ZeroPoint;
    } else {
      throw FormatError("unknown zero-encoding suffix in '" + std::string(text) + "'");
    }
    body = body.substr(0, colon);
  }
  auto mpos = body.find('m');
  if (body.size() < 4 || body[0] != 'e' || mpos == std::string_view::npos) {
    throw FormatError("bad format string '" + std::string(text) + "'");
  }
  fmt.e = parse_int(body.substr(1, mpos - 1), text);
  fmt.m = parse_int(body.substr(mpos + 1), text);
  fmt.validate();
  return fmt;
}

CodewordFields unpack(Codeword c, const MinifloatFormat& fmt) {
  CodewordFields f;
  f.mantissa = c.bits & ((1u << fmt.m) - 1u);
  f.exponent = (c.bits >> fmt.m) & ((1u << fmt.e) - 1u);
  f.sign = ((c.bits >> (fmt.m + fmt.e)) & 1u) != 0;
  return f;
}

Codeword pack(const CodewordFields& f, const MinifloatFormat& fmt) {
  if (f.exponent > fmt.max_exponent_field() || f.mantissa >= fmt.mantissa_count()) {
    throw InvalidArgument("codeword field out of range for " + fmt.to_string());
  }
  std::uint32_t bits = (static_cast<std::uint32_t>(f.sign) << (fmt.e + fmt.m)) | (f.exponent << fmt.m) | f.mantissa;
  return Codeword{bits};
}

std::uint64_t codeword_count(const MinifloatFormat& fmt) { return std::uint64_t{1} << fmt.width(); }

QuantRange quant_range(const MinifloatFormat& fmt, int bias) {
  QuantRange r;
  const double top_significand = 2.0 - std::ldexp(1.0, -fmt.m);
  r.x_max = std::ldexp(top_significand, static_cast<int>(fmt.max_exponent_field()) - bias);
  if (fmt.zero == ZeroEncoding::ZeroPoint) {
    r.x_min = std::ldexp(1.0 + std::ldexp(1.0, -fmt.m), -bias);
  } else {
    r.x_min = std::ldexp(1.0, 1 - bias);
  }
  return r;
}

int integer_bias(double E0) {
  if (!std::isfinite(E0)) throw NonFinite("exponent bias is not finite");
  // Beyond this the power-of-two scales leave double range for every format.
  if (std::fabs(E0) > 4096.0) throw InvalidArgument("exponent bias out of range: " + std::to_string(E0));
  return static_cast<int>(std::ceil(E0));
}

}  // namespace mfq::num
