#include "mfq/hw/lut.hpp"

#include "mfq/error.hpp"

namespace mfq::hw {

int lut_cost(const num::MinifloatFormat& fmt) {
  for (const auto& row : kLutTable) {
    if (row.e == fmt.e && row.m == fmt.m) {
      return fmt.zero == num::ZeroEncoding::ZeroBinade ? row.zero_binade : row.zero_point;
    }
  }
  throw InvalidArgument("no LUT reference data for " + fmt.to_string());
}

}  // namespace mfq::hw
