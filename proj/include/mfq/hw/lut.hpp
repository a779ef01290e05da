#pragma once

#include <array>

#include "mfq/numeric/format.hpp"

namespace mfq::hw {

struct LutEntry {
  int e;
  int m;
  int zero_binade;  ///< zero encoded by E_X = 0
  int zero_point;   ///< zero encoded by E_X = 0 and M_X = 0
};

/// Synthesized LUT counts of the minifloat multiplier (Zynq UltraScale+ reference data).
inline constexpr std::array<LutEntry, 12> kLutTable{{
    {1, 1, 4, 4},  {1, 2, 4, 6},  {1, 3, 6, 8},
    {2, 1, 6, 7},  {2, 2, 6, 7},  {2, 3, 8, 9},
    {3, 1, 8, 7},  {3, 2, 8, 8},  {3, 3, 10, 11},
    {4, 1, 9, 9},  {4, 2, 9, 10}, {4, 3, 11, 13},
}};

/// Throws InvalidArgument for formats outside e in [1, 4], m in [1, 3].
int lut_cost(const num::MinifloatFormat& fmt);

}  // namespace mfq::hw
