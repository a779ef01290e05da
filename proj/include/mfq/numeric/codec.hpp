#pragma once

#include <vector>

#include "mfq/numeric/format.hpp"

namespace mfq::num {

/// True when the codeword decodes to zero under fmt's zero encoding.
bool is_zero_codeword(Codeword c, const MinifloatFormat& fmt);

/// (-1)^s * (1 + M_X / 2^m) * 2^(E_X - bias), or 0 for zero codewords. Exact.
double decode(Codeword c, const MinifloatFormat& fmt, int bias);

/// Inverse of decode on the value set. Zero maps to the all-zero codeword.
/// Throws NotRepresentable for values off the grid.
Codeword encode(double v, const MinifloatFormat& fmt, int bias);

/// All distinct decoded values in increasing order.
///
/// Cost is linear in the number of codewords; intended for narrow formats.
std::vector<double> enumerate_values(const MinifloatFormat& fmt, int bias);

}  // namespace mfq::num
