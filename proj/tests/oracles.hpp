#pragma once

// Independent reference implementations used to freeze expected test values.
// These deliberately avoid the library's own code paths: alignment is redone
// in exact integer arithmetic on the bits of the input double, summations are
// plain loops, statistics are brute force.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace oracle {

// Exact round-half-even of x * 2^shift, computed on the integer significand
// of x.  No floating-point rounding anywhere: a double is sig * 2^e2 with
// sig < 2^53, so scaling by 2^shift is a pure bit shift of a dyadic rational.
inline std::int64_t scale_round_even(double x, int shift) {
  if (x == 0.0) return 0;
  const bool neg = x < 0;
  int e2 = 0;
  const double frac = std::frexp(std::fabs(x), &e2);
  const auto sig = static_cast<std::int64_t>(std::ldexp(frac, 53));  // exact, < 2^53
  const int net = e2 - 53 + shift;  // value = sig * 2^net
  std::int64_t mag;
  if (net >= 0) {
    if (net > 10) throw std::domain_error("oracle overflow");
    mag = sig << net;
  } else {
    const int down = -net;
    if (down >= 63) {
      mag = 0;
    } else {
      const std::int64_t floor_part = sig >> down;
      const std::int64_t rem = sig & ((std::int64_t{1} << down) - 1);
      const std::int64_t half = std::int64_t{1} << (down - 1);
      mag = floor_part;
      if (rem > half || (rem == half && (floor_part & 1))) mag += 1;
    }
  }
  return neg ? -mag : mag;
}

// Reference mantissa for aligning x against shared exponent s with F fraction
// bits and an M-bit magnitude clamp.
struct AlignRef {
  std::int64_t mantissa;
  bool saturated;
};

inline AlignRef align(double x, int shared_exp, int mantissa_bits) {
  const int fraction_bits = mantissa_bits - 1;
  const std::int64_t limit = (std::int64_t{1} << mantissa_bits) - 1;
  const std::int64_t m = scale_round_even(x, fraction_bits - shared_exp);
  if (m > limit) return {limit, true};
  if (m < -limit) return {-limit, true};
  return {m, false};
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

// Raw second moment, the right comparison point for zero-mean rounding error.
inline double second_moment(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s / static_cast<double>(v.size());
}

}  // namespace oracle
