#pragma once

// Piecewise lookup table with optimized breakpoints (OPP) and block-float
// entries.  Breakpoints are placed by a greedy scan: starting from a uniform
// index partition, each interior breakpoint in turn is moved to the candidate
// between its neighbours that minimizes the summed interpolation MAE of its
// two segments, after which the later breakpoints are redistributed uniformly
// over the remaining index range.  Ties keep the incumbent, so a target with
// constant segment error (linear, constant) returns the uniform partition.
//
// Entries are the target at each cell midpoint, encoded per interval against
// one shared exponent.  The interval pivot is the maximum entry exponent
// (bumped once if rounding overflows the magnitude field), so every stored
// entry decodes within half an ulp of its format; small entries may flush
// toward zero, which stays inside the same bound.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dbfp/format.hpp"

namespace dbfp {

enum class LutTarget : std::uint8_t { exp = 0 };

inline double eval_target(LutTarget t, double x) {
  switch (t) {
    case LutTarget::exp: return std::exp(x);
  }
  throw std::invalid_argument("eval_target: unknown target");
}

inline const char* to_string(LutTarget t) {
  switch (t) {
    case LutTarget::exp: return "exp";
  }
  return "?";
}

struct LutConfig {
  int table_size = 6;       // m breakpoints, m-1 intervals
  int index_bits = 7;       // k; 2^k entries total
  double domain_lo = -20.0;
  double domain_hi = 0.0;
  LutTarget target = LutTarget::exp;
  BfpConfig entry_format{};
  int build_grid_bits = 12;  // grid = midpoints of 2^bits uniform cells

  void validate() const {
    if (table_size < 2) throw std::invalid_argument("lut: table_size must be >= 2");
    if (index_bits < 0 || index_bits > 20)
      throw std::invalid_argument("lut: index_bits must be in [0, 20]");
    if (!(domain_lo < domain_hi)) throw std::invalid_argument("lut: empty domain");
    if ((std::size_t{1} << index_bits) < static_cast<std::size_t>(table_size - 1))
      throw std::invalid_argument("lut: fewer entries than intervals");
    if (build_grid_bits < 1 || build_grid_bits > 24)
      throw std::invalid_argument("lut: build_grid_bits must be in [1, 24]");
    if ((std::size_t{1} << build_grid_bits) < static_cast<std::size_t>(table_size))
      throw std::invalid_argument("lut: build grid smaller than table_size");
    entry_format.validate();
  }
};

// Strictly increasing breakpoints spanning the domain.
struct Partition {
  std::vector<double> points;

  void validate(double lo, double hi) const {
    if (points.size() < 2) throw std::invalid_argument("partition: need >= 2 points");
    if (points.front() != lo || points.back() != hi)
      throw std::invalid_argument("partition: must span the domain");
    for (std::size_t i = 1; i < points.size(); ++i)
      if (!(points[i - 1] < points[i]))
        throw std::invalid_argument("partition: points must strictly increase");
  }
};

namespace detail {

// Mean absolute error of linear interpolation between sample endpoints a and b,
// taken over every grid point in the closed index range [a, b].
inline double segment_mae(std::span<const double> xs, std::span<const double> fs,
                          std::size_t a, std::size_t b) {
  const double x0 = xs[a], x1 = xs[b];
  const double f0 = fs[a], f1 = fs[b];
  const double slope = (f1 - f0) / (x1 - x0);
  double acc = 0.0;
  for (std::size_t t = a; t <= b; ++t)
    acc += std::fabs(f0 + slope * (xs[t] - x0) - fs[t]);
  return acc / static_cast<double>(b - a + 1);
}

}  // namespace detail

// Greedy breakpoint optimization over sample indices; see file comment.
// Returns m strictly increasing indices into v with 0 and |v|-1 pinned.
template <typename F>
std::vector<std::size_t> select_best_opp_indices(F&& f, std::span<const double> v, int m) {
  if (m < 2) throw std::invalid_argument("select_best_opp: m must be >= 2");
  const std::size_t n = v.size();
  if (n < static_cast<std::size_t>(m))
    throw std::invalid_argument("select_best_opp: need at least m samples");
  for (std::size_t i = 1; i < n; ++i)
    if (!(v[i - 1] < v[i]))
      throw std::invalid_argument("select_best_opp: samples must strictly increase");

  std::vector<double> fs(n);
  for (std::size_t i = 0; i < n; ++i) fs[i] = f(v[i]);

  const std::size_t last = n - 1;
  const auto mm = static_cast<std::size_t>(m);
  std::vector<std::size_t> opp(mm);
  const std::size_t step = n / (mm - 1);
  for (std::size_t i = 0; i + 1 < mm; ++i) opp[i] = i * step;
  opp[mm - 1] = last;

  for (std::size_t i = 1; i + 1 < mm; ++i) {
    const std::size_t pre = opp[i - 1];
    const std::size_t next = opp[i + 1];
    // Leave room so later breakpoints can still be placed strictly increasing.
    const std::size_t hi = std::min(next - 1, last - (mm - 1 - i));
    std::size_t best_j = opp[i];
    double best_d = detail::segment_mae(v, fs, pre, best_j) +
                    detail::segment_mae(v, fs, best_j, next);
    for (std::size_t j = pre + 1; j <= hi; ++j) {
      if (j == opp[i]) continue;
      const double d = detail::segment_mae(v, fs, pre, j) +
                       detail::segment_mae(v, fs, j, next);
      if (d < best_d) {
        best_d = d;
        best_j = j;
      }
    }
    opp[i] = best_j;
    // Redistribute the remaining interior breakpoints uniformly.
    const std::size_t remaining = mm - 1 - i;
    const std::size_t span_step = (last - opp[i]) / remaining;
    for (std::size_t t = 1; t + i + 1 < mm; ++t) opp[i + t] = opp[i] + t * span_step;
  }
  return opp;
}

template <typename F>
std::vector<double> select_best_opp(F&& f, std::span<const double> v, int m) {
  const auto idx = select_best_opp_indices(f, v, m);
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

struct DhLut {
  struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    int shared_exponent = 0;
    std::size_t first_cell = 0;
    std::vector<std::int32_t> mantissas;

    double cell_width() const {
      return (hi - lo) / static_cast<double>(mantissas.size());
    }
  };

  LutConfig config;
  Partition partition;
  std::vector<Interval> intervals;
  double build_mae = 0.0;            // mean |decode - target| over the build grid
  double certified_max_error = 0.0;  // max |decode - target| bound for x <= domain_hi
  int current_exponent = 0;          // shared input exponent the loaded table serves
  int swap_latency = 4;              // cycles to reload on an exponent swap

  std::size_t cell_count() const { return std::size_t{1} << config.index_bits; }

  std::size_t interval_of_cell(std::size_t cell) const {
    std::size_t lo = 0, hi = intervals.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi + 1) / 2;
      if (intervals[mid].first_cell <= cell) lo = mid;
      else hi = mid - 1;
    }
    return lo;
  }

  // Clamp below/above the domain to the outermost cells; inside, binary-search
  // the interval then index the uniform cell directly.
  std::size_t lookup_cell(double x) const {
    if (!std::isfinite(x)) throw std::domain_error("lut_lookup: non-finite input");
    if (x < config.domain_lo) return 0;
    if (x >= config.domain_hi) return cell_count() - 1;
    const std::vector<double>& p = partition.points;
    const auto it = std::upper_bound(p.begin(), p.end(), x);
    const std::size_t j =
        std::min<std::size_t>(static_cast<std::size_t>(it - p.begin() - 1), intervals.size() - 1);
    const Interval& iv = intervals[j];
    auto cell = static_cast<std::size_t>((x - iv.lo) / iv.cell_width());
    cell = std::min(cell, iv.mantissas.size() - 1);
    return iv.first_cell + cell;
  }

  DbfpValue entry_value(std::size_t cell) const {
    const Interval& iv = intervals[interval_of_cell(cell)];
    return DbfpValue{iv.mantissas[cell - iv.first_cell],
                     iv.shared_exponent - config.entry_format.fraction_bits()};
  }

  DbfpValue lookup(double x) const { return entry_value(lookup_cell(x)); }

  // The adder-tree normalization exponent: the minimum interval exponent, so
  // every entry reaches it by an exact left shift into a wide accumulator and
  // summation loses nothing.
  int common_exponent() const {
    int s = intervals.front().shared_exponent;
    for (const Interval& iv : intervals) s = std::min(s, iv.shared_exponent);
    return s;
  }
};

inline std::vector<double> build_grid(const LutConfig& cfg) {
  const std::size_t n = std::size_t{1} << cfg.build_grid_bits;
  const double width = (cfg.domain_hi - cfg.domain_lo) / static_cast<double>(n);
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i)
    xs[i] = cfg.domain_lo + (static_cast<double>(i) + 0.5) * width;
  return xs;
}

inline DhLut build_dh_lut(const LutConfig& cfg) {
  cfg.validate();
  DhLut lut;
  lut.config = cfg;

  const std::vector<double> grid = build_grid(cfg);
  const auto target = [&](double x) { return eval_target(cfg.target, x); };
  const std::vector<std::size_t> opp = select_best_opp_indices(target, grid, cfg.table_size);

  lut.partition.points.resize(opp.size());
  lut.partition.points.front() = cfg.domain_lo;
  lut.partition.points.back() = cfg.domain_hi;
  for (std::size_t i = 1; i + 1 < opp.size(); ++i) lut.partition.points[i] = grid[opp[i]];
  lut.partition.validate(cfg.domain_lo, cfg.domain_hi);

  const std::size_t total = std::size_t{1} << cfg.index_bits;
  const std::size_t m1 = opp.size() - 1;  // interval count
  const std::size_t base = total / m1;
  const std::size_t rem = total % m1;

  std::size_t first_cell = 0;
  for (std::size_t j = 0; j < m1; ++j) {
    DhLut::Interval iv;
    iv.lo = lut.partition.points[j];
    iv.hi = lut.partition.points[j + 1];
    iv.first_cell = first_cell;
    const std::size_t cells = base + (j < rem ? 1 : 0);

    std::vector<double> values(cells);
    const double width = (iv.hi - iv.lo) / static_cast<double>(cells);
    for (std::size_t c = 0; c < cells; ++c)
      values[c] = target(iv.lo + (static_cast<double>(c) + 0.5) * width);

    int pivot = cfg.entry_format.min_exponent();
    bool any_nonzero = false;
    for (double vv : values) {
      const FloatComponents fc = decompose(vv);
      if (!fc.is_zero) {
        pivot = any_nonzero ? std::max(pivot, fc.exponent) : fc.exponent;
        any_nonzero = true;
      }
    }
    BfpConfig ecfg = cfg.entry_format;
    ecfg.pivot_policy = PivotPolicy::given;
    auto encode_at = [&](int s) {
      s = std::clamp(s, ecfg.min_exponent(), ecfg.max_exponent());
      return std::pair<int, BfpBlock>(s, encode_block(values, ecfg, s));
    };
    auto [s, block] = encode_at(any_nonzero ? pivot : ecfg.min_exponent());
    if (block.saturation_count > 0) {
      // Rounding overflowed the magnitude field at the top entry; one bump
      // restores headroom for the whole interval.
      std::tie(s, block) = encode_at(s + 1);
    }
    iv.shared_exponent = s;
    iv.mantissas = std::move(block.mantissas);

    lut.intervals.push_back(std::move(iv));
    first_cell += cells;
  }

  // Error accounting: mean over the build grid plus a per-cell endpoint bound
  // (valid for monotone targets) extended across the left clamp region.
  double acc = 0.0;
  for (double x : grid) acc += std::fabs(lut.lookup(x).decode() - target(x));
  lut.build_mae = acc / static_cast<double>(grid.size());

  double cert = 0.0;
  for (const DhLut::Interval& iv : lut.intervals) {
    const double width = iv.cell_width();
    for (std::size_t c = 0; c < iv.mantissas.size(); ++c) {
      const double dec = DbfpValue{iv.mantissas[c],
                                   iv.shared_exponent - cfg.entry_format.fraction_bits()}
                             .decode();
      const double lo_err = std::fabs(target(iv.lo + width * static_cast<double>(c)) - dec);
      const double hi_err =
          std::fabs(target(iv.lo + width * static_cast<double>(c + 1)) - dec);
      cert = std::max(cert, std::max(lo_err, hi_err));
    }
  }
  const double first_dec = lut.entry_value(0).decode();
  // exp decays to 0 leftward of the domain, so the clamp error is bounded by
  // the first entry against [0, target(lo)].
  cert = std::max(cert, std::fabs(first_dec));
  cert = std::max(cert, std::fabs(target(cfg.domain_lo) - first_dec));
  lut.certified_max_error = cert;
  return lut;
}

inline double lut_mae(const DhLut& lut, std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("lut_mae: empty sample");
  double acc = 0.0;
  for (double x : xs)
    acc += std::fabs(lut.lookup(x).decode() - eval_target(lut.config.target, x));
  return acc / static_cast<double>(xs.size());
}

}  // namespace dbfp
