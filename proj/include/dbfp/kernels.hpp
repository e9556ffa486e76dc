#pragma once

// Integer-path compute kernels over block-float operands: reciprocal-multiply
// division, the table-driven softmax pipeline, exponent-bucketed matrix
// multiply, constant scaling, and the fused attention forward pass.
//
// Everything between a tensor's encode and the final decode runs on
// (mantissa, exponent) pairs; doubles appear only as exact carriers of
// dyadic values (|mantissa| < 2^53 throughout, so ldexp round-trips are
// lossless).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dbfp/dh_lut.hpp"
#include "dbfp/format.hpp"
#include "dbfp/grouping.hpp"

namespace dbfp {

// ---------------------------------------------------------------------------
// reciprocal-multiply divider

struct DividerConfig {
  int index_bits = 10;        // t: table addressed by the top t fraction bits
  int out_fraction_bits = 12; // quotient mantissa granularity

  void validate() const {
    if (index_bits < 1 || index_bits > 15)
      throw std::invalid_argument("divider: index_bits must be in [1, 15]");
    if (out_fraction_bits < 1 || out_fraction_bits > 40)
      throw std::invalid_argument("divider: out_fraction_bits must be in [1, 40]");
  }
};

// 1/|den| ~= r * 2^-shift (sign applied separately).
struct Reciprocal {
  std::int32_t r = 0;
  int shift = 0;
  int sign = 1;
};

struct Divider {
  DividerConfig config;
  std::vector<std::int32_t> table;  // indexed by truncated fraction bits j

  static Divider make(DividerConfig cfg = {}) {
    cfg.validate();
    Divider d;
    d.config = cfg;
    const int t = cfg.index_bits;
    const std::size_t n = std::size_t{1} << t;
    d.table.resize(n);
    // Entries target the cell midpoint 1 + (j+0.5)*2^-t, which halves the
    // worst-case error of truncation indexing.  j = 0 lands on 2^t exactly,
    // so division by a power of two is exact.
    for (std::size_t j = 0; j < n; ++j) {
      const double ideal =
          std::ldexp(1.0, 2 * t) / (std::ldexp(1.0, t) + static_cast<double>(j) + 0.5);
      d.table[j] = static_cast<std::int32_t>(round_half_even(ideal));
    }
    return d;
  }

  Reciprocal prepare(std::int64_t den) const {
    if (den == 0) throw std::domain_error("divider: division by zero");
    Reciprocal rec;
    rec.sign = den < 0 ? -1 : 1;
    const auto mag = static_cast<std::uint64_t>(den < 0 ? -den : den);
    const int t = config.index_bits;
    const int l = std::bit_width(mag) - 1;  // mag = 2^l * (1 + f), f in [0, 1)
    std::uint64_t j;
    if (l >= t) j = (mag >> (l - t)) - (std::uint64_t{1} << t);
    else j = (mag << (t - l)) - (std::uint64_t{1} << t);
    rec.r = table[j];
    rec.shift = t + l;
    return rec;
  }

  // num * 2^num_exp / (den * 2^den_exp) with the quotient mantissa rounded to
  // out_fraction_bits fraction bits.
  DbfpValue apply(std::int64_t num, int num_exp, int den_exp, const Reciprocal& rec) const {
    const int sign = (num < 0 ? -1 : 1) * rec.sign;
    const std::int64_t mag = num < 0 ? -num : num;
    if (mag > (std::int64_t{1} << 48))
      throw std::overflow_error("divider: numerator too wide");
    const std::int64_t prod = mag * rec.r;
    const int drop = rec.shift - config.out_fraction_bits;
    std::int64_t m;
    if (drop >= 0) {
      m = shift_right_nearest_even(prod, drop);
    } else {
      if (prod > (std::int64_t{1} << (62 + drop)))
        throw std::overflow_error("divider: quotient too wide");
      m = prod << -drop;
    }
    return DbfpValue{sign * m, num_exp - den_exp - config.out_fraction_bits};
  }

  DbfpValue divide(DbfpValue num, DbfpValue den) const {
    return apply(num.mantissa, num.exp2, den.exp2, prepare(den.mantissa));
  }
};

// ---------------------------------------------------------------------------
// histogram-weighted entry summation

// Moves a mantissa from exponent `from` to exponent `to`: exact left shift
// when the target is finer, nearest-even right shift when coarser.
inline std::int64_t renormalize_mantissa(std::int64_t m, int from, int to) {
  const int delta = from - to;
  if (delta <= 0) return shift_right_nearest_even(m, -delta);
  const std::int64_t mag = m < 0 ? -m : m;
  if (delta >= 62 || mag >= (std::int64_t{1} << (62 - delta)))
    throw std::overflow_error("renormalize_mantissa: shift overflows");
  return m << delta;
}

// Sum of table entries for the given cell hits, carried at the table-wide
// common exponent.  Equals the per-element shifted sum exactly (integer
// addition is associative), so repeated cells can be folded through their
// counts.
inline std::pair<std::int64_t, int> histogram_sum(std::span<const std::size_t> cells,
                                                  const DhLut& lut) {
  std::vector<std::int64_t> hist(lut.cell_count(), 0);
  for (std::size_t c : cells) {
    if (c >= lut.cell_count()) throw std::out_of_range("histogram_sum: cell out of range");
    ++hist[c];
  }
  const int s = lut.common_exponent();
  std::int64_t acc = 0;
  for (std::size_t c = 0; c < hist.size(); ++c) {
    if (hist[c] == 0) continue;
    const auto& iv = lut.intervals[lut.interval_of_cell(c)];
    const std::int64_t shifted =
        renormalize_mantissa(iv.mantissas[c - iv.first_cell], iv.shared_exponent, s);
    acc += hist[c] * shifted;
  }
  return {acc, s};
}

// ---------------------------------------------------------------------------
// softmax

struct SoftmaxConfig {
  BfpConfig value_format{};    // alignment format for the shifted inputs
  GroupingConfig grouping{};   // exponent grouping of the shifted inputs
  bool use_grouping = true;    // false: single shared exponent per row
  PivotPolicy ungrouped_pivot = PivotPolicy::max;
  DividerConfig divider{};
};

struct SoftmaxOutput {
  // Exact numerator/denominator ratios; sums to 1 up to double rounding.
  std::vector<double> probabilities;
  // Reciprocal-multiply quotients, the hardware output path.
  std::vector<DbfpValue> quotients;
  std::vector<std::int64_t> numerators;
  std::int64_t denominator = 0;
  int common_exponent = 0;  // adder-tree exponent of the summed entries
  int saturation_count = 0;
  // The shared scale 2^(s-F) divides out of every ratio; set when the scaled
  // and integer-only quotient paths agree bit for bit.
  bool shared_exponent_cancelled = false;
  double max_input = 0.0;
};

inline SoftmaxOutput softmax_dbfp(std::span<const double> row, const DhLut& lut,
                                  const SoftmaxConfig& cfg = {}) {
  if (row.empty()) throw std::invalid_argument("softmax: empty row");
  cfg.value_format.validate();
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : row) {
    if (std::isnan(x) || x == std::numeric_limits<double>::infinity())
      throw std::domain_error("softmax: input must be < +inf and not NaN");
    mx = std::max(mx, x);
  }
  if (mx == -std::numeric_limits<double>::infinity())
    throw std::domain_error("softmax: all inputs are -inf");

  // max-subtract, then clamp into the table domain; -inf legitimately means
  // "smallest representable weight"
  std::vector<double> y(row.size());
  for (std::size_t i = 0; i < row.size(); ++i)
    y[i] = std::clamp(row[i] - mx, lut.config.domain_lo, 0.0);

  SoftmaxOutput out;
  out.max_input = mx;

  RealTensor yt({y.size()}, y);
  DbfpTensor enc;
  if (cfg.use_grouping) {
    enc = build_dbfp(yt, cfg.value_format, cfg.grouping, y.size());
  } else {
    BfpConfig vf = cfg.value_format;
    vf.pivot_policy = cfg.ungrouped_pivot;
    enc = detail::encode_tensor_impl(yt, vf, y.size(), std::nullopt);
  }
  out.saturation_count = enc.total_saturations();

  // aligned values are dyadic and small, so doubles carry them exactly
  const int f_bits = cfg.value_format.fraction_bits();
  std::vector<double> aligned(y.size(), 0.0);
  for (const auto& g : enc.groups)
    for (std::size_t k = 0; k < g.indices.size(); ++k)
      aligned[g.indices[k]] =
          DbfpValue{g.block.mantissas[k], g.block.shared_exponent - f_bits}.decode();

  const int s = lut.common_exponent();
  const int entry_f = lut.config.entry_format.fraction_bits();
  out.common_exponent = s;
  out.numerators.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t cell = lut.lookup_cell(aligned[i]);
    const auto& iv = lut.intervals[lut.interval_of_cell(cell)];
    out.numerators[i] =
        renormalize_mantissa(iv.mantissas[cell - iv.first_cell], iv.shared_exponent, s);
    out.denominator += out.numerators[i];
  }
  if (out.denominator <= 0)
    throw std::logic_error("softmax: non-positive denominator");

  const Divider div = Divider::make(cfg.divider);
  const Reciprocal rec = div.prepare(out.denominator);
  out.quotients.resize(y.size());
  out.probabilities.resize(y.size());
  bool cancelled = true;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const DbfpValue integer_path = div.apply(out.numerators[i], 0, 0, rec);
    const DbfpValue scaled_path = div.apply(out.numerators[i], s - entry_f, s - entry_f, rec);
    if (scaled_path.mantissa != integer_path.mantissa ||
        scaled_path.decode() != integer_path.decode())
      cancelled = false;
    out.quotients[i] = integer_path;
    // same cancellation on the exact path: both operands share 2^(s-F)
    const double p_int = static_cast<double>(out.numerators[i]) /
                         static_cast<double>(out.denominator);
    const double p_scaled = std::ldexp(static_cast<double>(out.numerators[i]), s - entry_f) /
                            std::ldexp(static_cast<double>(out.denominator), s - entry_f);
    if (p_int != p_scaled) cancelled = false;
    out.probabilities[i] = p_int;
  }
  out.shared_exponent_cancelled = cancelled;
  return out;
}

inline std::vector<double> softmax_reference(std::span<const double> row) {
  if (row.empty()) throw std::invalid_argument("softmax: empty row");
  long double mx = -std::numeric_limits<long double>::infinity();
  for (double x : row) mx = std::max<long double>(mx, x);
  std::vector<long double> e(row.size());
  long double sum = 0.0L;
  for (std::size_t i = 0; i < row.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(row[i]) - mx);
    sum += e[i];
  }
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i)
    out[i] = static_cast<double>(e[i] / sum);
  return out;
}

// ---------------------------------------------------------------------------
// matrix multiply

struct MatmulConfig {
  PivotPolicy out_pivot = PivotPolicy::max;
  std::size_t out_block_size = 128;
};

inline std::vector<DbfpValue> element_values(const DbfpTensor& t) {
  const int f_bits = t.config.fraction_bits();
  std::vector<DbfpValue> vals(t.element_count());
  for (const auto& g : t.groups)
    for (std::size_t k = 0; k < g.indices.size(); ++k)
      vals[g.indices[k]] = DbfpValue{g.block.mantissas[k], g.block.shared_exponent - f_bits};
  return vals;
}

namespace detail {

// Exact-first accumulation of exponent-bucketed partial sums, highest bucket
// first.  The accumulator widens (exact left shift) while it fits; only under
// extreme exponent spread does an addend get rounded up to the accumulator
// scale.
inline double combine_buckets(const std::map<int, std::int64_t>& buckets) {
  std::int64_t acc = 0;
  int e_cur = 0;
  bool first = true;
  for (auto it = buckets.rbegin(); it != buckets.rend(); ++it) {
    const std::int64_t m = it->second;
    if (m == 0) continue;
    if (first) {
      acc = m;
      e_cur = it->first;
      first = false;
      continue;
    }
    const int delta = e_cur - it->first;
    const std::int64_t mag = acc < 0 ? -acc : acc;
    if (delta <= 62 && mag < (std::int64_t{1} << (62 - delta))) {
      acc = (acc << delta) + m;
      e_cur = it->first;
    } else {
      acc += shift_right_nearest_even(m, delta);
    }
  }
  return std::ldexp(static_cast<double>(acc), e_cur);
}

inline void require_matmul_shapes(const DbfpTensor& a, const DbfpTensor& b_t) {
  if (a.shape.size() != 2 || b_t.shape.size() != 2)
    throw std::invalid_argument("matmul: operands must be rank 2");
  if (a.shape[1] != b_t.shape[1])
    throw std::invalid_argument("matmul: inner dimensions differ");
  if (a.config.mantissa_bits != b_t.config.mantissa_bits ||
      a.config.exponent_bits != b_t.config.exponent_bits)
    throw std::invalid_argument("matmul: operand formats differ");
}

inline RealTensor matmul_values(const DbfpTensor& a, const DbfpTensor& b_t) {
  require_matmul_shapes(a, b_t);
  const std::size_t rows = a.shape[0];
  const std::size_t cols = b_t.shape[0];
  const std::size_t inner = a.shape[1];
  const std::vector<DbfpValue> av = element_values(a);
  const std::vector<DbfpValue> bv = element_values(b_t);

  std::vector<double> out(rows * cols, 0.0);
  parallel_for(rows, [&](std::size_t i) {
    const DbfpValue* arow = av.data() + i * inner;
    for (std::size_t j = 0; j < cols; ++j) {
      const DbfpValue* brow = bv.data() + j * inner;
      // group products by exponent sum; in-bucket adds are exact
      std::map<int, std::int64_t> buckets;
      for (std::size_t k = 0; k < inner; ++k) {
        if (arow[k].mantissa == 0 || brow[k].mantissa == 0) continue;
        buckets[arow[k].exp2 + brow[k].exp2] += arow[k].mantissa * brow[k].mantissa;
      }
      out[i * cols + j] = combine_buckets(buckets);
    }
  });
  return RealTensor({rows, cols}, std::move(out));
}

}  // namespace detail

// Dot products before output re-encoding; the quantization reference point
// for error decomposition.
inline RealTensor matmul_dbfp_exact(const DbfpTensor& a, const DbfpTensor& b_t) {
  return detail::matmul_values(a, b_t);
}

// a: [r, n], b_t: [c, n] (second operand pre-transposed); returns [r, c]
// re-encoded in a's format with cfg.out_pivot alignment.
inline DbfpTensor matmul_dbfp(const DbfpTensor& a, const DbfpTensor& b_t,
                              const MatmulConfig& cfg = {}) {
  RealTensor vals = detail::matmul_values(a, b_t);
  BfpConfig out_cfg = a.config;
  out_cfg.pivot_policy = cfg.out_pivot;
  return detail::encode_tensor_impl(vals, out_cfg, cfg.out_block_size, std::nullopt);
}

// ---------------------------------------------------------------------------
// constant scaling

struct ScaleStats {
  int exponent_shift = 0;   // folded into every shared exponent
  std::int64_t fixed_multiplier = 0;  // 0 when the scale is a pure fold
  int saturation_count = 0;
  bool pure_fold = false;
};

// Multiply every element by a positive constant: the power-of-two part folds
// into the shared exponents; the residual multiplies mantissas in fixed point
// with fixed_bits fraction bits.  The residual is normalized into (0.5, 1] so
// scaled mantissas can never leave the magnitude field.
inline ScaleStats scale_dbfp(DbfpTensor& t, double factor, int fixed_bits = 14) {
  if (!(factor > 0.0) || !std::isfinite(factor))
    throw std::domain_error("scale: factor must be positive and finite");
  if (fixed_bits < 1 || fixed_bits > 30)
    throw std::invalid_argument("scale: fixed_bits must be in [1, 30]");
  const FloatComponents fc = decompose(factor);
  ScaleStats st;
  st.pure_fold = fc.mantissa == 1.0;
  st.exponent_shift = st.pure_fold ? fc.exponent : fc.exponent + 1;
  if (!st.pure_fold)
    st.fixed_multiplier = static_cast<std::int64_t>(round_half_even(
        std::ldexp(fc.mantissa, fixed_bits - 1)));
  const std::int32_t limit = t.config.mantissa_limit();
  for (auto& g : t.groups) {
    g.block.shared_exponent += st.exponent_shift;
    if (st.pure_fold) continue;
    for (auto& m : g.block.mantissas) {
      std::int64_t scaled = shift_right_nearest_even(m * st.fixed_multiplier, fixed_bits);
      if (scaled > limit) {
        scaled = limit;
        ++st.saturation_count;
        ++g.block.saturation_count;
      } else if (scaled < -limit) {
        scaled = -limit;
        ++st.saturation_count;
        ++g.block.saturation_count;
      }
      m = static_cast<std::int32_t>(scaled);
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// attention

struct AttentionConfig {
  SoftmaxConfig softmax{};
  MatmulConfig matmul{};
  std::size_t block_size = 128;
  int scale_fixed_bits = 14;
};

struct AttentionResult {
  RealTensor output;
  std::uint64_t conversions = 0;  // public encode/decode calls consumed
  int score_saturations = 0;
  int scale_saturations = 0;
  int softmax_saturations = 0;
  int output_saturations = 0;
};

inline RealTensor transpose(const RealTensor& t) {
  if (t.shape.size() != 2) throw std::invalid_argument("transpose: rank 2 required");
  const std::size_t r = t.shape[0];
  const std::size_t c = t.shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = t.data[i * c + j];
  return RealTensor({c, r}, std::move(out));
}

// q: [n, d], k: [n_k, d], v: [n_k, d_v].  Scores, probabilities and outputs
// all stay in block-float between the three input encodes and the single
// output decode; any extra tensor conversion in between is a defect and
// throws.
inline AttentionResult attention_forward(const RealTensor& q, const RealTensor& k,
                                         const RealTensor& v, const DhLut& lut,
                                         const AttentionConfig& cfg = {}) {
  if (q.shape.size() != 2 || k.shape.size() != 2 || v.shape.size() != 2)
    throw std::invalid_argument("attention: operands must be rank 2");
  if (q.shape[1] != k.shape[1])
    throw std::invalid_argument("attention: q/k depth mismatch");
  if (v.shape[0] != k.shape[0])
    throw std::invalid_argument("attention: k/v length mismatch");

  const BfpConfig vf = cfg.softmax.value_format;
  const std::uint64_t c0 = conversion_counter().load();

  const DbfpTensor qd = encode_tensor(q, vf, cfg.block_size);
  const DbfpTensor kd = encode_tensor(k, vf, cfg.block_size);
  const DbfpTensor vtd = encode_tensor(transpose(v), vf, cfg.block_size);

  AttentionResult res;
  DbfpTensor scores = matmul_dbfp(qd, kd, cfg.matmul);
  res.score_saturations = scores.total_saturations();
  const ScaleStats sst =
      scale_dbfp(scores, 1.0 / std::sqrt(static_cast<double>(q.shape[1])), cfg.scale_fixed_bits);
  res.scale_saturations = sst.saturation_count;

  const std::size_t rows = scores.shape[0];
  const std::size_t cols = scores.shape[1];
  const std::vector<DbfpValue> sv = element_values(scores);
  std::vector<double> prob_values(rows * cols);
  std::vector<int> row_sats(rows, 0);
  detail::parallel_for(rows, [&](std::size_t i) {
    std::vector<double> row(cols);
    for (std::size_t j = 0; j < cols; ++j) row[j] = sv[i * cols + j].decode();
    const SoftmaxOutput so = softmax_dbfp(row, lut, cfg.softmax);
    if (!so.shared_exponent_cancelled)
      throw std::logic_error("attention: shared-exponent cancellation failed");
    row_sats[i] = so.saturation_count;
    for (std::size_t j = 0; j < cols; ++j) prob_values[i * cols + j] = so.quotients[j].decode();
  });
  for (int s : row_sats) res.softmax_saturations += s;

  BfpConfig prob_cfg = vf;
  prob_cfg.pivot_policy = PivotPolicy::max;
  const DbfpTensor probs = detail::encode_tensor_impl(
      RealTensor({rows, cols}, std::move(prob_values)), prob_cfg, cfg.block_size, std::nullopt);

  if (conversion_counter().load() != c0 + 3)
    throw std::logic_error("attention: unexpected tensor conversion inside the pipeline");

  DbfpTensor outd = matmul_dbfp(probs, vtd, cfg.matmul);
  res.output_saturations = outd.total_saturations();
  res.output = decode_tensor(outd);
  res.conversions = conversion_counter().load() - c0;
  return res;
}

inline RealTensor attention_reference(const RealTensor& q, const RealTensor& k,
                                      const RealTensor& v) {
  const std::size_t n = q.shape[0];
  const std::size_t d = q.shape[1];
  const std::size_t nk = k.shape[0];
  const std::size_t dv = v.shape[1];
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> out(n * dv, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(nk);
    for (std::size_t j = 0; j < nk; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) acc += q.data[i * d + t] * k.data[j * d + t];
      row[j] = acc * scale;
    }
    const std::vector<double> p = softmax_reference(row);
    for (std::size_t j = 0; j < nk; ++j)
      for (std::size_t t = 0; t < dv; ++t) out[i * dv + t] += p[j] * v.data[j * dv + t];
  }
  return RealTensor({n, dv}, std::move(out));
}

}  // namespace dbfp
