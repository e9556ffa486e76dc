#pragma once

// Experiment harness: table-depth Pareto sweeps, alignment-pivot comparison
// on the softmax path, and the predicted-vs-measured quantization error
// report.
//
// All sweeps are deterministic for a fixed input sample; rows are processed
// in parallel and aggregated in index order.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dbfp/dh_lut.hpp"
#include "dbfp/format.hpp"
#include "dbfp/grouping.hpp"
#include "dbfp/kernels.hpp"

namespace dbfp {

// ---------------------------------------------------------------------------
// table-depth Pareto sweep

struct ParetoPoint {
  int index_bits = 0;
  double mae = 0.0;               // table grid MAE at this depth
  std::int64_t memory_bits = 0;   // 2^k entries x (sign + magnitude) bits
  double softmax_max_err = 0.0;   // worst quotient error over the sample rows
};

inline double softmax_max_error(std::span<const std::vector<double>> rows,
                                const DhLut& lut, const SoftmaxConfig& cfg) {
  std::vector<double> per_row(rows.size(), 0.0);
  detail::parallel_for(rows.size(), [&](std::size_t r) {
    const auto out = softmax_dbfp(rows[r], lut, cfg);
    const auto ref = softmax_reference(rows[r]);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i)
      worst = std::max(worst, std::fabs(out.quotients[i].decode() - ref[i]));
    per_row[r] = worst;
  });
  double worst = 0.0;
  for (double e : per_row) worst = std::max(worst, e);
  return worst;
}

inline std::vector<ParetoPoint> pareto_sweep(int k_lo, int k_hi,
                                             std::span<const std::vector<double>> rows,
                                             const LutConfig& base = {},
                                             const SoftmaxConfig& softmax_cfg = {}) {
  if (k_lo < 3 || k_hi > 12 || k_lo > k_hi)
    throw std::invalid_argument("pareto_sweep: index bits must run inside [3, 12]");
  std::vector<ParetoPoint> out;
  out.reserve(static_cast<std::size_t>(k_hi - k_lo + 1));
  for (int k = k_lo; k <= k_hi; ++k) {
    LutConfig cfg = base;
    cfg.index_bits = k;
    const DhLut lut = build_dh_lut(cfg);
    ParetoPoint p;
    p.index_bits = k;
    p.mae = lut.build_mae;
    p.memory_bits = (std::int64_t{1} << k) *
                    (cfg.entry_format.mantissa_bits + 1);
    if (!rows.empty()) p.softmax_max_err = softmax_max_error(rows, lut, softmax_cfg);
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// alignment-pivot comparison

// Per-row worst softmax error when the subtracted row is aligned as a single
// block against the max magnitude exponent vs the median one.  Ties are
// common: the policies coincide whenever the post-subtract magnitudes span
// one exponent step, and on strongly peaked rows both recover the one-hot
// answer.
struct AlignmentRow {
  double err_max = 0.0;     // max-pivot alignment
  double err_median = 0.0;  // median-pivot alignment
};

struct AlignmentComparison {
  std::vector<AlignmentRow> rows;
  std::size_t median_not_worse = 0;
  double median_not_worse_fraction = 0.0;
  // worst err_max / err_median over rows where the median policy erred at all
  double max_ratio = 1.0;
};

inline AlignmentComparison compare_alignment_policies(
    std::span<const std::vector<double>> rows, const DhLut& lut,
    const SoftmaxConfig& base = {}) {
  if (rows.empty()) throw std::invalid_argument("compare_alignment: no rows");
  SoftmaxConfig max_cfg = base;
  max_cfg.use_grouping = false;
  max_cfg.ungrouped_pivot = PivotPolicy::max;
  SoftmaxConfig med_cfg = max_cfg;
  med_cfg.ungrouped_pivot = PivotPolicy::median;

  AlignmentComparison cmp;
  cmp.rows.resize(rows.size());
  // Compare the exact integer ratios: reciprocal-unit noise is identical
  // under both policies and would only blur the alignment effect.
  detail::parallel_for(rows.size(), [&](std::size_t r) {
    const auto ref = softmax_reference(rows[r]);
    const auto mx = softmax_dbfp(rows[r], lut, max_cfg);
    const auto md = softmax_dbfp(rows[r], lut, med_cfg);
    AlignmentRow row;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      row.err_max = std::max(row.err_max,
                             std::fabs(mx.probabilities[i] - ref[i]));
      row.err_median = std::max(row.err_median,
                                std::fabs(md.probabilities[i] - ref[i]));
    }
    cmp.rows[r] = row;
  });

  for (const AlignmentRow& row : cmp.rows) {
    if (row.err_median <= row.err_max) ++cmp.median_not_worse;
    if (row.err_median > 0.0)
      cmp.max_ratio = std::max(cmp.max_ratio, row.err_max / row.err_median);
  }
  cmp.median_not_worse_fraction =
      static_cast<double>(cmp.median_not_worse) / static_cast<double>(rows.size());
  return cmp;
}

// Sample generator for the comparison: magnitudes U[1,2) spread over
// log-normal binades, the regime where alignment direction matters.
inline std::vector<std::vector<double>> heavy_tailed_rows(std::size_t rows,
                                                          std::size_t length,
                                                          double exponent_sigma,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mant(1.0, 2.0);
  std::normal_distribution<double> expo(0.0, exponent_sigma);
  std::vector<std::vector<double>> out(rows, std::vector<double>(length));
  for (auto& row : out)
    for (double& x : row) x = mant(rng) * std::exp2(expo(rng));
  return out;
}

// ---------------------------------------------------------------------------
// predicted vs measured quantization error

struct ErrorReport {
  double predicted_variance = 0.0;  // from the block-exponent PMF
  double measured_variance = 0.0;   // mean squared decode error
  double ratio = 0.0;               // measured / predicted (1 when both are 0)
  std::map<int, double> exponent_pmf;
  std::size_t element_count = 0;
  int saturation_count = 0;
};

inline ErrorReport empirical_error_report(const RealTensor& t,
                                          const BfpConfig& cfg = {},
                                          const GroupingConfig& grouping = {}) {
  t.validate();
  for (double x : t.data)
    if (!std::isfinite(x))
      throw std::invalid_argument("error_report: non-finite element");

  const DbfpTensor enc = build_dbfp(t, cfg, grouping);
  const RealTensor dec = detail::decode_tensor_impl(enc);

  ErrorReport rep;
  rep.element_count = t.element_count();
  rep.saturation_count = enc.total_saturations();

  for (const auto& g : enc.groups)
    rep.exponent_pmf[g.block.shared_exponent] +=
        static_cast<double>(g.indices.size());
  std::vector<std::pair<int, double>> pmf;
  pmf.reserve(rep.exponent_pmf.size());
  for (auto& [gamma, p] : rep.exponent_pmf) {
    p /= static_cast<double>(rep.element_count);
    pmf.emplace_back(gamma, p);
  }
  rep.predicted_variance = bfp_error_variance(pmf, cfg.fraction_bits());

  double acc = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    const double e = dec.data[i] - t.data[i];
    acc += e * e;
  }
  rep.measured_variance = acc / static_cast<double>(rep.element_count);

  if (rep.predicted_variance > 0.0)
    rep.ratio = rep.measured_variance / rep.predicted_variance;
  else
    rep.ratio = rep.measured_variance == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace dbfp
