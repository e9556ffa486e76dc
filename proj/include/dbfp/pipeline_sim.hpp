#pragma once

// Beat-accurate timing model of the four-stage softmax engine (Max, SE, Exp,
// Div) plus the figure-of-merit arithmetic used to compare accelerator
// designs.
//
// One beat moves `bandwidth` elements through the pipe.  A row costs the fill
// latency (stage depths + adder tree, overlapped so only the first beat pays
// it) plus one cycle per remaining beat, plus a stall per table swap.  Cycle
// attribution hands each stage its own fill contribution (the adder tree
// belongs to Exp, swap stalls to SE since that stage triggers the preload)
// and an even quarter of the remaining beats, remainder to Div, so the stage
// counts always sum to the total exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace dbfp {

enum class PipelineStage { max, se, exp, div };

inline constexpr std::array<PipelineStage, 4> pipeline_stages = {
    PipelineStage::max, PipelineStage::se, PipelineStage::exp,
    PipelineStage::div};

inline std::string_view to_string(PipelineStage s) {
  switch (s) {
    case PipelineStage::max: return "max";
    case PipelineStage::se: return "se";
    case PipelineStage::exp: return "exp";
    case PipelineStage::div: return "div";
  }
  throw std::invalid_argument("pipeline: unknown stage");
}

struct PipelineConfig {
  std::int64_t bandwidth = 64;  // elements per beat
  std::array<std::int64_t, 4> stage_depths = {1, 2, 3, 1};  // Max, SE, Exp, Div
  std::int64_t lut_swap_penalty = 4;

  std::int64_t adder_tree_levels() const {
    std::int64_t levels = 0;
    while ((std::int64_t{1} << levels) < bandwidth) ++levels;
    return levels;
  }

  void validate() const {
    if (bandwidth < 1) throw std::invalid_argument("pipeline: bandwidth < 1");
    for (std::int64_t d : stage_depths)
      if (d < 1) throw std::invalid_argument("pipeline: stage depth < 1");
    if (lut_swap_penalty < 0)
      throw std::invalid_argument("pipeline: negative swap penalty");
  }
};

struct SimReport {
  std::int64_t total_cycles = 0;
  std::array<std::int64_t, 4> per_stage_cycles = {0, 0, 0, 0};
  std::array<double, 4> per_stage_fraction = {0, 0, 0, 0};
  std::int64_t beats = 0;
  std::int64_t swaps = 0;

  std::int64_t stage_cycles(PipelineStage s) const {
    return per_stage_cycles[static_cast<std::size_t>(s)];
  }
  double stage_fraction(PipelineStage s) const {
    return per_stage_fraction[static_cast<std::size_t>(s)];
  }
  double max_fraction() const {
    double mx = per_stage_fraction[0];
    for (double f : per_stage_fraction) mx = std::max(mx, f);
    return mx;
  }
};

// One softmax row of seq_len elements.  The optional trace lists the shared
// exponent each element group presents; the table reloads whenever adjacent
// entries differ.
inline SimReport simulate_softmax_pipeline(std::int64_t seq_len,
                                           const PipelineConfig& cfg = {},
                                           std::span<const int> exponent_trace = {}) {
  cfg.validate();
  if (seq_len < 1) throw std::invalid_argument("pipeline: seq_len < 1");

  SimReport r;
  r.beats = (seq_len + cfg.bandwidth - 1) / cfg.bandwidth;
  for (std::size_t i = 1; i < exponent_trace.size(); ++i)
    if (exponent_trace[i] != exponent_trace[i - 1]) ++r.swaps;

  std::int64_t depth_sum = 0;
  for (std::int64_t d : cfg.stage_depths) depth_sum += d;
  const std::int64_t swap_cycles = r.swaps * cfg.lut_swap_penalty;
  const std::int64_t fill = depth_sum + cfg.adder_tree_levels() - 1 + swap_cycles;
  r.total_cycles = fill + r.beats;

  auto& per = r.per_stage_cycles;
  for (std::size_t s = 0; s < 4; ++s) per[s] = cfg.stage_depths[s];
  per[static_cast<std::size_t>(PipelineStage::se)] += swap_cycles;
  per[static_cast<std::size_t>(PipelineStage::exp)] += cfg.adder_tree_levels();
  const std::int64_t steady = r.beats - 1;
  for (std::size_t s = 0; s < 4; ++s) per[s] += steady / 4;
  per[static_cast<std::size_t>(PipelineStage::div)] += steady % 4;

  for (std::size_t s = 0; s < 4; ++s)
    r.per_stage_fraction[s] =
        static_cast<double>(per[s]) / static_cast<double>(r.total_cycles);
  return r;
}

struct SweepEntry {
  std::int64_t seq_len = 0;
  SimReport report;
  // One softmax row per sequence position: quadratic in seq_len.
  std::int64_t attention_cycles = 0;
};

inline std::vector<SweepEntry> sweep_sequence_lengths(
    std::span<const std::int64_t> lengths, const PipelineConfig& cfg = {}) {
  if (lengths.empty()) throw std::invalid_argument("pipeline: empty sweep");
  std::vector<SweepEntry> out;
  out.reserve(lengths.size());
  for (std::int64_t n : lengths) {
    SweepEntry e;
    e.seq_len = n;
    e.report = simulate_softmax_pipeline(n, cfg);
    e.attention_cycles = n * e.report.total_cycles;
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// figure of merit

struct FomRecord {
  double fmax_mhz = 0.0;
  double inputs = 0.0;      // elements per pass
  double width_bits = 0.0;  // operand precision
  double lut_count = 0.0;
  double ff_count = 0.0;
  double fom = 0.0;
};

inline FomRecord compute_fom(double fmax_mhz, double inputs, double width_bits,
                             double lut_count, double ff_count) {
  if (!(fmax_mhz > 0) || !(inputs > 0) || !(width_bits > 0))
    throw std::domain_error("fom: non-positive inputs");
  if (!(lut_count + ff_count > 0))
    throw std::domain_error("fom: zero resources");
  FomRecord r;
  r.fmax_mhz = fmax_mhz;
  r.inputs = inputs;
  r.width_bits = width_bits;
  r.lut_count = lut_count;
  r.ff_count = ff_count;
  r.fom = fmax_mhz * inputs * width_bits / (lut_count + ff_count);
  return r;
}

}  // namespace dbfp
