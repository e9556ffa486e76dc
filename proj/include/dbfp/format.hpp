#pragma once

// Block floating point core: scalar decomposition, mantissa alignment against a
// shared exponent, block encode/decode, and the tensor-level container.
//
// A block stores one shared exponent s and per-element signed mantissas m with
// F = M - 1 fraction bits, so element i decodes to m_i * 2^(s - F).  Mantissas
// are sign plus M magnitude bits, |m| <= 2^M - 1; a value at its own exponent
// fills the field exactly, anything above the pivot saturates and is counted.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace dbfp {

// Exponent reported for a zero scalar: the smallest subnormal double is
// 1.0 * 2^-1074 in the (sign, e, m in [1,2)) convention used here.
inline constexpr int kZeroExponent = -1074;

enum class PivotPolicy : std::uint8_t { max = 0, median = 1, min = 2, given = 3 };
enum class Rounding : std::uint8_t { nearest_even = 0 };

inline const char* to_string(PivotPolicy p) {
  switch (p) {
    case PivotPolicy::max: return "max";
    case PivotPolicy::median: return "median";
    case PivotPolicy::min: return "min";
    case PivotPolicy::given: return "given";
  }
  return "?";
}

inline PivotPolicy pivot_policy_from_string(const std::string& s) {
  if (s == "max") return PivotPolicy::max;
  if (s == "median") return PivotPolicy::median;
  if (s == "min") return PivotPolicy::min;
  if (s == "given") return PivotPolicy::given;
  throw std::invalid_argument("unknown pivot policy: " + s);
}

struct BfpConfig {
  int mantissa_bits = 8;  // M, sign + M magnitude bits per element
  int exponent_bits = 5;  // E, shared exponent in E-bit two's complement
  Rounding rounding = Rounding::nearest_even;
  PivotPolicy pivot_policy = PivotPolicy::max;

  int fraction_bits() const { return mantissa_bits - 1; }
  std::int64_t mantissa_limit() const { return (std::int64_t{1} << mantissa_bits) - 1; }
  int min_exponent() const { return -(1 << (exponent_bits - 1)); }
  int max_exponent() const { return (1 << (exponent_bits - 1)) - 1; }

  // M capped at 15 and E at 8 so mantissas fit i16 and exponents i8 on disk.
  void validate() const {
    if (mantissa_bits < 2 || mantissa_bits > 15)
      throw std::invalid_argument("mantissa_bits must be in [2, 15]");
    if (exponent_bits < 2 || exponent_bits > 8)
      throw std::invalid_argument("exponent_bits must be in [2, 8]");
  }

  bool operator==(const BfpConfig&) const = default;
};

struct FloatComponents {
  int sign = 0;  // 0 positive, 1 negative
  int exponent = kZeroExponent;
  double mantissa = 0.0;  // in [1, 2) for nonzero values
  bool is_zero = true;
};

// Splits a finite double into sign, unbiased exponent and mantissa in [1,2).
// Reconstruction (-1)^sign * m * 2^e is exact; zero reports is_zero instead.
inline FloatComponents decompose(double x) {
  if (!std::isfinite(x)) throw std::domain_error("decompose: non-finite input");
  if (x == 0.0) return FloatComponents{};
  int e2 = 0;
  const double f = std::frexp(std::fabs(x), &e2);  // f in [0.5, 1)
  return FloatComponents{std::signbit(x) ? 1 : 0, e2 - 1, 2.0 * f, false};
}

// Round half to even, result returned as a double with integral value.
inline double round_half_even(double v) {
  const double f = std::floor(v);
  const double r = v - f;
  if (r > 0.5) return f + 1.0;
  if (r < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

// v / 2^shift with round-half-to-even, shift >= 0.  Exact for shift == 0.
inline std::int64_t shift_right_nearest_even(std::int64_t v, int shift) {
  if (shift <= 0) return v;
  if (shift >= 63) return 0;
  const bool neg = v < 0;
  const std::uint64_t mag = neg ? static_cast<std::uint64_t>(-v) : static_cast<std::uint64_t>(v);
  const std::uint64_t floor_part = mag >> shift;
  const std::uint64_t rem = mag & ((std::uint64_t{1} << shift) - 1);
  const std::uint64_t half = std::uint64_t{1} << (shift - 1);
  std::uint64_t out = floor_part;
  if (rem > half || (rem == half && (floor_part & 1)))
    out += 1;
  return neg ? -static_cast<std::int64_t>(out) : static_cast<std::int64_t>(out);
}

struct AlignResult {
  std::int32_t mantissa = 0;
  bool saturated = false;
};

// Quantizes x against a shared exponent: m = rne(x * 2^(F - s)) clamped to
// +-(2^M - 1).  Without saturation |decode - x| <= 2^(s - F - 1).
inline AlignResult align_to_shared(double x, int shared_exp, const BfpConfig& cfg) {
  if (!std::isfinite(x)) throw std::domain_error("align_to_shared: non-finite input");
  const std::int64_t limit = cfg.mantissa_limit();
  const double scaled = std::ldexp(x, cfg.fraction_bits() - shared_exp);
  if (!std::isfinite(scaled))
    return {static_cast<std::int32_t>(x < 0 ? -limit : limit), true};
  const double r = round_half_even(scaled);
  if (r > static_cast<double>(limit)) return {static_cast<std::int32_t>(limit), true};
  if (r < static_cast<double>(-limit)) return {static_cast<std::int32_t>(-limit), true};
  return {static_cast<std::int32_t>(r), false};
}

struct BfpBlock {
  int shared_exponent = 0;
  std::vector<std::int32_t> mantissas;
  int saturation_count = 0;     // elements clamped to the mantissa limit
  bool exponent_saturated = false;  // pivot clamped to the E-bit range
};

// A standalone DBFP scalar: value = mantissa * 2^exp2.
struct DbfpValue {
  std::int64_t mantissa = 0;
  int exp2 = 0;

  double decode() const { return std::ldexp(static_cast<double>(mantissa), exp2); }
  bool operator==(const DbfpValue&) const = default;
};

namespace detail {

// Lower median of the exponents of the nonzero elements.  Returns nullopt for
// an all-zero span.
inline std::optional<int> pivot_exponent(std::span<const double> values, PivotPolicy policy) {
  std::vector<int> exps;
  exps.reserve(values.size());
  for (double v : values) {
    const FloatComponents c = decompose(v);
    if (!c.is_zero) exps.push_back(c.exponent);
  }
  if (exps.empty()) return std::nullopt;
  switch (policy) {
    case PivotPolicy::max: return *std::max_element(exps.begin(), exps.end());
    case PivotPolicy::min: return *std::min_element(exps.begin(), exps.end());
    case PivotPolicy::median: {
      const std::size_t idx = (exps.size() - 1) / 2;
      std::nth_element(exps.begin(), exps.begin() + idx, exps.end());
      return exps[idx];
    }
    case PivotPolicy::given: break;
  }
  throw std::invalid_argument("pivot_exponent: policy 'given' requires an explicit pivot");
}

}  // namespace detail

// Encodes one block of values against a single shared exponent chosen by the
// pivot policy.  An explicit pivot is required iff policy == given.  All-zero
// blocks take the minimum representable exponent and zero mantissas.
inline BfpBlock encode_block(std::span<const double> values, const BfpConfig& cfg,
                             std::optional<int> pivot = std::nullopt) {
  cfg.validate();
  if (values.empty()) throw std::invalid_argument("encode_block: empty block");
  if ((cfg.pivot_policy == PivotPolicy::given) != pivot.has_value())
    throw std::invalid_argument("encode_block: pivot required iff policy == given");

  BfpBlock block;
  std::optional<int> p = pivot ? pivot : detail::pivot_exponent(values, cfg.pivot_policy);
  if (!p) {  // all zero
    block.shared_exponent = cfg.min_exponent();
    block.mantissas.assign(values.size(), 0);
    return block;
  }
  int s = *p;
  if (s > cfg.max_exponent()) { s = cfg.max_exponent(); block.exponent_saturated = true; }
  if (s < cfg.min_exponent()) { s = cfg.min_exponent(); block.exponent_saturated = true; }
  block.shared_exponent = s;
  block.mantissas.reserve(values.size());
  for (double v : values) {
    const AlignResult a = align_to_shared(v, s, cfg);
    block.mantissas.push_back(a.mantissa);
    block.saturation_count += a.saturated ? 1 : 0;
  }
  return block;
}

inline std::vector<double> decode_block(const BfpBlock& block, const BfpConfig& cfg) {
  std::vector<double> out;
  out.reserve(block.mantissas.size());
  const int shift = block.shared_exponent - cfg.fraction_bits();
  for (std::int32_t m : block.mantissas)
    out.push_back(std::ldexp(static_cast<double>(m), shift));
  return out;
}

// Dense row-major real tensor.  Rank >= 1; the last dimension is the row axis
// that block encoding splits.
struct RealTensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  RealTensor() = default;
  RealTensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    validate();
  }

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
  std::size_t row_length() const { return shape.empty() ? 0 : shape.back(); }
  std::size_t row_count() const {
    return shape.empty() ? 0 : element_count() / row_length();
  }

  void validate() const {
    if (shape.empty()) throw std::invalid_argument("tensor: rank must be >= 1");
    for (std::size_t d : shape)
      if (d == 0) throw std::invalid_argument("tensor: zero dimension");
    if (data.size() != element_count())
      throw std::invalid_argument("tensor: data size does not match shape");
  }
};

// Partition of a row block into groups, given as block-local element indices.
using BlockPartition = std::vector<std::vector<std::size_t>>;

struct DbfpTensor {
  struct Group {
    std::vector<std::uint32_t> indices;  // global element indices, row-major
    BfpBlock block;
  };

  std::vector<std::size_t> shape;
  std::size_t block_size = 128;
  BfpConfig config;
  std::vector<Group> groups;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
  std::size_t row_length() const { return shape.empty() ? 0 : shape.back(); }
  std::size_t row_count() const {
    return shape.empty() ? 0 : element_count() / row_length();
  }

  int total_saturations() const {
    int n = 0;
    for (const Group& g : groups) n += g.block.saturation_count;
    return n;
  }

  // Every element index must appear in exactly one group and group sizes must
  // match their blocks.
  void validate() const {
    if (shape.empty()) throw std::invalid_argument("dbfp tensor: rank must be >= 1");
    std::vector<std::uint8_t> seen(element_count(), 0);
    for (const Group& g : groups) {
      if (g.indices.size() != g.block.mantissas.size())
        throw std::invalid_argument("dbfp tensor: group size mismatch");
      for (std::uint32_t idx : g.indices) {
        if (idx >= seen.size() || seen[idx])
          throw std::invalid_argument("dbfp tensor: groups do not partition the tensor");
        seen[idx] = 1;
      }
    }
    for (std::uint8_t s : seen)
      if (!s) throw std::invalid_argument("dbfp tensor: element missing from all groups");
  }
};

// Counts real<->DBFP tensor conversions through the public API.  Kernels that
// must consume DBFP directly (matmul cascades, attention) assert this stays
// flat across their internal stages.
inline std::atomic<std::uint64_t>& conversion_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

namespace detail {

inline unsigned thread_budget() {
  static const unsigned budget = [] {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DBFP_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) hw = std::min<unsigned>(hw, static_cast<unsigned>(v));
    }
    return hw;
  }();
  return budget;
}

// Static chunking over [0, n); results must be written to disjoint slots so
// the schedule cannot affect output bits.  The first worker exception is
// rethrown after all threads have joined.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned threads = std::min<std::size_t>(thread_budget(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn, &failed, &error, &error_mu] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        const std::scoped_lock lock(error_mu);
        if (!failed.exchange(true)) error = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (failed.load()) std::rethrow_exception(error);
}

struct BlockRange {
  std::size_t row;
  std::size_t begin;  // global element index
  std::size_t end;
};

inline std::vector<BlockRange> block_ranges(const RealTensor& t, std::size_t block_size) {
  if (block_size == 0) throw std::invalid_argument("block_size must be >= 1");
  std::vector<BlockRange> out;
  const std::size_t rows = t.row_count();
  const std::size_t len = t.row_length();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t off = 0; off < len; off += block_size) {
      const std::size_t begin = r * len + off;
      out.push_back({r, begin, begin + std::min(block_size, len - off)});
    }
  }
  return out;
}

// Uncounted implementation shared by the public API and by kernels that stay
// inside the DBFP domain (their inputs are exact dyadic values).
inline DbfpTensor encode_tensor_impl(const RealTensor& t, const BfpConfig& cfg,
                                     std::size_t block_size,
                                     const std::optional<BlockPartition>& grouping) {
  t.validate();
  cfg.validate();
  DbfpTensor out;
  out.shape = t.shape;
  out.block_size = block_size;
  out.config = cfg;

  const std::vector<BlockRange> ranges = block_ranges(t, block_size);
  std::vector<std::vector<DbfpTensor::Group>> per_block(ranges.size());
  parallel_for(ranges.size(), [&](std::size_t bi) {
    const BlockRange& br = ranges[bi];
    const std::size_t n = br.end - br.begin;
    std::vector<DbfpTensor::Group>& dst = per_block[bi];
    if (!grouping) {
      DbfpTensor::Group g;
      g.indices.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        g.indices[i] = static_cast<std::uint32_t>(br.begin + i);
      g.block = encode_block(std::span<const double>(t.data.data() + br.begin, n), cfg);
      dst.push_back(std::move(g));
      return;
    }
    std::vector<std::uint8_t> seen(n, 0);
    for (const std::vector<std::size_t>& members : *grouping) {
      if (members.empty())
        throw std::invalid_argument("encode_tensor: empty group in partition");
      DbfpTensor::Group g;
      std::vector<double> vals;
      vals.reserve(members.size());
      for (std::size_t local : members) {
        if (local >= n || seen[local])
          throw std::invalid_argument("encode_tensor: grouping is not a partition of the block");
        seen[local] = 1;
        g.indices.push_back(static_cast<std::uint32_t>(br.begin + local));
        vals.push_back(t.data[br.begin + local]);
      }
      g.block = encode_block(vals, cfg);
      dst.push_back(std::move(g));
    }
    for (std::uint8_t s : seen)
      if (!s) throw std::invalid_argument("encode_tensor: grouping is not a partition of the block");
  });
  for (std::vector<DbfpTensor::Group>& gs : per_block)
    for (DbfpTensor::Group& g : gs) out.groups.push_back(std::move(g));
  return out;
}

inline RealTensor decode_tensor_impl(const DbfpTensor& t) {
  RealTensor out;
  out.shape = t.shape;
  out.data.assign(t.element_count(), 0.0);
  const int shift_base = -t.config.fraction_bits();
  for (const DbfpTensor::Group& g : t.groups) {
    const int shift = g.block.shared_exponent + shift_base;
    for (std::size_t i = 0; i < g.indices.size(); ++i)
      out.data[g.indices[i]] = std::ldexp(static_cast<double>(g.block.mantissas[i]), shift);
  }
  return out;
}

}  // namespace detail

// Splits each row into contiguous blocks of block_size (tail blocks shorter)
// and encodes each block as one group, or as the given per-block partition.
inline DbfpTensor encode_tensor(const RealTensor& t, const BfpConfig& cfg,
                                std::size_t block_size = 128,
                                const std::optional<BlockPartition>& grouping = std::nullopt) {
  conversion_counter().fetch_add(1, std::memory_order_relaxed);
  return detail::encode_tensor_impl(t, cfg, block_size, grouping);
}

inline RealTensor decode_tensor(const DbfpTensor& t) {
  conversion_counter().fetch_add(1, std::memory_order_relaxed);
  return detail::decode_tensor_impl(t);
}

// Quantization error variance of an L_m fraction-bit block format under a
// block exponent PMF {(gamma_i, p_i)}: sigma^2 = 2^(-2 L_m)/12 * sum p_i 4^gamma_i.
inline double bfp_error_variance(std::span<const std::pair<int, double>> exponent_pmf,
                                 int l_m) {
  if (l_m < 1) throw std::invalid_argument("bfp_error_variance: l_m must be >= 1");
  double total_p = 0.0;
  double acc = 0.0;
  for (const auto& [gamma, p] : exponent_pmf) {
    if (p < 0.0) throw std::invalid_argument("bfp_error_variance: negative probability");
    total_p += p;
    acc += p * std::ldexp(1.0, 2 * gamma);
  }
  if (std::fabs(total_p - 1.0) > 1e-12)
    throw std::invalid_argument("bfp_error_variance: PMF must sum to 1");
  return std::ldexp(acc, -2 * l_m) / 12.0;
}

}  // namespace dbfp
