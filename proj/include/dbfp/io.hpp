#pragma once

// Binary container formats, all little-endian:
//   DBT1  real tensor: magic, u32 rank, u32 dims[rank], u8 dtype (0=f32,
//         1=f64), row-major payload.
//   DBF1  block-float tensor: magic, u32 rank, u32 dims[rank], u8 M, u8 E,
//         u8 rounding, u8 pivot policy, u32 block_size, u32 group count,
//         then per group u32 count, i8 shared_exp, count x i16 mantissas,
//         count x u32 element indices.  The index list makes the file
//         self-describing; readers that only want the block data can skip it.
//   DLT1  lookup table: magic, config (u8 m, u8 k, f64 domain, u8 target,
//         entry format, u8 grid bits), u32 breakpoint count + f64 points,
//         per interval u32 cell count, i8 shared_exp, i16 mantissas, then
//         f64 build_mae, f64 certified_max_error, i32 current_exponent,
//         u32 swap_latency.
//
// Malformed input raises IoError; the CLI maps it to the data-error exit
// code.  Writers validate range (mantissas must fit i16, exponents i8) and
// reject non-finite payloads, matching the ingestion rules.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dbfp/dh_lut.hpp"
#include "dbfp/format.hpp"

namespace dbfp {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> buf;
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> buf;
  if (!is.read(buf.data(), buf.size()))
    throw IoError(std::string("truncated file while reading ") + what);
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<U>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return static_cast<T>(u);
}

inline void write_f64(std::ostream& os, double v) {
  write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}
inline double read_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(read_le<std::uint64_t>(is, what));
}
inline void write_f32(std::ostream& os, float v) {
  write_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
}
inline float read_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(read_le<std::uint32_t>(is, what));
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) {
  os.write(magic, 4);
}
inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw IoError(std::string("bad magic, expected ") + magic);
}

inline std::vector<std::size_t> read_shape(std::istream& is) {
  const std::uint32_t rank = read_le<std::uint32_t>(is, "rank");
  if (rank == 0 || rank > 8) throw IoError("rank out of range");
  std::vector<std::size_t> shape(rank);
  std::size_t total = 1;
  for (auto& d : shape) {
    d = read_le<std::uint32_t>(is, "dimension");
    if (d == 0) throw IoError("zero dimension");
    if (total > (std::size_t{1} << 32) / d) throw IoError("tensor too large");
    total *= d;
  }
  return shape;
}

inline void write_shape(std::ostream& os, std::span<const std::size_t> shape) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) {
    if (d > std::numeric_limits<std::uint32_t>::max())
      throw std::invalid_argument("io: dimension exceeds u32");
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
}

}  // namespace detail

enum class TensorDtype : std::uint8_t { f32 = 0, f64 = 1 };

// ---------------------------------------------------------------------------
// DBT1 real tensors

inline void write_dbt(std::ostream& os, const RealTensor& t,
                      TensorDtype dtype = TensorDtype::f64) {
  t.validate();
  detail::write_magic(os, "DBT1");
  detail::write_shape(os, t.shape);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  for (double v : t.data) {
    if (dtype == TensorDtype::f64)
      detail::write_f64(os, v);
    else
      detail::write_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("write failed");
}

inline RealTensor read_dbt(std::istream& is) {
  detail::expect_magic(is, "DBT1");
  RealTensor t;
  t.shape = detail::read_shape(is);
  const auto dtype = detail::read_le<std::uint8_t>(is, "dtype");
  if (dtype > 1) throw IoError("unknown dtype");
  std::size_t n = 1;
  for (std::size_t d : t.shape) n *= d;
  t.data.resize(n);
  for (double& v : t.data)
    v = dtype == 1 ? detail::read_f64(is, "payload")
                   : static_cast<double>(detail::read_f32(is, "payload"));
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes after payload");
  return t;
}

// ---------------------------------------------------------------------------
// DBF1 block-float tensors

inline void write_dbf(std::ostream& os, const DbfpTensor& t) {
  t.validate();
  t.config.validate();
  detail::write_magic(os, "DBF1");
  detail::write_shape(os, t.shape);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.config.mantissa_bits));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.config.exponent_bits));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.config.rounding));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.config.pivot_policy));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.block_size));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.groups.size()));
  for (const auto& g : t.groups) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.indices.size()));
    if (g.block.shared_exponent < -128 || g.block.shared_exponent > 127)
      throw std::invalid_argument("io: shared exponent exceeds i8");
    detail::write_le<std::int8_t>(os, static_cast<std::int8_t>(g.block.shared_exponent));
    for (std::int32_t m : g.block.mantissas) {
      if (m < -32768 || m > 32767)
        throw std::invalid_argument("io: mantissa exceeds i16");
      detail::write_le<std::int16_t>(os, static_cast<std::int16_t>(m));
    }
    for (std::uint32_t idx : g.indices) detail::write_le<std::uint32_t>(os, idx);
  }
  if (!os) throw IoError("write failed");
}

inline DbfpTensor read_dbf(std::istream& is) {
  detail::expect_magic(is, "DBF1");
  DbfpTensor t;
  t.shape = detail::read_shape(is);
  t.config.mantissa_bits = detail::read_le<std::uint8_t>(is, "mantissa bits");
  t.config.exponent_bits = detail::read_le<std::uint8_t>(is, "exponent bits");
  const auto rounding = detail::read_le<std::uint8_t>(is, "rounding");
  const auto pivot = detail::read_le<std::uint8_t>(is, "pivot policy");
  if (rounding > static_cast<std::uint8_t>(Rounding::nearest_even))
    throw IoError("unknown rounding mode");
  if (pivot > static_cast<std::uint8_t>(PivotPolicy::given))
    throw IoError("unknown pivot policy");
  t.config.rounding = static_cast<Rounding>(rounding);
  t.config.pivot_policy = static_cast<PivotPolicy>(pivot);
  try {
    t.config.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("bad config: ") + e.what());
  }
  t.block_size = detail::read_le<std::uint32_t>(is, "block size");
  if (t.block_size == 0) throw IoError("zero block size");
  const std::uint32_t group_count = detail::read_le<std::uint32_t>(is, "group count");
  const std::int64_t limit = t.config.mantissa_limit();
  t.groups.resize(group_count);
  for (auto& g : t.groups) {
    const std::uint32_t count = detail::read_le<std::uint32_t>(is, "group length");
    if (count == 0 || count > t.element_count()) throw IoError("group length out of range");
    g.block.shared_exponent = detail::read_le<std::int8_t>(is, "shared exponent");
    g.block.mantissas.resize(count);
    for (auto& m : g.block.mantissas) {
      m = detail::read_le<std::int16_t>(is, "mantissa");
      if (m < -limit || m > limit) throw IoError("mantissa exceeds format limit");
    }
    g.indices.resize(count);
    for (auto& idx : g.indices) idx = detail::read_le<std::uint32_t>(is, "element index");
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes after payload");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("inconsistent tensor: ") + e.what());
  }
  return t;
}

// ---------------------------------------------------------------------------
// DLT1 lookup tables

inline void write_dlt(std::ostream& os, const DhLut& lut) {
  detail::write_magic(os, "DLT1");
  const LutConfig& cfg = lut.config;
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(cfg.table_size));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(cfg.index_bits));
  detail::write_f64(os, cfg.domain_lo);
  detail::write_f64(os, cfg.domain_hi);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(cfg.target));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(cfg.entry_format.mantissa_bits));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(cfg.entry_format.exponent_bits));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(cfg.build_grid_bits));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(lut.partition.points.size()));
  for (double p : lut.partition.points) detail::write_f64(os, p);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(lut.intervals.size()));
  for (const auto& iv : lut.intervals) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(iv.mantissas.size()));
    if (iv.shared_exponent < -128 || iv.shared_exponent > 127)
      throw std::invalid_argument("io: shared exponent exceeds i8");
    detail::write_le<std::int8_t>(os, static_cast<std::int8_t>(iv.shared_exponent));
    for (std::int32_t m : iv.mantissas) {
      if (m < -32768 || m > 32767)
        throw std::invalid_argument("io: mantissa exceeds i16");
      detail::write_le<std::int16_t>(os, static_cast<std::int16_t>(m));
    }
  }
  detail::write_f64(os, lut.build_mae);
  detail::write_f64(os, lut.certified_max_error);
  detail::write_le<std::int32_t>(os, lut.current_exponent);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(lut.swap_latency));
  if (!os) throw IoError("write failed");
}

inline DhLut read_dlt(std::istream& is) {
  detail::expect_magic(is, "DLT1");
  DhLut lut;
  LutConfig& cfg = lut.config;
  cfg.table_size = detail::read_le<std::uint8_t>(is, "table size");
  cfg.index_bits = detail::read_le<std::uint8_t>(is, "index bits");
  cfg.domain_lo = detail::read_f64(is, "domain low");
  cfg.domain_hi = detail::read_f64(is, "domain high");
  const auto target = detail::read_le<std::uint8_t>(is, "target");
  if (target > static_cast<std::uint8_t>(LutTarget::exp))
    throw IoError("unknown table target");
  cfg.target = static_cast<LutTarget>(target);
  cfg.entry_format.mantissa_bits = detail::read_le<std::uint8_t>(is, "entry mantissa bits");
  cfg.entry_format.exponent_bits = detail::read_le<std::uint8_t>(is, "entry exponent bits");
  cfg.build_grid_bits = detail::read_le<std::uint8_t>(is, "grid bits");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("bad config: ") + e.what());
  }

  const std::uint32_t points = detail::read_le<std::uint32_t>(is, "breakpoint count");
  if (points != static_cast<std::uint32_t>(cfg.table_size))
    throw IoError("breakpoint count does not match table size");
  lut.partition.points.resize(points);
  for (double& p : lut.partition.points) p = detail::read_f64(is, "breakpoint");
  try {
    lut.partition.validate(cfg.domain_lo, cfg.domain_hi);
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("bad partition: ") + e.what());
  }

  const std::uint32_t interval_count = detail::read_le<std::uint32_t>(is, "interval count");
  if (interval_count != static_cast<std::uint32_t>(cfg.table_size - 1))
    throw IoError("interval count does not match table size");
  const std::int64_t limit = cfg.entry_format.mantissa_limit();
  lut.intervals.resize(interval_count);
  std::size_t first_cell = 0;
  for (std::size_t i = 0; i < lut.intervals.size(); ++i) {
    auto& iv = lut.intervals[i];
    const std::uint32_t cells = detail::read_le<std::uint32_t>(is, "cell count");
    if (cells == 0) throw IoError("empty interval");
    iv.lo = lut.partition.points[i];
    iv.hi = lut.partition.points[i + 1];
    iv.first_cell = first_cell;
    first_cell += cells;
    iv.shared_exponent = detail::read_le<std::int8_t>(is, "interval exponent");
    iv.mantissas.resize(cells);
    for (auto& m : iv.mantissas) {
      m = detail::read_le<std::int16_t>(is, "entry mantissa");
      if (m < -limit || m > limit) throw IoError("entry exceeds format limit");
    }
  }
  if (first_cell != std::size_t{1} << cfg.index_bits)
    throw IoError("cell totals do not match index depth");

  lut.build_mae = detail::read_f64(is, "build mae");
  lut.certified_max_error = detail::read_f64(is, "certified error");
  lut.current_exponent = detail::read_le<std::int32_t>(is, "current exponent");
  lut.swap_latency = detail::read_le<std::uint32_t>(is, "swap latency");
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes after payload");
  return lut;
}

// ---------------------------------------------------------------------------
// path helpers

namespace detail {

template <typename Fn>
auto with_input_file(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return fn(is);
}

template <typename Fn>
void with_output_file(const std::filesystem::path& path, Fn&& fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  fn(os);
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline RealTensor load_dbt(const std::filesystem::path& p) {
  return detail::with_input_file(p, [](std::istream& is) { return read_dbt(is); });
}
inline void save_dbt(const std::filesystem::path& p, const RealTensor& t,
                     TensorDtype dtype = TensorDtype::f64) {
  detail::with_output_file(p, [&](std::ostream& os) { write_dbt(os, t, dtype); });
}
inline DbfpTensor load_dbf(const std::filesystem::path& p) {
  return detail::with_input_file(p, [](std::istream& is) { return read_dbf(is); });
}
inline void save_dbf(const std::filesystem::path& p, const DbfpTensor& t) {
  detail::with_output_file(p, [&](std::ostream& os) { write_dbf(os, t); });
}
inline DhLut load_dlt(const std::filesystem::path& p) {
  return detail::with_input_file(p, [](std::istream& is) { return read_dlt(is); });
}
inline void save_dlt(const std::filesystem::path& p, const DhLut& lut) {
  detail::with_output_file(p, [&](std::ostream& os) { write_dlt(os, lut); });
}

}  // namespace dbfp
