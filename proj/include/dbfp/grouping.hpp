#pragma once

// Adaptive exponent grouping: a one-dimensional credal c-means over element
// exponents with k singleton clusters plus the empty set.  The empty set
// catches outliers at a fixed distance delta and hardening sends its winners
// to a dedicated outlier group.
//
// Objective: J = sum_i [ sum_j u_ij^beta * (e_i - s_j)^2 + u_i0^beta * delta^2 ]
// where u_i0 is the empty-set column.  Alternating the membership and centroid
// updates below never increases J; each step is the exact minimizer with the
// other argument fixed.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dbfp/format.hpp"

namespace dbfp {

struct GroupingConfig {
  std::size_t k = 3;            // singleton clusters, >= 1
  double beta = 2.0;            // fuzzifier, > 1
  std::optional<double> delta;  // empty-set distance; nullopt = auto
  int max_iters = 100;
  double tol = 1e-6;            // max centroid movement stopping threshold
  std::optional<std::vector<double>> initial_centroids;

  void validate() const {
    if (k < 1) throw std::invalid_argument("grouping: k must be >= 1");
    if (!(beta > 1.0)) throw std::invalid_argument("grouping: beta must be > 1");
    if (delta && !(*delta > 0.0)) throw std::invalid_argument("grouping: delta must be > 0");
    if (max_iters < 1) throw std::invalid_argument("grouping: max_iters must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("grouping: tol must be > 0");
    if (initial_centroids && initial_centroids->size() != k)
      throw std::invalid_argument("grouping: initial centroid count must equal k");
  }
};

struct CredalState {
  std::vector<double> memberships;  // n x (k+1) row-major, empty set last
  std::vector<double> centroids;    // k
  double objective = 0.0;
  int iterations = 0;
};

struct GroupingResult {
  CredalState state;
  // Hard ids in [0, k]; id == k means the empty set (outlier group).
  std::vector<std::size_t> hard_assignment;
  double resolved_delta = 0.0;
  std::size_t k = 0;       // effective cluster count after any reduction
  bool k_reduced = false;  // requested k exceeded the distinct exponent count
  bool degenerate = false; // some centroid update had zero total weight
  std::vector<double> objective_trace;  // J after each full iteration

  std::size_t empty_set_id() const { return k; }
};

inline double objective_j(std::span<const double> exponents,
                          std::span<const double> memberships,
                          std::span<const double> centroids, double beta, double delta) {
  const std::size_t n = exponents.size();
  const std::size_t k = centroids.size();
  if (memberships.size() != n * (k + 1))
    throw std::invalid_argument("objective_j: membership matrix must be n x (k+1)");
  double j = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = memberships.data() + i * (k + 1);
    for (std::size_t c = 0; c < k; ++c) {
      const double d = exponents[i] - centroids[c];
      if (row[c] > 0.0) j += std::pow(row[c], beta) * d * d;
    }
    if (row[k] > 0.0) j += std::pow(row[k], beta) * delta * delta;
  }
  return j;
}

// Membership row for fixed centroids.  Rows are simplex points; a point at
// zero distance from one or more centroids splits its mass equally among the
// zero-distance centroids only.
inline std::vector<double> update_memberships(std::span<const double> exponents,
                                              std::span<const double> centroids,
                                              double beta, double delta) {
  if (!(beta > 1.0)) throw std::invalid_argument("update_memberships: beta must be > 1");
  if (!(delta > 0.0)) throw std::invalid_argument("update_memberships: delta must be > 0");
  const std::size_t n = exponents.size();
  const std::size_t k = centroids.size();
  const double p = 2.0 / (beta - 1.0);
  std::vector<double> u(n * (k + 1), 0.0);
  std::vector<double> dist(k);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = u.data() + i * (k + 1);
    std::size_t zero_hits = 0;
    for (std::size_t c = 0; c < k; ++c) {
      dist[c] = std::fabs(exponents[i] - centroids[c]);
      if (dist[c] == 0.0) ++zero_hits;
    }
    if (zero_hits > 0) {
      const double share = 1.0 / static_cast<double>(zero_hits);
      for (std::size_t c = 0; c < k; ++c)
        if (dist[c] == 0.0) row[c] = share;
      continue;
    }
    // Ratio form keeps the weights bounded when distances get tiny.
    for (std::size_t c = 0; c < k; ++c) {
      double denom = 0.0;
      for (std::size_t o = 0; o < k; ++o) denom += std::pow(dist[c] / dist[o], p);
      denom += std::pow(dist[c] / delta, p);
      row[c] = 1.0 / denom;
    }
    double denom = std::pow(delta / delta, p);
    for (std::size_t o = 0; o < k; ++o) denom += std::pow(delta / dist[o], p);
    row[k] = 1.0 / denom;
  }
  return u;
}

// Weighted-mean centroid update.  A cluster whose total weight vanishes keeps
// its previous centroid and raises the degenerate flag.
inline std::vector<double> update_centroids(std::span<const double> exponents,
                                            std::span<const double> memberships,
                                            std::span<const double> previous, double beta,
                                            bool* degenerate = nullptr) {
  const std::size_t n = exponents.size();
  const std::size_t k = previous.size();
  if (memberships.size() != n * (k + 1))
    throw std::invalid_argument("update_centroids: membership matrix must be n x (k+1)");
  std::vector<double> out(previous.begin(), previous.end());
  for (std::size_t c = 0; c < k; ++c) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = std::pow(memberships[i * (k + 1) + c], beta);
      num += w * exponents[i];
      den += w;
    }
    if (den > 0.0) {
      out[c] = num / den;
    } else if (degenerate) {
      *degenerate = true;
    }
  }
  return out;
}

// Argmax over the k+1 membership columns, lowest index on ties; column k is
// the empty set.
inline std::vector<std::size_t> harden_assignment(std::span<const double> memberships,
                                                  std::size_t k) {
  if ((k + 1) == 0 || memberships.size() % (k + 1) != 0)
    throw std::invalid_argument("harden_assignment: membership matrix must be n x (k+1)");
  const std::size_t n = memberships.size() / (k + 1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = memberships.data() + i * (k + 1);
    std::size_t best = 0;
    for (std::size_t c = 1; c <= k; ++c)
      if (row[c] > row[best]) best = c;
    out[i] = best;
  }
  return out;
}

namespace detail {

// Deterministic k-quantile seeding over the sorted exponents.
inline std::vector<double> quantile_centroids(std::vector<double> sorted, std::size_t k) {
  std::vector<double> out(k);
  const double n = static_cast<double>(sorted.size());
  for (std::size_t j = 0; j < k; ++j) {
    auto idx = static_cast<std::size_t>((static_cast<double>(j) + 0.5) / static_cast<double>(k) * n);
    idx = std::min(idx, sorted.size() - 1);
    out[j] = sorted[idx];
  }
  return out;
}

}  // namespace detail

inline GroupingResult fit_grouping(std::span<const double> exponents, GroupingConfig cfg) {
  cfg.validate();
  if (exponents.empty()) throw std::invalid_argument("fit_grouping: empty input");
  for (double e : exponents)
    if (!std::isfinite(e)) throw std::domain_error("fit_grouping: non-finite exponent");

  GroupingResult result;

  std::vector<double> sorted(exponents.begin(), exponents.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t distinct = 1;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] != sorted[i - 1]) ++distinct;
  std::size_t k = cfg.k;
  if (k > distinct) {
    k = distinct;
    result.k_reduced = true;
    if (cfg.initial_centroids)
      throw std::invalid_argument("fit_grouping: given centroids incompatible with reduced k");
  }
  result.k = k;

  std::vector<double> centroids = cfg.initial_centroids
                                      ? *cfg.initial_centroids
                                      : detail::quantile_centroids(std::move(sorted), k);

  // delta resolves once, before the first iteration.
  double delta;
  if (cfg.delta) {
    delta = *cfg.delta;
  } else {
    double mean_d2 = 0.0;
    for (double e : exponents)
      for (double c : centroids) mean_d2 += (e - c) * (e - c);
    mean_d2 /= static_cast<double>(exponents.size() * k);
    delta = mean_d2 > 0.0 ? std::sqrt(2.0 * mean_d2) : 1.0;
  }
  result.resolved_delta = delta;

  std::vector<double> memberships;
  int iter = 0;
  for (; iter < cfg.max_iters; ++iter) {
    memberships = update_memberships(exponents, centroids, cfg.beta, delta);
    std::vector<double> next =
        update_centroids(exponents, memberships, centroids, cfg.beta, &result.degenerate);
    double moved = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      moved = std::max(moved, std::fabs(next[c] - centroids[c]));
    centroids = std::move(next);
    result.objective_trace.push_back(
        objective_j(exponents, memberships, centroids, cfg.beta, delta));
    if (moved < cfg.tol) {
      ++iter;
      break;
    }
  }

  result.state.memberships = std::move(memberships);
  result.state.centroids = std::move(centroids);
  result.state.iterations = iter;
  result.state.objective = result.objective_trace.back();
  result.hard_assignment = harden_assignment(result.state.memberships, k);
  return result;
}

// Encodes a real tensor with per-block adaptive grouping: fit on the block's
// element exponents, harden, then encode every hardened group with the group
// pivot (median by default).  Empty-set winners form an outlier group encoded
// against their maximum exponent so they never saturate.  Zeros carry no
// exponent and join the first group.
inline DbfpTensor build_dbfp(const RealTensor& t, const BfpConfig& bfp_cfg,
                             const GroupingConfig& grouping_cfg, std::size_t block_size = 128,
                             PivotPolicy group_pivot = PivotPolicy::median) {
  t.validate();
  bfp_cfg.validate();
  grouping_cfg.validate();
  if (group_pivot == PivotPolicy::given)
    throw std::invalid_argument("build_dbfp: group pivot must be a statistic, not 'given'");

  DbfpTensor out;
  out.shape = t.shape;
  out.block_size = block_size;
  out.config = bfp_cfg;
  out.config.pivot_policy = group_pivot;

  const std::vector<detail::BlockRange> ranges = detail::block_ranges(t, block_size);
  std::vector<std::vector<DbfpTensor::Group>> per_block(ranges.size());
  detail::parallel_for(ranges.size(), [&](std::size_t bi) {
    const detail::BlockRange& br = ranges[bi];
    const std::size_t n = br.end - br.begin;
    std::vector<std::size_t> nonzero;
    std::vector<double> exps;
    std::vector<std::size_t> zeros;
    for (std::size_t i = 0; i < n; ++i) {
      const FloatComponents c = decompose(t.data[br.begin + i]);
      if (c.is_zero) {
        zeros.push_back(i);
      } else {
        nonzero.push_back(i);
        exps.push_back(static_cast<double>(c.exponent));
      }
    }

    std::vector<std::vector<std::size_t>> members;  // block-local indices
    if (nonzero.empty()) {
      members.push_back(zeros);
    } else {
      const GroupingResult fit = fit_grouping(exps, grouping_cfg);
      members.assign(fit.k + 1, {});
      for (std::size_t i = 0; i < nonzero.size(); ++i)
        members[fit.hard_assignment[i]].push_back(nonzero[i]);
      std::size_t first_used = 0;
      while (first_used < members.size() && members[first_used].empty()) ++first_used;
      for (std::size_t z : zeros) members[first_used].push_back(z);
      for (auto& m : members) std::sort(m.begin(), m.end());
    }

    std::vector<DbfpTensor::Group>& dst = per_block[bi];
    const std::size_t outlier_group = members.size() - 1;
    for (std::size_t gi = 0; gi < members.size(); ++gi) {
      if (members[gi].empty()) continue;
      DbfpTensor::Group g;
      std::vector<double> vals;
      vals.reserve(members[gi].size());
      for (std::size_t local : members[gi]) {
        g.indices.push_back(static_cast<std::uint32_t>(br.begin + local));
        vals.push_back(t.data[br.begin + local]);
      }
      BfpConfig gcfg = bfp_cfg;
      gcfg.pivot_policy =
          (nonzero.empty() || gi != outlier_group) ? group_pivot : PivotPolicy::max;
      g.block = encode_block(vals, gcfg);
      dst.push_back(std::move(g));
    }
  });
  for (std::vector<DbfpTensor::Group>& gs : per_block)
    for (DbfpTensor::Group& g : gs) out.groups.push_back(std::move(g));
  return out;
}

}  // namespace dbfp
