#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "dbfp/format.hpp"
#include "dbfp/grouping.hpp"

namespace {

// Independent objective evaluation: plain loop, no shared helpers.
double objective_brute(const std::vector<double>& e, const std::vector<double>& u,
                       const std::vector<double>& s, double beta, double delta) {
  const std::size_t k = s.size();
  double j = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    for (std::size_t c = 0; c < k; ++c)
      j += std::pow(u[i * (k + 1) + c], beta) * (e[i] - s[c]) * (e[i] - s[c]);
    j += std::pow(u[i * (k + 1) + k], beta) * delta * delta;
  }
  return j;
}

std::vector<double> random_memberships(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> u(n * (k + 1));
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t c = 0; c <= k; ++c) {
      u[i * (k + 1) + c] = unif(rng);
      total += u[i * (k + 1) + c];
    }
    for (std::size_t c = 0; c <= k; ++c) u[i * (k + 1) + c] /= total;
  }
  return u;
}

}  // namespace

TEST_CASE("objective_j matches hand values and brute force") {
  SECTION("single point, singleton membership") {
    const std::vector<double> e{3.0};
    const std::vector<double> s{1.0};
    const std::vector<double> u{1.0, 0.0};
    CHECK(dbfp::objective_j(e, u, s, 2.0, 5.0) == 4.0);
  }

  SECTION("all mass on the empty set costs delta^2") {
    const std::vector<double> e{3.0};
    const std::vector<double> s{1.0};
    const std::vector<double> u{0.0, 1.0};
    CHECK(dbfp::objective_j(e, u, s, 2.0, 5.0) == 25.0);
  }

  SECTION("random instances agree with an independent summation") {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> ed(-8.0, 8.0);
    for (int rep = 0; rep < 50; ++rep) {
      const std::size_t n = 1 + rng() % 30;
      const std::size_t k = 1 + rng() % 4;
      std::vector<double> e(n), s(k);
      for (double& x : e) x = ed(rng);
      for (double& x : s) x = ed(rng);
      const auto u = random_memberships(rng, n, k);
      const double got = dbfp::objective_j(e, u, s, 2.0, 3.0);
      const double want = objective_brute(e, u, s, 2.0, 3.0);
      REQUIRE(got == Catch::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("update_memberships") {
  SECTION("worked example: beta=2, e=5, centroids {4,6}, delta=10") {
    const std::vector<double> e{5.0};
    const std::vector<double> s{4.0, 6.0};
    const auto u = dbfp::update_memberships(e, s, 2.0, 10.0);
    REQUIRE(u.size() == 3);
    CHECK(u[0] == Catch::Approx(100.0 / 201.0).epsilon(1e-14));
    CHECK(u[1] == Catch::Approx(100.0 / 201.0).epsilon(1e-14));
    CHECK(u[2] == Catch::Approx(1.0 / 201.0).epsilon(1e-14));
  }

  SECTION("zero distance takes full membership, split equally on ties") {
    const std::vector<double> e{4.0};
    const std::vector<double> s{4.0, 6.0};
    const auto u = dbfp::update_memberships(e, s, 2.0, 10.0);
    CHECK(u == std::vector<double>{1.0, 0.0, 0.0});

    const std::vector<double> s2{4.0, 4.0, 9.0};
    const auto u2 = dbfp::update_memberships(e, s2, 2.0, 10.0);
    CHECK(u2 == std::vector<double>{0.5, 0.5, 0.0, 0.0});
  }

  SECTION("rows are simplex points and monotone in distance") {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> ed(-10.0, 10.0);
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t n = 1 + rng() % 16;
      const std::size_t k = 1 + rng() % 4;
      std::vector<double> e(n), s(k);
      for (double& x : e) x = ed(rng);
      for (double& x : s) x = ed(rng);
      const double delta = 2.0;
      const auto u = dbfp::update_memberships(e, s, 2.0, delta);
      for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t c = 0; c <= k; ++c) {
          const double v = u[i * (k + 1) + c];
          REQUIRE(v >= 0.0);
          REQUIRE(v <= 1.0);
          row_sum += v;
        }
        REQUIRE(row_sum == Catch::Approx(1.0).margin(1e-12));
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const double da = std::fabs(e[i] - s[a]);
            const double db = std::fabs(e[i] - s[b]);
            if (da < db && da > 0.0)
              REQUIRE(u[i * (k + 1) + a] >= u[i * (k + 1) + b]);
          }
      }
    }
  }

  SECTION("membership update minimizes J for fixed centroids") {
    std::mt19937_64 rng(91);
    std::uniform_real_distribution<double> ed(-6.0, 6.0);
    for (int rep = 0; rep < 40; ++rep) {
      const std::size_t n = 1 + rng() % 8;
      const std::size_t k = 1 + rng() % 3;
      std::vector<double> e(n), s(k);
      for (double& x : e) x = ed(rng);
      for (double& x : s) x = ed(rng);
      const double delta = 1.5;
      const auto u_opt = dbfp::update_memberships(e, s, 2.0, delta);
      const double j_opt = dbfp::objective_j(e, u_opt, s, 2.0, delta);
      for (int probe = 0; probe < 20; ++probe) {
        const auto u_rand = random_memberships(rng, n, k);
        REQUIRE(j_opt <= dbfp::objective_j(e, u_rand, s, 2.0, delta) + 1e-12);
      }
    }
  }
}

TEST_CASE("update_centroids") {
  SECTION("weighted mean") {
    const std::vector<double> e{0.0, 0.0, 10.0, 10.0};
    // k = 1: memberships n x 2
    const std::vector<double> u{1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0};
    const std::vector<double> prev{5.0};
    const auto s = dbfp::update_centroids(e, u, prev, 2.0);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == 0.0);
  }

  SECTION("zero total weight keeps previous centroid and flags degenerate") {
    const std::vector<double> e{1.0, 2.0};
    const std::vector<double> u{0.0, 1.0, 0.0, 1.0};  // all mass on the empty set
    const std::vector<double> prev{7.0};
    bool degenerate = false;
    const auto s = dbfp::update_centroids(e, u, prev, 2.0, &degenerate);
    CHECK(s[0] == 7.0);
    CHECK(degenerate);
  }
}

TEST_CASE("harden_assignment ties break to the lowest index") {
  // k = 2: columns are cluster 0, cluster 1, empty set
  const std::vector<double> u{0.45, 0.45, 0.10,
                              0.20, 0.30, 0.50,
                              0.10, 0.80, 0.10};
  const auto hard = dbfp::harden_assignment(u, 2);
  REQUIRE(hard.size() == 3);
  CHECK(hard[0] == 0);  // tie between clusters 0 and 1
  CHECK(hard[1] == 2);  // empty set wins
  CHECK(hard[2] == 1);
}

TEST_CASE("fit_grouping") {
  SECTION("identical exponents collapse to one exact cluster") {
    const std::vector<double> e{2.0, 2.0, 2.0};
    dbfp::GroupingConfig cfg;
    cfg.k = 1;
    const auto r = dbfp::fit_grouping(e, cfg);
    CHECK(r.state.centroids[0] == 2.0);
    CHECK(r.state.objective == 0.0);
    CHECK(r.hard_assignment == std::vector<std::size_t>{0, 0, 0});
  }

  SECTION("k larger than distinct exponents is reduced and flagged") {
    const std::vector<double> e{1.0, 1.0, 5.0};
    dbfp::GroupingConfig cfg;
    cfg.k = 4;
    const auto r = dbfp::fit_grouping(e, cfg);
    CHECK(r.k_reduced);
    CHECK(r.k == 2);
  }

  SECTION("two well separated pairs: fixed point checked exhaustively") {
    const std::vector<double> e{0.0, 0.0, 10.0, 10.0};
    dbfp::GroupingConfig cfg;
    cfg.k = 2;
    cfg.delta = 100.0;
    const auto r = dbfp::fit_grouping(e, cfg);
    REQUIRE(r.state.centroids.size() == 2);
    std::vector<double> c = r.state.centroids;
    std::sort(c.begin(), c.end());
    CHECK(c[0] == Catch::Approx(0.0).margin(1e-9));
    CHECK(c[1] == Catch::Approx(10.0).margin(1e-9));
    CHECK(r.state.objective == Catch::Approx(0.0).margin(1e-12));

    // Recompute both update equations at the reported state: a fixed point
    // must reproduce itself exactly (up to fp noise).
    const auto u_re = dbfp::update_memberships(e, r.state.centroids, cfg.beta, *cfg.delta);
    for (std::size_t i = 0; i < u_re.size(); ++i)
      REQUIRE(u_re[i] == Catch::Approx(r.state.memberships[i]).margin(1e-12));
    const auto s_re = dbfp::update_centroids(e, u_re, r.state.centroids, cfg.beta);
    for (std::size_t c2 = 0; c2 < 2; ++c2)
      REQUIRE(s_re[c2] == Catch::Approx(r.state.centroids[c2]).margin(1e-12));
  }

  SECTION("far outlier prefers the empty set") {
    const std::vector<double> e{0.0, 0.0, 0.0, 50.0};
    dbfp::GroupingConfig cfg;
    cfg.k = 1;
    cfg.delta = 5.0;
    const auto r = dbfp::fit_grouping(e, cfg);
    const std::size_t k = r.k;
    const double u_cluster = r.state.memberships[3 * (k + 1) + 0];
    const double u_empty = r.state.memberships[3 * (k + 1) + k];
    CHECK(u_empty > u_cluster);
    CHECK(r.hard_assignment[3] == r.empty_set_id());
    CHECK(r.hard_assignment[0] == 0);
  }

  SECTION("objective trace is non-increasing on random instances") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> ei(-16, 15);
    for (int rep = 0; rep < 60; ++rep) {
      std::vector<double> e(128);
      for (double& x : e) x = ei(rng);
      dbfp::GroupingConfig cfg;
      cfg.k = 2 + rep % 3;
      const auto r = dbfp::fit_grouping(e, cfg);
      for (std::size_t t = 1; t < r.objective_trace.size(); ++t)
        REQUIRE(r.objective_trace[t] <=
                r.objective_trace[t - 1] + 1e-12 * std::max(1.0, r.objective_trace[t - 1]));
    }
  }

  SECTION("an extra full update barely moves J at convergence") {
    std::mt19937_64 rng(4096);
    std::uniform_int_distribution<int> ei(-16, 15);
    for (int rep = 0; rep < 30; ++rep) {
      std::vector<double> e(128);
      for (double& x : e) x = ei(rng);
      dbfp::GroupingConfig cfg;
      cfg.k = 2 + rep % 3;
      cfg.tol = 1e-9;
      cfg.max_iters = 2000;
      const auto r = dbfp::fit_grouping(e, cfg);
      const double delta = r.resolved_delta;
      const auto u2 = dbfp::update_memberships(e, r.state.centroids, cfg.beta, delta);
      const auto s2 = dbfp::update_centroids(e, u2, r.state.centroids, cfg.beta);
      const double j2 = dbfp::objective_j(e, u2, s2, cfg.beta, delta);
      REQUIRE(std::fabs(j2 - r.state.objective) < 1e-9);
    }
  }

  SECTION("finite-difference stationarity of the converged centroids") {
    std::mt19937_64 rng(777);
    std::uniform_int_distribution<int> ei(-16, 15);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> e(128);
      for (double& x : e) x = ei(rng);
      dbfp::GroupingConfig cfg;
      cfg.k = 3;
      cfg.tol = 1e-9;
      cfg.max_iters = 2000;
      const auto r = dbfp::fit_grouping(e, cfg);
      const double delta = r.resolved_delta;
      const double h = 1e-5;
      for (std::size_t c = 0; c < r.k; ++c) {
        auto plus = r.state.centroids;
        auto minus = r.state.centroids;
        plus[c] += h;
        minus[c] -= h;
        const double jp = dbfp::objective_j(e, r.state.memberships, plus, cfg.beta, delta);
        const double jm = dbfp::objective_j(e, r.state.memberships, minus, cfg.beta, delta);
        REQUIRE(std::fabs((jp - jm) / (2.0 * h)) < 1e-4);
      }
    }
  }

  SECTION("determinism: same input, same result") {
    std::vector<double> e{3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8};
    dbfp::GroupingConfig cfg;
    cfg.k = 3;
    const auto a = dbfp::fit_grouping(e, cfg);
    const auto b = dbfp::fit_grouping(e, cfg);
    CHECK(a.state.centroids == b.state.centroids);
    CHECK(a.state.memberships == b.state.memberships);
    CHECK(a.hard_assignment == b.hard_assignment);
  }

  SECTION("input validation") {
    dbfp::GroupingConfig cfg;
    CHECK_THROWS_AS(dbfp::fit_grouping(std::vector<double>{}, cfg), std::invalid_argument);
    cfg.beta = 1.0;
    CHECK_THROWS_AS(dbfp::fit_grouping(std::vector<double>{1.0}, cfg), std::invalid_argument);
    cfg.beta = 2.0;
    cfg.delta = -1.0;
    CHECK_THROWS_AS(dbfp::fit_grouping(std::vector<double>{1.0}, cfg), std::invalid_argument);
  }
}

TEST_CASE("build_dbfp") {
  SECTION("bimodal block groups exactly and beats single-block max alignment") {
    dbfp::RealTensor t({1, 4}, {1.0, 1.0, 1024.0, 1024.0});
    dbfp::BfpConfig bfp;
    dbfp::GroupingConfig grouping;
    grouping.k = 2;
    const auto enc = dbfp::build_dbfp(t, bfp, grouping, 4);
    enc.validate();
    const auto dec = dbfp::detail::decode_tensor_impl(enc);
    double grouped_sq = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      grouped_sq += (dec.data[i] - t.data[i]) * (dec.data[i] - t.data[i]);
    CHECK(grouped_sq == 0.0);

    dbfp::BfpConfig flat;
    flat.pivot_policy = dbfp::PivotPolicy::max;
    const auto single = dbfp::detail::encode_tensor_impl(t, flat, 4, std::nullopt);
    const auto dec_single = dbfp::detail::decode_tensor_impl(single);
    double single_sq = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      single_sq += (dec_single.data[i] - t.data[i]) * (dec_single.data[i] - t.data[i]);
    CHECK(grouped_sq <= single_sq);
    CHECK(single_sq > 0.0);
  }

  SECTION("random bimodal blocks: grouped error never exceeds max-aligned error") {
    // Two tight exponent modes: mantissa jitter only, so each hardened group
    // is a single-exponent population and the median pivot cannot clamp.
    std::mt19937_64 rng(321);
    std::uniform_real_distribution<double> mant(1.0, 1.95);
    std::bernoulli_distribution flip(0.5);
    for (int rep = 0; rep < 25; ++rep) {
      const int lo_exp = static_cast<int>(rng() % 5) - 2;
      const int hi_exp = lo_exp + 9 + static_cast<int>(rng() % 4);
      std::vector<double> data(128);
      for (double& v : data)
        v = std::ldexp(mant(rng), flip(rng) ? hi_exp : lo_exp);
      dbfp::RealTensor t({1, 128}, std::move(data));

      dbfp::GroupingConfig grouping;
      grouping.k = 2;
      const auto grouped = dbfp::build_dbfp(t, dbfp::BfpConfig{}, grouping);
      const auto dec_g = dbfp::detail::decode_tensor_impl(grouped);

      dbfp::BfpConfig flat;
      flat.pivot_policy = dbfp::PivotPolicy::max;
      const auto single = dbfp::detail::encode_tensor_impl(t, flat, 128, std::nullopt);
      const auto dec_s = dbfp::detail::decode_tensor_impl(single);

      double g_sq = 0.0, s_sq = 0.0;
      for (std::size_t i = 0; i < t.data.size(); ++i) {
        g_sq += (dec_g.data[i] - t.data[i]) * (dec_g.data[i] - t.data[i]);
        s_sq += (dec_s.data[i] - t.data[i]) * (dec_s.data[i] - t.data[i]);
      }
      REQUIRE(g_sq <= s_sq);
    }
  }

  SECTION("zeros join a group and decode to zero") {
    dbfp::RealTensor t({1, 6}, {0.0, 1.0, 0.0, 1024.0, 1024.0, 0.0});
    dbfp::GroupingConfig grouping;
    grouping.k = 2;
    const auto enc = dbfp::build_dbfp(t, dbfp::BfpConfig{}, grouping, 6);
    enc.validate();
    const auto dec = dbfp::detail::decode_tensor_impl(enc);
    CHECK(dec.data[0] == 0.0);
    CHECK(dec.data[2] == 0.0);
    CHECK(dec.data[5] == 0.0);
    CHECK(dec.data[1] == 1.0);
  }

  SECTION("all-zero tensor encodes as a single zero group per block") {
    dbfp::RealTensor t({1, 4}, {0.0, 0.0, 0.0, 0.0});
    dbfp::GroupingConfig grouping;
    const auto enc = dbfp::build_dbfp(t, dbfp::BfpConfig{}, grouping, 4);
    REQUIRE(enc.groups.size() == 1);
    CHECK(enc.groups[0].block.shared_exponent == enc.config.min_exponent());
  }
}
