#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "geocaps/objective.hpp"
#include "test_util.hpp"

using namespace geocaps;
using testutil::max_grad_error;
using testutil::random_tensor;

namespace {

BatchDistances<double> dist_from(std::vector<double> values, Index m) {
  return BatchDistances<double>{Tensor<double>::from_data({m, m}, std::move(values))};
}

double softplus_ref(double x) { return std::log1p(std::exp(x)); }

// Explicit scalar recomputations of each loss, kept independent of the
// tensor implementations.
double margin_oracle(const Tensor<double>& d, double theta) {
  const Index m = d.dim(0);
  double total = 0.0;
  for (Index a = 0; a < m; ++a) {
    double dn = std::numeric_limits<double>::infinity();
    for (Index s = 0; s < m; ++s) {
      if (s != a) dn = std::min(dn, d[a * m + s]);
    }
    total += std::max(0.0, d[a * m + a] - dn + theta);
  }
  return total / static_cast<double>(m);
}

double soft_trihard_oracle(const Tensor<double>& d, double alpha) {
  const Index m = d.dim(0);
  double total = 0.0;
  for (Index a = 0; a < m; ++a) {
    double dn = std::numeric_limits<double>::infinity();
    for (Index s = 0; s < m; ++s) {
      if (s != a) dn = std::min(dn, d[a * m + s]);
    }
    total += softplus_ref(alpha * (d[a * m + a] - dn));
  }
  return total / static_cast<double>(m);
}

double soft_triplet_oracle(const Tensor<double>& d, double alpha) {
  const Index m = d.dim(0);
  double total = 0.0;
  for (Index a = 0; a < m; ++a) {
    for (Index n = 0; n < m; ++n) {
      if (n == a) continue;
      total += softplus_ref(alpha * (d[a * m + a] - d[a * m + n]));
    }
  }
  return total / static_cast<double>(m * (m - 1));
}

Tensor<double> random_distances(Index m, Rng& rng) {
  Tensor<double> d = Tensor<double>::zeros({m, m});
  for (Index i = 0; i < d.size(); ++i) d[i] = rng.uniform(0.0, 4.0);
  return d;
}

}  // namespace

TEST_CASE("pairwise squared distances on the unit sphere") {
  Tensor<double> g = Tensor<double>::from_data({3, 2}, {1, 0, 0, 1, -1, 0});
  Tensor<double> s = Tensor<double>::from_data({3, 2}, {1, 0, 1, 0, 1, 0});
  BatchDistances<double> d = pairwise_sq_distances(g, s);
  CHECK(d.matrix[0 * 3 + 0] == doctest::Approx(0.0));  // identical unit vectors
  CHECK(d.matrix[1 * 3 + 0] == doctest::Approx(2.0));  // orthogonal
  CHECK(d.matrix[2 * 3 + 0] == doctest::Approx(4.0));  // antipodal

  Rng rng(1);
  Tensor<double> gu = l2_normalize(random_tensor({8, 5}, rng));
  Tensor<double> su = l2_normalize(random_tensor({8, 5}, rng));
  BatchDistances<double> du = pairwise_sq_distances(gu, su);
  for (Index i = 0; i < du.matrix.size(); ++i) {
    CHECK(du.matrix[i] >= 0.0);
    CHECK(du.matrix[i] <= 4.0 + 1e-9);
  }

  Tensor<double> bad = Tensor<double>::zeros({4, 5});
  CHECK_THROWS_AS(pairwise_sq_distances(gu, bad), DimensionError);
}

TEST_CASE("tracked and untracked distance routes agree bitwise") {
  Rng rng(2);
  Tensor<double> g = l2_normalize(random_tensor({6, 7}, rng));
  Tensor<double> s = l2_normalize(random_tensor({6, 7}, rng));
  BatchDistances<double> plain = pairwise_sq_distances(g, s);
  Graph<double> graph;
  BatchDistances<double> tracked = pairwise_sq_distances(graph.leaf(g), graph.leaf(s));
  for (Index i = 0; i < plain.matrix.size(); ++i) {
    CHECK(plain.matrix[i] == tracked.matrix[i]);
  }
}

TEST_CASE("hard negative mining examples") {
  // row 0: positive 0.3, negatives 0.7 and 0.4
  BatchDistances<double> d = dist_from({0.3, 0.7, 0.4,
                                        0.1, 0.2, 0.9,
                                        0.5, 0.6, 0.3}, 3);
  auto [idx, value] = hard_negative(0, d);
  CHECK(idx == 2);
  CHECK(value == doctest::Approx(0.4));

  // tie between the two negatives resolves to the lowest index
  BatchDistances<double> tie = dist_from({0.3, 0.5, 0.5,
                                          0.1, 0.2, 0.9,
                                          0.5, 0.6, 0.3}, 3);
  CHECK(hard_negative(0, tie).first == 1);

  BatchDistances<double> two = dist_from({0.3, 0.8, 0.7, 0.2}, 2);
  CHECK(hard_negative(0, two).first == 1);
  CHECK(hard_negative(1, two).first == 0);

  BatchDistances<double> one{Tensor<double>::from_data({1, 1}, {0.0})};
  CHECK_THROWS_AS(hard_negative(0, one), ContractError);
}

TEST_CASE("hard negative equals an explicit scan on 1000 random matrices") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index m = 8;
    BatchDistances<double> d{random_distances(m, rng)};
    for (Index a = 0; a < m; ++a) {
      Index best = -1;
      double best_v = std::numeric_limits<double>::infinity();
      for (Index s = 0; s < m; ++s) {
        if (s == a) continue;
        if (d.matrix[a * m + s] < best_v) {
          best_v = d.matrix[a * m + s];
          best = s;
        }
      }
      const auto got = hard_negative(a, d);
      CHECK(got.first == best);
      CHECK(got.second == best_v);
    }
  }
}

TEST_CASE("margin trihard loss examples") {
  // perfectly separated batch: positives 0, negatives 1, margin 0.5
  Tensor<double> sep = Tensor<double>::full({4, 4}, 1.0);
  for (Index a = 0; a < 4; ++a) sep[a * 4 + a] = 0.0;
  CHECK(margin_trihard_loss(BatchDistances<double>{sep}, 0.5).item() == doctest::Approx(0.0));

  // d_ap == d_an everywhere with theta 0.2 -> loss 0.2
  Tensor<double> equal = Tensor<double>::full({3, 3}, 0.7);
  CHECK(margin_trihard_loss(BatchDistances<double>{equal}, 0.2).item() ==
        doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("margin and soft-trihard equal brute-force recomputation on 1000 batches") {
  Rng rng(4);
  double worst_margin = 0.0, worst_soft = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    BatchDistances<double> d{random_distances(8, rng)};
    const double theta = rng.uniform(0.0, 0.5);
    worst_margin = std::max(worst_margin,
                            std::abs(margin_trihard_loss(d, theta).item() -
                                     margin_oracle(d.matrix, theta)));
    const double alpha = rng.uniform(1.0, 20.0);
    worst_soft = std::max(worst_soft, std::abs(soft_trihard_loss(d, alpha).item() -
                                               soft_trihard_oracle(d.matrix, alpha)));
  }
  CHECK(worst_margin < 1e-9);
  CHECK(worst_soft < 1e-9);
}

TEST_CASE("soft triplet loss examples and stability") {
  // equal positive and negative distances -> ln 2 per pair
  Tensor<double> equal = Tensor<double>::full({3, 3}, 1.3);
  CHECK(soft_triplet_loss(BatchDistances<double>{equal}, 15.0).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // gap of -1 at alpha 15 -> ln(1 + e^-15) ~ 3.06e-7
  BatchDistances<double> neg = dist_from({0.0, 1.0, 1.0, 0.0}, 2);
  CHECK(soft_triplet_loss(neg, 15.0).item() ==
        doctest::Approx(std::log1p(std::exp(-15.0))).epsilon(1e-9));
  CHECK(soft_triplet_loss(neg, 15.0).item() == doctest::Approx(3.059e-7).epsilon(1e-3));

  // gap of +10 at alpha 15 -> ~150 without overflow
  BatchDistances<double> big = dist_from({10.0, 0.0, 0.0, 10.0}, 2);
  const double loss = soft_triplet_loss(big, 15.0).item();
  CHECK(std::isfinite(loss));
  CHECK(loss == doctest::Approx(150.0).epsilon(1e-9));

  // stable form equals the naive form wherever the naive form is finite
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = rng.uniform(-30.0, 30.0);
    const double stable = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    CHECK(std::abs(stable - softplus_ref(x)) < 1e-10);
  }
}

TEST_CASE("soft trihard examples") {
  // d_ap equals the hardest negative everywhere -> ln 2
  Tensor<double> equal = Tensor<double>::full({4, 4}, 0.9);
  CHECK(soft_trihard_loss(BatchDistances<double>{equal}, 15.0).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // M=2 worked example
  BatchDistances<double> d = dist_from({0.1, 0.9, 0.8, 0.2}, 2);
  const double expected = 0.5 * (softplus_ref(15.0 * (0.1 - 0.9)) +
                                 softplus_ref(15.0 * (0.2 - 0.8)));
  CHECK(soft_trihard_loss(d, 15.0).item() == doctest::Approx(expected).epsilon(1e-12));

  // mined-minimum monotonicity: trihard >= the per-anchor term at the mined
  // negative and >= the soft form evaluated at those same hardest negatives
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    BatchDistances<double> r{random_distances(6, rng)};
    const double trihard = soft_trihard_loss(r, 15.0).item();
    double at_mined = 0.0;
    for (Index a = 0; a < 6; ++a) {
      const auto [n, dn] = hard_negative(a, r);
      const double per_anchor = softplus_ref(15.0 * (r.matrix[a * 6 + a] - dn));
      CHECK(trihard * 6.0 >= per_anchor - 1e-12);
      at_mined += per_anchor;
    }
    CHECK(trihard == doctest::Approx(at_mined / 6.0).epsilon(1e-12));
  }
}

TEST_CASE("soft trihard is monotone in the expected directions") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    BatchDistances<double> d{random_distances(5, rng)};
    const double base = soft_trihard_loss(d, 15.0).item();

    // increasing a positive distance cannot decrease the loss
    BatchDistances<double> dp{d.matrix.clone()};
    dp.matrix[1 * 5 + 1] += 0.05;
    CHECK(soft_trihard_loss(dp, 15.0).item() >= base - 1e-12);

    // increasing a negative distance cannot increase the loss
    BatchDistances<double> dn{d.matrix.clone()};
    dn.matrix[1 * 5 + 3] += 0.05;
    CHECK(soft_trihard_loss(dn, 15.0).item() <= base + 1e-12);
  }
}

TEST_CASE("loss gradients through descriptors match finite differences") {
  Rng rng(8);
  Tensor<double> g = random_tensor({5, 6}, rng);
  Tensor<double> s = random_tensor({5, 6}, rng);

  auto check_kind = [&](LossKind kind) {
    LossConfig cfg;
    cfg.kind = kind;
    cfg.alpha = 7.0;
    cfg.theta = 0.3;
    auto fwd = [&](const std::vector<Tensor<double>>& in) {
      Tensor<double> gd = l2_normalize(in[0]);
      Tensor<double> sd = l2_normalize(in[1]);
      return compute_loss(pairwise_sq_distances(gd, sd), cfg);
    };
    CHECK(max_grad_error(fwd, {g, s}, 60, rng) < 1e-4);
  };
  check_kind(LossKind::soft_trihard);
  check_kind(LossKind::soft_triplet);
  check_kind(LossKind::margin_trihard);
}

TEST_CASE("losses reject degenerate batches") {
  Tensor<double> one = Tensor<double>::from_data({1, 1}, {0.5});
  CHECK_THROWS_AS(soft_trihard_loss(BatchDistances<double>{one}, 15.0), ContractError);
  Tensor<double> rect = Tensor<double>::zeros({2, 3});
  CHECK_THROWS_AS(margin_trihard_loss(BatchDistances<double>{rect}, 0.2), ContractError);
}
