#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdlib>

#include "geocaps/eval.hpp"
#include "geocaps/objective.hpp"
#include "geocaps/runner.hpp"
#include "test_util.hpp"

using namespace geocaps;
using testutil::random_tensor;

namespace {

// Sort-based rank oracle: position of the true match among strictly closer
// items (ties count as not closer).
int sort_rank_oracle(const std::vector<double>& row, Index true_index) {
  std::vector<double> sorted = row;
  std::sort(sorted.begin(), sorted.end());
  const double d_true = row[static_cast<std::size_t>(true_index)];
  const auto lower = std::lower_bound(sorted.begin(), sorted.end(), d_true);
  return static_cast<int>(lower - sorted.begin()) + 1;
}

Tensor<double> random_unit_rows(Index n, Index d, Rng& rng) {
  return l2_normalize(random_tensor({n, d}, rng));
}

}  // namespace

TEST_CASE("rank examples and tie handling") {
  // true match at distance 0, everything else farther -> rank 1
  Tensor<double> gallery = Tensor<double>::from_data({3, 2}, {1, 0, 0, 1, -1, 0});
  Tensor<double> query = Tensor<double>::from_data({2}, {1, 0});
  CHECK(rank_of_true_match(query, gallery, 0) == 1);

  // all equidistant -> optimistic rank 1
  Tensor<double> equi = Tensor<double>::from_data({4, 1}, {2.0, 2.0, 2.0, 2.0});
  Tensor<double> q = Tensor<double>::from_data({1}, {0.0});
  CHECK(rank_of_true_match(q, equi, 2) == 1);

  CHECK_THROWS_AS(rank_of_true_match(q, equi, 9), ContractError);
}

TEST_CASE("rank equals the full-sort oracle on random galleries") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 100, d = 8;
    Tensor<double> gallery = random_tensor({n, d}, rng);
    Tensor<double> query = random_tensor({d}, rng);
    std::vector<double> row(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (Index k = 0; k < d; ++k) {
        const double dv = query[k] - gallery[i * d + k];
        acc += dv * dv;
      }
      row[static_cast<std::size_t>(i)] = acc;
    }
    for (Index t = 0; t < n; t += 17) {
      CHECK(rank_of_true_match(query, gallery, t) == sort_rank_oracle(row, t));
    }
  }
}

TEST_CASE("recall_at_k examples") {
  std::vector<int> perfect{1, 1, 1, 1};
  for (int k : {1, 2, 5, 100}) CHECK(recall_at_k(perfect, k) == 1.0);

  std::vector<int> ranks{1, 5, 10};
  CHECK(recall_at_k(ranks, 5) == doctest::Approx(2.0 / 3.0));
  CHECK(recall_at_k(ranks, 10) == 1.0);  // K = gallery size covers everything
  CHECK_THROWS_AS(recall_at_k(ranks, 0), ContractError);
}

TEST_CASE("top-percent K uses the ceiling rule") {
  CHECK(top_percent_k(8884, 1.0) == 89);
  CHECK(top_percent_k(100, 1.0) == 1);
  CHECK(top_percent_k(1000, 1.0) == 10);
  CHECK(top_percent_k(505, 10.0) == 51);
  CHECK_THROWS_AS(top_percent_k(100, 0.0), ContractError);
}

TEST_CASE("random embeddings score chance-level recall at top 1%") {
  Rng rng(72);
  const Index n = 1000, d = 16;
  int hits = 0, total = 0;
  for (int block = 0; block < 10; ++block) {
    Tensor<double> queries = random_unit_rows(n, d, rng);
    Tensor<double> gallery = random_unit_rows(n, d, rng);
    RecallReport report = recall_curve(queries, gallery, {}, {1.0});
    for (int r : report.ranks) {
      if (r <= 10) ++hits;  // top 1% of 1000
      ++total;
    }
  }
  const double recall = static_cast<double>(hits) / total;
  CHECK(total == 10000);
  CHECK(recall == doctest::Approx(0.01).epsilon(0.5));  // 1% +- 0.5% absolute
  CHECK(std::abs(recall - 0.01) < 0.005);
}

TEST_CASE("recall_curve on identical descriptor sets is perfect") {
  Rng rng(73);
  Tensor<double> desc = random_unit_rows(40, 6, rng);
  RecallReport report = recall_curve(desc, desc, {1, 5}, {1.0, 10.0});
  for (int r : report.ranks) CHECK(r == 1);
  for (const auto& [k, v] : report.recall_at_k) CHECK(v == 1.0);
}

TEST_CASE("recall curve is non-decreasing in K") {
  Rng rng(74);
  Tensor<double> g = random_unit_rows(60, 5, rng);
  Tensor<double> s = random_unit_rows(60, 5, rng);
  std::vector<int> ks;
  for (int k = 1; k <= 60; ++k) ks.push_back(k);
  RecallReport report = recall_curve(g, s, ks, {});
  for (std::size_t i = 1; i < report.recall_at_k.size(); ++i) {
    CHECK(report.recall_at_k[i].second >= report.recall_at_k[i - 1].second);
  }
  CHECK(report.recall_at_k.back().second == 1.0);
}

TEST_CASE("recall monotonicity property on random rank lists") {
  Rng rng(75);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_index(50));
    std::vector<int> ranks;
    for (int i = 0; i < n; ++i) ranks.push_back(1 + static_cast<int>(rng.uniform_index(100)));
    const int k1 = 1 + static_cast<int>(rng.uniform_index(100));
    const int k2 = k1 + static_cast<int>(rng.uniform_index(20));
    CHECK(recall_at_k(ranks, k1) <= recall_at_k(ranks, k2));
  }
}

TEST_CASE("matrix ranks equal the sort oracle on random 500x500 matrices") {
  Rng rng(76);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 500;
    Tensor<double> dist = Tensor<double>::zeros({n, n});
    for (Index i = 0; i < dist.size(); ++i) dist[i] = rng.uniform(0.0, 4.0);
    const auto ranks = ranks_from_distance_matrix(dist);
    for (Index a = 0; a < n; a += 83) {
      std::vector<double> row(dist.data() + a * n, dist.data() + (a + 1) * n);
      CHECK(ranks[static_cast<std::size_t>(a)] == sort_rank_oracle(row, a));
    }
  }
}

TEST_CASE("matrix path and descriptor path agree exactly") {
  Rng rng(77);
  Tensor<double> g = random_unit_rows(30, 7, rng);
  Tensor<double> s = random_unit_rows(30, 7, rng);
  RecallReport from_desc = recall_curve(g, s, {1, 3}, {10.0});
  BatchDistances<double> d = pairwise_sq_distances(g, s);
  const auto from_matrix = ranks_from_distance_matrix(d.matrix);
  CHECK(from_desc.ranks == from_matrix);
}

TEST_CASE("reported numbers are independent of the worker count") {
  Rng rng(78);
  Tensor<double> g = random_unit_rows(64, 9, rng);
  Tensor<double> s = random_unit_rows(64, 9, rng);
  setenv("GEOCAPS_THREADS", "1", 1);
  RecallReport serial = recall_curve(g, s, {1, 5}, {1.0});
  setenv("GEOCAPS_THREADS", "4", 1);
  RecallReport parallel = recall_curve(g, s, {1, 5}, {1.0});
  unsetenv("GEOCAPS_THREADS");
  CHECK(serial.ranks == parallel.ranks);
  CHECK(serial.recall_at_k == parallel.recall_at_k);
}

TEST_CASE("untrained model scores chance-level recall@top1% on a 200-pair gallery") {
  SyntheticSpec spec;
  spec.n_locations = 200;
  spec.image_size = 16;
  spec.latent_dim = 8;
  spec.seed = 31;
  PairDataset gallery = generate_synthetic_pairs(spec);

  ModelConfig mc;
  mc.backbone.input_h = mc.backbone.input_w = 16;
  mc.backbone.width_scale = 1.0 / 16.0;
  mc.backbone.block_counts = {1, 1, 1, 1};
  mc.capsules.n_primary = 2;
  mc.capsules.d_primary = 4;
  mc.capsules.primary_kernel = 1;
  mc.capsules.n_out = 2;
  mc.capsules.d_out = 8;
  mc.capsules.routing_iterations = 2;

  // chance for K = ceil(1% of 200) = 2 is 2/200 = 1%
  double total = 0.0;
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    mc.seed = seed;
    Model<float> model(mc);
    DescriptorBatch<float> g = embed_dataset(model, gallery, Branch::ground);
    DescriptorBatch<float> s = embed_dataset(model, gallery, Branch::satellite);
    RecallReport r = recall_curve(g.values, s.values, {}, {1.0});
    total += r.recall_at_percent[0].second;
  }
  const double mean_recall = total / 3.0;
  CHECK(mean_recall >= 0.0);
  CHECK(mean_recall <= 0.02);  // 1% +- 1%
}

TEST_CASE("recall_curve validates matched ordering") {
  Rng rng(79);
  Tensor<double> g = random_unit_rows(8, 4, rng);
  Tensor<double> s = random_unit_rows(9, 4, rng);
  CHECK_THROWS_AS(recall_curve(g, s, {1}), DimensionError);
}
