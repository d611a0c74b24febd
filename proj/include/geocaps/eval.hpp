#ifndef GEOCAPS_EVAL_HPP_
#define GEOCAPS_EVAL_HPP_

#include <cmath>
#include <utility>
#include <vector>

#include "geocaps/parallel.hpp"
#include "geocaps/tensor.hpp"

namespace geocaps {

// Retrieval metrics. Ranks are 1-based: rank = 1 + number of gallery items
// strictly closer than the true match, so ties resolve optimistically (with
// continuous descriptors ties are measure-zero).
struct RecallReport {
  int n_queries = 0;
  int gallery_size = 0;
  std::vector<int> ranks;
  std::vector<std::pair<int, double>> recall_at_k;          // (K, fraction)
  std::vector<std::pair<double, double>> recall_at_percent;  // (p, fraction)
};

namespace detail {

// Squared Euclidean distance accumulated in coordinate order -- the same
// order as the training distance matrix, so both paths agree exactly.
template <typename Scalar>
Scalar sq_distance(const Scalar* a, const Scalar* b, Index d) {
  Scalar acc = Scalar(0);
  for (Index i = 0; i < d; ++i) {
    const Scalar dv = a[i] - b[i];
    acc += dv * dv;
  }
  return acc;
}

}  // namespace detail

template <typename Scalar>
int rank_of_true_match(const Tensor<Scalar>& query, const Tensor<Scalar>& gallery,
                       Index true_index) {
  if (gallery.rank() != 2 || gallery.dim(0) < 1) {
    throw ContractError("rank_of_true_match: gallery must be a non-empty [N,D] tensor");
  }
  const Index n = gallery.dim(0), d = gallery.dim(1);
  if (query.size() != d) {
    throw DimensionError("rank_of_true_match: query length " + std::to_string(query.size()) +
                         " vs gallery dim " + std::to_string(d));
  }
  if (true_index < 0 || true_index >= n) {
    throw ContractError("rank_of_true_match: true_index " + std::to_string(true_index) +
                        " outside gallery of " + std::to_string(n));
  }
  const Scalar d_true = detail::sq_distance(query.data(), gallery.data() + true_index * d, d);
  int closer = 0;
  for (Index i = 0; i < n; ++i) {
    if (detail::sq_distance(query.data(), gallery.data() + i * d, d) < d_true) ++closer;
  }
  return 1 + closer;
}

// Ranks for a precomputed distance matrix whose diagonal holds the true
// matches.
template <typename Scalar>
std::vector<int> ranks_from_distance_matrix(const Tensor<Scalar>& dist) {
  if (dist.rank() != 2) throw ContractError("ranks_from_distance_matrix: need [Q,N]");
  const Index q = dist.dim(0), n = dist.dim(1);
  if (q > n) throw ContractError("ranks_from_distance_matrix: more queries than gallery items");
  std::vector<int> ranks(static_cast<std::size_t>(q));
  for (Index a = 0; a < q; ++a) {
    const Scalar* row = dist.data() + a * n;
    const Scalar d_true = row[a];
    int closer = 0;
    for (Index i = 0; i < n; ++i) {
      if (row[i] < d_true) ++closer;
    }
    ranks[static_cast<std::size_t>(a)] = 1 + closer;
  }
  return ranks;
}

inline double recall_at_k(const std::vector<int>& ranks, int k) {
  if (k < 1) throw ContractError("recall_at_k: K must be >= 1");
  if (ranks.empty()) return 0.0;
  int hit = 0;
  for (int r : ranks) {
    if (r <= k) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

// K for recall@top-p%: ceil(p/100 * gallery_size).
inline int top_percent_k(int gallery_size, double p) {
  if (p <= 0.0 || p > 100.0) throw ContractError("top percent must be in (0, 100]");
  return static_cast<int>(std::ceil(p / 100.0 * gallery_size));
}

inline double recall_at_top_percent(const std::vector<int>& ranks, int gallery_size,
                                    double p) {
  return recall_at_k(ranks, top_percent_k(gallery_size, p));
}

// Full retrieval report for matched descriptor sets (query i's true match is
// gallery item i). The per-query distance rows may be computed in parallel;
// each row's reduction order is fixed, so the report never depends on the
// thread count.
template <typename Scalar>
RecallReport recall_curve(const Tensor<Scalar>& ground, const Tensor<Scalar>& satellite,
                          const std::vector<int>& k_list,
                          const std::vector<double>& percent_list = {1.0, 10.0}) {
  if (ground.rank() != 2 || satellite.rank() != 2 || ground.dim(0) != satellite.dim(0) ||
      ground.dim(1) != satellite.dim(1)) {
    throw DimensionError("recall_curve: descriptor sets " + shape_str(ground.shape()) +
                         " vs " + shape_str(satellite.shape()) + " must match");
  }
  const Index n = ground.dim(0), d = ground.dim(1);
  RecallReport report;
  report.n_queries = static_cast<int>(n);
  report.gallery_size = static_cast<int>(n);
  report.ranks.assign(static_cast<std::size_t>(n), 0);
  parallel_for(n, [&](std::int64_t a) {
    const Scalar* q = ground.data() + a * d;
    const Scalar d_true = detail::sq_distance(q, satellite.data() + a * d, d);
    int closer = 0;
    for (Index i = 0; i < n; ++i) {
      if (detail::sq_distance(q, satellite.data() + i * d, d) < d_true) ++closer;
    }
    report.ranks[static_cast<std::size_t>(a)] = 1 + closer;
  });
  for (int k : k_list) {
    report.recall_at_k.emplace_back(k, recall_at_k(report.ranks, k));
  }
  for (double p : percent_list) {
    report.recall_at_percent.emplace_back(
        p, recall_at_top_percent(report.ranks, report.gallery_size, p));
  }
  return report;
}

}  // namespace geocaps

#endif  // GEOCAPS_EVAL_HPP_
