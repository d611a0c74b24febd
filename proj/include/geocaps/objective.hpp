#ifndef GEOCAPS_OBJECTIVE_HPP_
#define GEOCAPS_OBJECTIVE_HPP_

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "geocaps/ops.hpp"

namespace geocaps {

enum class LossKind { margin_trihard, soft_triplet, soft_trihard };

struct LossConfig {
  LossKind kind = LossKind::soft_trihard;
  double alpha = 15.0;  // soft-margin sharpness
  double theta = 0.2;   // margin for the hinge form
};

// M x M matrix of squared Euclidean distances between ground and satellite
// descriptors; D[a][a] is the positive pair, the rest of row a is the
// in-batch negative set.
template <typename Scalar>
struct BatchDistances {
  Tensor<Scalar> matrix;

  Index batch() const { return matrix.dim(0); }
};

namespace detail {

template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace detail

// D[a][s] = |G[a] - S[s]|^2, summed in coordinate order so the matrix route
// and any per-row recomputation agree bitwise. For unit descriptors this
// equals 2 - 2 * dot and lies in [0, 4].
template <typename Scalar>
BatchDistances<Scalar> pairwise_sq_distances(const Tensor<Scalar>& g,
                                             const Tensor<Scalar>& s) {
  if (g.rank() != 2 || s.rank() != 2 || g.dim(0) != s.dim(0) || g.dim(1) != s.dim(1)) {
    throw DimensionError("pairwise_sq_distances: ground " + shape_str(g.shape()) +
                         " vs satellite " + shape_str(s.shape()));
  }
  const Index m = g.dim(0), d = g.dim(1);
  if (g.tracked() || s.tracked()) {
    Tensor<Scalar> ga = reshape(g, {m, Index{1}, d});
    Tensor<Scalar> sa = reshape(s, {Index{1}, m, d});
    Tensor<Scalar> diff = sub(ga, sa);
    return BatchDistances<Scalar>{reduce_sum(mul(diff, diff), {2})};
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros({m, m});
  Scalar* po = out.raw();
  for (Index a = 0; a < m; ++a) {
    const Scalar* pg = g.data() + a * d;
    for (Index b = 0; b < m; ++b) {
      const Scalar* ps = s.data() + b * d;
      Scalar acc = Scalar(0);
      for (Index i = 0; i < d; ++i) {
        const Scalar dv = pg[i] - ps[i];
        acc += dv * dv;
      }
      po[a * m + b] = acc;
    }
  }
  return BatchDistances<Scalar>{out};
}

// Closest in-batch negative for anchor a: argmin over s != a of D[a][s],
// ties broken toward the lowest index.
template <typename Scalar>
std::pair<Index, Scalar> hard_negative(Index a, const BatchDistances<Scalar>& dist) {
  const Index m = dist.batch();
  if (m < 2) {
    throw ContractError("hard_negative: batch of " + std::to_string(m) +
                        " has no negatives");
  }
  const Scalar* row = dist.matrix.data() + a * m;
  Index best = a == 0 ? 1 : 0;
  for (Index s = 0; s < m; ++s) {
    if (s == a) continue;
    if (row[s] < row[best]) best = s;
  }
  return {best, row[best]};
}

namespace detail {

template <typename Scalar>
void check_loss_input(const Tensor<Scalar>& d) {
  if (d.rank() != 2 || d.dim(0) != d.dim(1) || d.dim(0) < 2) {
    throw ContractError("loss: expected square distance matrix with M >= 2, got " +
                        shape_str(d.shape()));
  }
}

// Mined hardest negatives per anchor, computed on the detached values; the
// selected entries re-enter the differentiable path through the loss rule.
template <typename Scalar>
std::vector<Index> mine_hard_negatives(const Tensor<Scalar>& d) {
  const Index m = d.dim(0);
  std::vector<Index> mined(static_cast<std::size_t>(m));
  for (Index a = 0; a < m; ++a) {
    const Scalar* row = d.data() + a * m;
    Index best = a == 0 ? 1 : 0;
    for (Index s = 0; s < m; ++s) {
      if (s == a) continue;
      if (row[s] < row[best]) best = s;
    }
    mined[static_cast<std::size_t>(a)] = best;
  }
  return mined;
}

}  // namespace detail

// Hinge triplet loss with batch-hard mining:
//   L = (1/M) sum_a max(0, d_ap - min_n d_an + theta)
template <typename Scalar>
Tensor<Scalar> margin_trihard_loss(const BatchDistances<Scalar>& dist, Scalar theta) {
  const Tensor<Scalar>& d = dist.matrix;
  detail::check_loss_input(d);
  const Index m = d.dim(0);
  const auto mined = detail::mine_hard_negatives(d);
  Scalar total = Scalar(0);
  std::vector<std::uint8_t> active(static_cast<std::size_t>(m), 0);
  for (Index a = 0; a < m; ++a) {
    const Scalar gap = d[a * m + a] - d[a * m + mined[static_cast<std::size_t>(a)]] + theta;
    if (gap > Scalar(0)) {
      total += gap;
      active[static_cast<std::size_t>(a)] = 1;
    }
  }
  Tensor<Scalar> y = Tensor<Scalar>::scalar(total / static_cast<Scalar>(m));
  if (d.requires_grad()) {
    auto yn = d.graph()->adopt(y, true);
    auto dn = d.node();
    yn->backprop = [yn = yn.get(), dn, mined, active, m]() {
      const Scalar g = yn->grad[0] / static_cast<Scalar>(m);
      auto& gd = dn->grad_buffer();
      for (Index a = 0; a < m; ++a) {
        if (!active[static_cast<std::size_t>(a)]) continue;
        gd[static_cast<std::size_t>(a * m + a)] += g;
        gd[static_cast<std::size_t>(a * m + mined[static_cast<std::size_t>(a)])] -= g;
      }
    };
  }
  return y;
}

// Weighted soft-margin triplet loss without mining, averaged over every
// in-batch (anchor, negative) pair:
//   L = (1/(M(M-1))) sum_a sum_{n != a} ln(1 + exp(alpha (d_ap - d_an)))
template <typename Scalar>
Tensor<Scalar> soft_triplet_loss(const BatchDistances<Scalar>& dist, Scalar alpha) {
  const Tensor<Scalar>& d = dist.matrix;
  detail::check_loss_input(d);
  const Index m = d.dim(0);
  Scalar total = Scalar(0);
  for (Index a = 0; a < m; ++a) {
    const Scalar dp = d[a * m + a];
    for (Index n = 0; n < m; ++n) {
      if (n == a) continue;
      total += detail::softplus(alpha * (dp - d[a * m + n]));
    }
  }
  const Scalar count = static_cast<Scalar>(m) * static_cast<Scalar>(m - 1);
  Tensor<Scalar> y = Tensor<Scalar>::scalar(total / count);
  if (d.requires_grad()) {
    auto yn = d.graph()->adopt(y, true);
    auto dn = d.node();
    auto dv = d.detach();
    yn->backprop = [yn = yn.get(), dn, dv, m, alpha, count]() {
      const Scalar g = yn->grad[0] / count;
      auto& gd = dn->grad_buffer();
      for (Index a = 0; a < m; ++a) {
        const Scalar dp = dv[a * m + a];
        for (Index n = 0; n < m; ++n) {
          if (n == a) continue;
          const Scalar w = detail::sigmoid(alpha * (dp - dv[a * m + n])) * alpha * g;
          gd[static_cast<std::size_t>(a * m + a)] += w;
          gd[static_cast<std::size_t>(a * m + n)] -= w;
        }
      }
    };
  }
  return y;
}

// Weighted soft-margin triplet loss on the mined hardest negative:
//   L = (1/M) sum_a ln(1 + exp(alpha (d_ap - min_n d_an)))
template <typename Scalar>
Tensor<Scalar> soft_trihard_loss(const BatchDistances<Scalar>& dist, Scalar alpha) {
  const Tensor<Scalar>& d = dist.matrix;
  detail::check_loss_input(d);
  const Index m = d.dim(0);
  const auto mined = detail::mine_hard_negatives(d);
  Scalar total = Scalar(0);
  for (Index a = 0; a < m; ++a) {
    const Scalar gap = d[a * m + a] - d[a * m + mined[static_cast<std::size_t>(a)]];
    total += detail::softplus(alpha * gap);
  }
  Tensor<Scalar> y = Tensor<Scalar>::scalar(total / static_cast<Scalar>(m));
  if (d.requires_grad()) {
    auto yn = d.graph()->adopt(y, true);
    auto dn = d.node();
    auto dv = d.detach();
    yn->backprop = [yn = yn.get(), dn, dv, mined, m, alpha]() {
      const Scalar g = yn->grad[0] / static_cast<Scalar>(m);
      auto& gd = dn->grad_buffer();
      for (Index a = 0; a < m; ++a) {
        const Index n = mined[static_cast<std::size_t>(a)];
        const Scalar w =
            detail::sigmoid(alpha * (dv[a * m + a] - dv[a * m + n])) * alpha * g;
        gd[static_cast<std::size_t>(a * m + a)] += w;
        gd[static_cast<std::size_t>(a * m + n)] -= w;
      }
    };
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> compute_loss(const BatchDistances<Scalar>& dist, const LossConfig& cfg) {
  switch (cfg.kind) {
    case LossKind::margin_trihard:
      return margin_trihard_loss(dist, static_cast<Scalar>(cfg.theta));
    case LossKind::soft_triplet:
      return soft_triplet_loss(dist, static_cast<Scalar>(cfg.alpha));
    case LossKind::soft_trihard:
    default:
      return soft_trihard_loss(dist, static_cast<Scalar>(cfg.alpha));
  }
}

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::margin_trihard: return "margin_trihard";
    case LossKind::soft_triplet: return "soft_triplet";
    case LossKind::soft_trihard: default: return "soft_trihard";
  }
}

}  // namespace geocaps

#endif  // GEOCAPS_OBJECTIVE_HPP_
