#ifndef GEOCAPS_CAPSULES_HPP_
#define GEOCAPS_CAPSULES_HPP_

#include <string>
#include <vector>

#include "geocaps/backbone.hpp"
#include "geocaps/layers.hpp"
#include "geocaps/ops.hpp"

namespace geocaps {

// Capsule stage sizes. Defaults give the full-scale head: 32 primary
// capsules of 8 conv maps each over the 7x7 feature grid, routed into 32
// output capsules of dimension 64 (descriptor length 2048).
struct CapsuleConfig {
  Index n_primary = 32;
  Index d_primary = 8;
  Index primary_kernel = 3;
  Index primary_stride = 1;
  Index n_out = 32;
  Index d_out = 64;
  Index routing_iterations = 4;

  Index descriptor_length() const { return n_out * d_out; }
};

enum class CapsLayer { primary, geo };

// Trainable scalars of one capsule head given the feature map it consumes.
inline std::int64_t capsule_param_count(const CapsuleConfig& cfg, Index in_channels,
                                        Index in_spatial) {
  const Index grid = conv_out_size(in_spatial, cfg.primary_kernel, cfg.primary_stride, 0);
  const std::int64_t conv = static_cast<std::int64_t>(cfg.n_primary) * cfg.d_primary *
                            in_channels * cfg.primary_kernel * cfg.primary_kernel;
  const std::int64_t pair_w = static_cast<std::int64_t>(grid) * grid * cfg.n_primary *
                              cfg.n_out * cfg.d_primary * cfg.d_out;
  return conv + pair_w;
}

// A grid of capsule output vectors: values[N, G, d].
template <typename Scalar>
struct PoseVectors {
  Tensor<Scalar> values;
  CapsLayer layer = CapsLayer::primary;
  Branch branch = Branch::ground;
};

// Routing bookkeeping of the last iteration: logits b[N, G_in, n_out] and the
// couplings c = softmax_j(b) actually used to form the returned outputs.
template <typename Scalar>
struct RoutingState {
  Tensor<Scalar> logits;
  Tensor<Scalar> couplings;
};

// Prediction vectors u_hat[n,g,j,:] = u[n,g,:] * W[g,j,:,:], one d_in x d_out
// matrix per (input capsule, output capsule) pair.
template <typename Scalar>
Tensor<Scalar> predict_vectors(const Tensor<Scalar>& u, const Tensor<Scalar>& w) {
  if (u.rank() != 3 || w.rank() != 4 || u.dim(1) != w.dim(0) || u.dim(2) != w.dim(2)) {
    throw DimensionError("predict_vectors: poses " + shape_str(u.shape()) +
                         " (G_in=" + (u.rank() == 3 ? std::to_string(u.dim(1)) : "?") +
                         ", d_in=" + (u.rank() == 3 ? std::to_string(u.dim(2)) : "?") +
                         ") vs weights " + shape_str(w.shape()));
  }
  const Index n = u.dim(0), gi = u.dim(1), di = u.dim(2);
  const Index j = w.dim(1), dout = w.dim(3);
  const Index jo = j * dout;
  Tensor<Scalar> y = Tensor<Scalar>::zeros({n, gi, j, dout});
  using Mat = typename Tensor<Scalar>::EigenMat;
  using StridedMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
  using ConstStridedMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
  // weights are [G][J][d_in][d_out]: one contiguous d_in x d_out block per
  // (g, j) pair, multiplied against the strided [N, d_in] pose slice
  for (Index g = 0; g < gi; ++g) {
    ConstStridedMap ug(u.data() + g * di, n, di, Eigen::OuterStride<>(gi * di));
    for (Index ji = 0; ji < j; ++ji) {
      Eigen::Map<const Mat> wgj(w.data() + (g * j + ji) * di * dout, di, dout);
      StridedMap ygj(y.raw() + (g * j + ji) * dout, n, dout, Eigen::OuterStride<>(gi * jo));
      ygj.noalias() = ug * wgj;
    }
  }
  auto* g = detail::common_graph<Scalar>({&u, &w});
  if (g && detail::any_requires_grad<Scalar>({&u, &w})) {
    auto yn = g->adopt(y, true);
    auto un = u.node();
    auto wn = w.node();
    auto uv = u.detach();
    auto wv = w.detach();
    yn->backprop = [yn = yn.get(), un, wn, uv, wv, n, gi, di, j, dout, jo]() {
      const bool need_u = un && un->requires_grad;
      const bool need_w = wn && wn->requires_grad;
      Scalar* gu = need_u ? un->grad_buffer().data() : nullptr;
      Scalar* gw = need_w ? wn->grad_buffer().data() : nullptr;
      for (Index g = 0; g < gi; ++g) {
        ConstStridedMap ug(uv.data() + g * di, n, di, Eigen::OuterStride<>(gi * di));
        for (Index ji = 0; ji < j; ++ji) {
          ConstStridedMap gy(yn->grad.data() + (g * j + ji) * dout, n, dout,
                             Eigen::OuterStride<>(gi * jo));
          Eigen::Map<const Mat> wgj(wv.data() + (g * j + ji) * di * dout, di, dout);
          if (need_u) {
            StridedMap gum(gu + g * di, n, di, Eigen::OuterStride<>(gi * di));
            gum.noalias() += gy * wgj.transpose();
          }
          if (need_w) {
            Eigen::Map<Mat> gwm(gw + (g * j + ji) * di * dout, di, dout);
            gwm.noalias() += ug.transpose() * gy;
          }
        }
      }
    };
  }
  return y;
}

// Iterative routing by agreement over prediction vectors u_hat[N, G_in, J, D]:
//   c = softmax_j(b);  s_j = sum_i c_ij * u_hat_j|i;  v_j = squash(s_j);
//   b_ij += u_hat_j|i . v_j
// Logits reset to zero on every call; gradients flow through the whole
// unrolled computation including the coupling softmax.
template <typename Scalar>
std::pair<Tensor<Scalar>, RoutingState<Scalar>> dynamic_routing(
    const Tensor<Scalar>& u_hat, Index iterations) {
  if (iterations < 1) {
    throw ContractError("dynamic_routing: iterations must be >= 1, got " +
                        std::to_string(iterations));
  }
  if (u_hat.rank() != 4) {
    throw DimensionError("dynamic_routing: expected [N,G_in,n_out,d_out], got " +
                         shape_str(u_hat.shape()));
  }
  const Index n = u_hat.dim(0), gi = u_hat.dim(1), j = u_hat.dim(2), d = u_hat.dim(3);
  Tensor<Scalar> logits = Tensor<Scalar>::zeros({n, gi, j});
  Tensor<Scalar> couplings;
  Tensor<Scalar> v;
  for (Index it = 0; it < iterations; ++it) {
    couplings = softmax(logits, 2);
    Tensor<Scalar> weighted = mul(reshape(couplings, {n, gi, j, Index{1}}), u_hat);
    Tensor<Scalar> s = reduce_sum(weighted, {1});  // [N, J, D]
    v = squash(s);
    if (it + 1 < iterations) {
      Tensor<Scalar> agreement =
          reduce_sum(mul(u_hat, reshape(v, {n, Index{1}, j, d})), {3});
      logits = add(logits, agreement);
    }
  }
  return {v, RoutingState<Scalar>{logits.detach(), couplings.detach()}};
}

// Flattens the routed capsules in capsule-major order and L2-normalizes the
// whole vector: [N, J, D] -> unit rows [N, J*D].
template <typename Scalar>
Tensor<Scalar> descriptor_from_caps(const Tensor<Scalar>& v) {
  if (v.rank() != 3) {
    throw DimensionError("descriptor_from_caps: expected [N,J,D], got " +
                         shape_str(v.shape()));
  }
  return l2_normalize(reshape(v, {v.dim(0), v.dim(1) * v.dim(2)}));
}

// PrimaryCaps + GeoCaps over a backbone feature map. The primary stage is a
// plain convolution producing n_primary * d_primary maps; its activations are
// regrouped into pose vectors and squashed, then routed into the GeoCaps
// outputs.
template <typename Scalar>
class CapsuleHead {
 public:
  CapsuleHead() = default;

  CapsuleHead(const CapsuleConfig& cfg, Index in_channels, Index in_spatial, Rng& rng)
      : cfg_(cfg) {
    if (in_spatial < cfg.primary_kernel) {
      throw DimensionError("capsule head: feature map " + std::to_string(in_spatial) +
                           "x" + std::to_string(in_spatial) + " smaller than primary kernel " +
                           std::to_string(cfg.primary_kernel));
    }
    primary_conv_ = ConvLayer<Scalar>(cfg.n_primary * cfg.d_primary, in_channels,
                                      cfg.primary_kernel, cfg.primary_kernel,
                                      cfg.primary_stride, Padding::valid, rng);
    grid_ = conv_out_size(in_spatial, cfg.primary_kernel, cfg.primary_stride, 0);
    const Index g_in = grid_ * grid_ * cfg.n_primary;
    // fan-in-scaled init, like the conv/affine layers; a much smaller scale
    // leaves the routed outputs so short that normalizing the descriptor
    // amplifies their gradients and training collapses the embedding
    const double w_std = std::sqrt(2.0 / static_cast<double>(cfg.d_primary));
    w_ = Tensor<Scalar>::gaussian({g_in, cfg.n_out, cfg.d_primary, cfg.d_out}, rng, w_std);
  }

  // [N, C, h, w] -> squashed pose vectors [N, h'*w'*n_primary, d_primary].
  PoseVectors<Scalar> primary_forward(const Context<Scalar>& ctx,
                                      const FeatureMap<Scalar>& f) const {
    Tensor<Scalar> conv = primary_conv_.forward(ctx, f.values);
    const Index n = conv.dim(0), hp = conv.dim(2), wp = conv.dim(3);
    Tensor<Scalar> grouped =
        reshape(conv, {n, cfg_.n_primary, cfg_.d_primary, hp, wp});
    Tensor<Scalar> arranged = permute(grouped, {0, 3, 4, 1, 2});
    Tensor<Scalar> poses =
        reshape(arranged, {n, hp * wp * cfg_.n_primary, cfg_.d_primary});
    return PoseVectors<Scalar>{squash(poses), CapsLayer::primary, f.branch};
  }

  // Full capsule stack; returns the routed GeoCaps poses [N, n_out, d_out].
  std::pair<PoseVectors<Scalar>, RoutingState<Scalar>> forward(
      const Context<Scalar>& ctx, const FeatureMap<Scalar>& f) const {
    PoseVectors<Scalar> primary = primary_forward(ctx, f);
    Tensor<Scalar> u_hat = predict_vectors(primary.values, ctx.track(w_));
    auto [v, state] = dynamic_routing(u_hat, cfg_.routing_iterations);
    return {PoseVectors<Scalar>{v, CapsLayer::geo, f.branch}, state};
  }

  const CapsuleConfig& config() const { return cfg_; }
  Index grid() const { return grid_; }
  Index pose_count() const { return grid_ * grid_ * cfg_.n_primary; }
  const Tensor<Scalar>& pair_weights() const { return w_; }
  const Tensor<Scalar>& primary_kernel() const { return primary_conv_.kernel(); }

  std::int64_t param_count() const { return primary_conv_.param_count() + w_.size(); }

  void collect_params(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) {
    primary_conv_.collect_params(prefix + ".primary", out);
    out.push_back({prefix + ".pair_weights", w_, true});
  }

 private:
  CapsuleConfig cfg_;
  ConvLayer<Scalar> primary_conv_;
  Tensor<Scalar> w_;  // [G_in, n_out, d_primary, d_out]
  Index grid_ = 0;
};

}  // namespace geocaps

#endif  // GEOCAPS_CAPSULES_HPP_
