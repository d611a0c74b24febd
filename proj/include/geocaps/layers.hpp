#ifndef GEOCAPS_LAYERS_HPP_
#define GEOCAPS_LAYERS_HPP_

#include <string>
#include <vector>

#include "geocaps/ops.hpp"
#include "geocaps/tensor.hpp"

namespace geocaps {

// Per-forward execution context. A null graph runs the ops untracked (pure
// inference); mode switches batch-norm between batch and running statistics.
template <typename Scalar>
struct Context {
  Graph<Scalar>* graph = nullptr;
  Mode mode = Mode::eval;

  // Parameters enter the graph as memoized leaves, so a buffer shared by two
  // branches becomes a single leaf whose gradient accumulates from both.
  Tensor<Scalar> track(const Tensor<Scalar>& param) const {
    return graph ? graph->leaf(param, true) : param;
  }
};

template <typename Scalar>
struct NamedParam {
  std::string name;
  Tensor<Scalar> value;
  bool trainable = true;  // running stats are saved but never optimized
};

template <typename Scalar>
class ConvLayer {
 public:
  ConvLayer() = default;

  ConvLayer(Index out_ch, Index in_ch, Index kh, Index kw, Index stride, Padding pad,
            Rng& rng)
      : stride_(stride), pad_(pad) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_ch * kh * kw));
    kernel_ = Tensor<Scalar>::gaussian({out_ch, in_ch, kh, kw}, rng, std_dev);
  }

  Tensor<Scalar> forward(const Context<Scalar>& ctx, const Tensor<Scalar>& x) const {
    return conv2d(x, ctx.track(kernel_), stride_, pad_);
  }

  const Tensor<Scalar>& kernel() const { return kernel_; }
  Index stride() const { return stride_; }
  Index param_count() const { return kernel_.size(); }

  void collect_params(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) {
    out.push_back({prefix + ".kernel", kernel_, true});
  }

 private:
  Tensor<Scalar> kernel_;
  Index stride_ = 1;
  Padding pad_ = Padding::valid;
};

template <typename Scalar>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;

  explicit BatchNormLayer(Index channels, double momentum = 0.9, double eps = 1e-5)
      : gamma_(Tensor<Scalar>::full({channels}, Scalar(1))),
        beta_(Tensor<Scalar>::zeros({channels})),
        running_mean_(Tensor<Scalar>::zeros({channels})),
        running_var_(Tensor<Scalar>::full({channels}, Scalar(1))),
        momentum_(momentum),
        eps_(eps) {}

  Tensor<Scalar> forward(const Context<Scalar>& ctx, const Tensor<Scalar>& x) {
    return batch_norm(x, ctx.track(gamma_), ctx.track(beta_), running_mean_,
                      running_var_, ctx.mode, momentum_, eps_);
  }

  Index param_count() const { return gamma_.size() + beta_.size(); }

  void collect_params(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) {
    out.push_back({prefix + ".gamma", gamma_, true});
    out.push_back({prefix + ".beta", beta_, true});
    out.push_back({prefix + ".running_mean", running_mean_, false});
    out.push_back({prefix + ".running_var", running_var_, false});
  }

 private:
  Tensor<Scalar> gamma_, beta_, running_mean_, running_var_;
  double momentum_ = 0.9;
  double eps_ = 1e-5;
};

template <typename Scalar>
class AffineLayer {
 public:
  AffineLayer() = default;

  AffineLayer(Index in, Index out, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    w_ = Tensor<Scalar>::gaussian({in, out}, rng, std_dev);
    b_ = Tensor<Scalar>::zeros({out});
  }

  Tensor<Scalar> forward(const Context<Scalar>& ctx, const Tensor<Scalar>& x) const {
    return affine(x, ctx.track(w_), ctx.track(b_));
  }

  Index param_count() const { return w_.size() + b_.size(); }

  void collect_params(const std::string& prefix, std::vector<NamedParam<Scalar>>& out) {
    out.push_back({prefix + ".weight", w_, true});
    out.push_back({prefix + ".bias", b_, true});
  }

 private:
  Tensor<Scalar> w_, b_;
};

}  // namespace geocaps

#endif  // GEOCAPS_LAYERS_HPP_
