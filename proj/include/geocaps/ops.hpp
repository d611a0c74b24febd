#ifndef GEOCAPS_OPS_HPP_
#define GEOCAPS_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "geocaps/tensor.hpp"

// Differentiable primitives. Each op computes its value eagerly and, when an
// operand requires gradients, appends a node with the local backward rule to
// that operand's graph. Reduction orders are fixed so repeated runs are
// bit-identical.
namespace geocaps {

enum class Padding { valid, same };
enum class Mode { train, eval };

namespace detail {

// Odometer-style broadcast iteration plan for binary elementwise ops.
struct BcastPlan {
  Shape out;
  std::vector<Index> stride_a;
  std::vector<Index> stride_b;
  Index numel = 0;
};

inline BcastPlan make_bcast_plan(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  BcastPlan plan;
  plan.out.resize(rank);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  // materialize row-major strides, aligned at the trailing dims
  std::vector<Index> sa(rank, 1), sb(rank, 1), da(rank, 1), db(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    da[i] = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    db[i] = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
  }
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = (i + 1 < rank) ? sa[i + 1] * da[i + 1] : 1;
    sb[i] = (i + 1 < rank) ? sb[i + 1] * db[i + 1] : 1;
  }
  for (std::size_t i = 0; i < rank; ++i) {
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcast-compatible");
    }
    plan.out[i] = std::max(da[i], db[i]);
    plan.stride_a[i] = da[i] == 1 ? 0 : sa[i];
    plan.stride_b[i] = db[i] == 1 ? 0 : sb[i];
  }
  plan.numel = shape_numel(plan.out);
  return plan;
}

// Calls visit(out_flat, a_flat, b_flat) over every output position.
template <typename Visit>
void for_each_bcast(const BcastPlan& plan, Visit&& visit) {
  const std::size_t rank = plan.out.size();
  if (rank == 0) {
    visit(Index{0}, Index{0}, Index{0});
    return;
  }
  std::vector<Index> idx(rank, 0);
  Index oa = 0, ob = 0;
  for (Index flat = 0; flat < plan.numel; ++flat) {
    visit(flat, oa, ob);
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      oa += plan.stride_a[i];
      ob += plan.stride_b[i];
      if (idx[i] < plan.out[i]) break;
      oa -= plan.stride_a[i] * plan.out[i];
      ob -= plan.stride_b[i] * plan.out[i];
      idx[i] = 0;
    }
  }
}

template <typename Scalar>
void accumulate_flat(detail::Node<Scalar>* node, const std::vector<Scalar>& g) {
  auto& buf = node->grad_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with numpy-style broadcasting.
// ---------------------------------------------------------------------------

template <typename Scalar, typename Combine, typename BackA, typename BackB>
Tensor<Scalar> binary_bcast_op(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                               Combine&& combine, BackA&& back_a, BackB&& back_b) {
  const auto plan = detail::make_bcast_plan(a.shape(), b.shape());
  Tensor<Scalar> y = Tensor<Scalar>::zeros(plan.out);
  {
    const Scalar* pa = a.data();
    const Scalar* pb = b.data();
    Scalar* py = y.raw();
    detail::for_each_bcast(plan, [&](Index o, Index ia, Index ib) {
      py[o] = combine(pa[ia], pb[ib]);
    });
  }
  auto* g = detail::common_graph<Scalar>({&a, &b});
  if (g && detail::any_requires_grad<Scalar>({&a, &b})) {
    auto yn = g->adopt(y, true);
    auto an = a.node();
    auto bn = b.node();
    auto av = a.detach();
    auto bv = b.detach();
    yn->backprop = [yn = yn.get(), an, bn, av, bv, plan, back_a, back_b]() {
      const auto& gy = yn->grad;
      const Scalar* pa = av.data();
      const Scalar* pb = bv.data();
      Scalar* ga = (an && an->requires_grad) ? an->grad_buffer().data() : nullptr;
      Scalar* gb = (bn && bn->requires_grad) ? bn->grad_buffer().data() : nullptr;
      detail::for_each_bcast(plan, [&](Index o, Index ia, Index ib) {
        if (ga) ga[ia] += back_a(gy[static_cast<std::size_t>(o)], pa[ia], pb[ib]);
        if (gb) gb[ib] += back_b(gy[static_cast<std::size_t>(o)], pa[ia], pb[ib]);
      });
    };
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary_bcast_op(
      a, b, [](Scalar x, Scalar y) { return x + y; },
      [](Scalar g, Scalar, Scalar) { return g; },
      [](Scalar g, Scalar, Scalar) { return g; });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary_bcast_op(
      a, b, [](Scalar x, Scalar y) { return x - y; },
      [](Scalar g, Scalar, Scalar) { return g; },
      [](Scalar g, Scalar, Scalar) { return -g; });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return binary_bcast_op(
      a, b, [](Scalar x, Scalar y) { return x * y; },
      [](Scalar g, Scalar, Scalar y) { return g * y; },
      [](Scalar g, Scalar x, Scalar) { return g * x; });
}

// y = c * x for a plain constant c.
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar c) {
  Tensor<Scalar> y = Tensor<Scalar>::zeros(x.shape());
  y.flat_mut() = x.flat() * c;
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    yn->backprop = [yn = yn.get(), xn, c]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * gy[i];
    };
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& x, Scalar c) {
  Tensor<Scalar> y = Tensor<Scalar>::zeros(x.shape());
  y.flat_mut() = x.flat().array() + c;
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    yn->backprop = [yn = yn.get(), xn]() {
      detail::accumulate_flat(xn.get(), yn->grad);
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Scalar> y = Tensor<Scalar>::zeros({m, n});
  y.mat_mut(m, n).noalias() = a.mat(m, k) * b.mat(k, n);
  auto* g = detail::common_graph<Scalar>({&a, &b});
  if (g && detail::any_requires_grad<Scalar>({&a, &b})) {
    auto yn = g->adopt(y, true);
    auto an = a.node();
    auto bn = b.node();
    auto av = a.detach();
    auto bv = b.detach();
    yn->backprop = [yn = yn.get(), an, bn, av, bv, m, k, n]() {
      using Mat = typename Tensor<Scalar>::EigenMat;
      Eigen::Map<const Mat> gy(yn->grad.data(), m, n);
      if (an && an->requires_grad) {
        Eigen::Map<Mat> ga(an->grad_buffer().data(), m, k);
        ga.noalias() += gy * bv.mat(k, n).transpose();
      }
      if (bn && bn->requires_grad) {
        Eigen::Map<Mat> gb(bn->grad_buffer().data(), k, n);
        gb.noalias() += av.mat(m, k).transpose() * gy;
      }
    };
  }
  return y;
}

// Fully connected layer: y[N,out] = x[N,in] * W[in,out] + b[out].
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Tensor<Scalar>& b) {
  if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) ||
      b.dim(0) != w.dim(1)) {
    throw DimensionError("affine shapes x" + shape_str(x.shape()) + " W" +
                         shape_str(w.shape()) + " b" + shape_str(b.shape()));
  }
  const Index n = x.dim(0), in = x.dim(1), out = w.dim(1);
  Tensor<Scalar> y = Tensor<Scalar>::zeros({n, out});
  auto ym = y.mat_mut(n, out);
  ym.noalias() = x.mat(n, in) * w.mat(in, out);
  ym.rowwise() += b.flat().transpose();
  auto* g = detail::common_graph<Scalar>({&x, &w, &b});
  if (g && detail::any_requires_grad<Scalar>({&x, &w, &b})) {
    auto yn = g->adopt(y, true);
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    auto xv = x.detach();
    auto wv = w.detach();
    yn->backprop = [yn = yn.get(), xn, wn, bn, xv, wv, n, in, out]() {
      using Mat = typename Tensor<Scalar>::EigenMat;
      Eigen::Map<const Mat> gy(yn->grad.data(), n, out);
      if (xn && xn->requires_grad) {
        Eigen::Map<Mat> gx(xn->grad_buffer().data(), n, in);
        gx.noalias() += gy * wv.mat(in, out).transpose();
      }
      if (wn && wn->requires_grad) {
        Eigen::Map<Mat> gw(wn->grad_buffer().data(), in, out);
        gw.noalias() += xv.mat(n, in).transpose() * gy;
      }
      if (bn && bn->requires_grad) {
        Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb(
            bn->grad_buffer().data(), out);
        gb.noalias() += gy.colwise().sum().transpose();
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalizations.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> y = Tensor<Scalar>::zeros(x.shape());
  const Scalar* px = x.data();
  Scalar* py = y.raw();
  for (Index i = 0; i < x.size(); ++i) py[i] = px[i] > Scalar(0) ? px[i] : Scalar(0);
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    auto xv = x.detach();
    yn->backprop = [yn = yn.get(), xn, xv]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      const Scalar* px = xv.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (px[i] > Scalar(0)) gx[i] += gy[i];
      }
    };
  }
  return y;
}

namespace detail {

struct AxisSplit {
  Index outer, lanes, inner;
};

inline AxisSplit axis_split(const Shape& shape, Index axis) {
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for " +
                        shape_str(shape));
  }
  AxisSplit s{1, shape[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) {
    s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

}  // namespace detail

// Numerically stable softmax along `axis`.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis) {
  const auto sp = detail::axis_split(x.shape(), axis);
  Tensor<Scalar> y = Tensor<Scalar>::zeros(x.shape());
  const Scalar* px = x.data();
  Scalar* py = y.raw();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index in = 0; in < sp.inner; ++in) {
      const Index base = o * sp.lanes * sp.inner + in;
      Scalar mx = px[base];
      for (Index l = 1; l < sp.lanes; ++l) {
        mx = std::max(mx, px[base + l * sp.inner]);
      }
      Scalar denom = Scalar(0);
      for (Index l = 0; l < sp.lanes; ++l) {
        const Scalar e = std::exp(px[base + l * sp.inner] - mx);
        py[base + l * sp.inner] = e;
        denom += e;
      }
      for (Index l = 0; l < sp.lanes; ++l) py[base + l * sp.inner] /= denom;
    }
  }
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    auto yv = y.detach();
    yn->backprop = [yn = yn.get(), xn, yv, sp]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      const Scalar* py = yv.data();
      for (Index o = 0; o < sp.outer; ++o) {
        for (Index in = 0; in < sp.inner; ++in) {
          const Index base = o * sp.lanes * sp.inner + in;
          Scalar dot = Scalar(0);
          for (Index l = 0; l < sp.lanes; ++l) {
            const Index i = base + l * sp.inner;
            dot += gy[static_cast<std::size_t>(i)] * py[i];
          }
          for (Index l = 0; l < sp.lanes; ++l) {
            const Index i = base + l * sp.inner;
            gx[static_cast<std::size_t>(i)] +=
                py[i] * (gy[static_cast<std::size_t>(i)] - dot);
          }
        }
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// Shape manipulation.
// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor<Scalar> y = Tensor<Scalar>::from_data(shape, x.vec());
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    yn->backprop = [yn = yn.get(), xn]() {
      detail::accumulate_flat(xn.get(), yn->grad);
    };
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<Index>& perm) {
  const auto rank = static_cast<std::size_t>(x.rank());
  if (perm.size() != rank) {
    throw ContractError("permute axes count " + std::to_string(perm.size()) +
                        " != rank " + std::to_string(rank));
  }
  {
    std::vector<bool> seen(rank, false);
    for (Index a : perm) {
      if (a < 0 || a >= static_cast<Index>(rank) || seen[static_cast<std::size_t>(a)]) {
        throw ContractError("permute axes must be a permutation of 0..rank-1");
      }
      seen[static_cast<std::size_t>(a)] = true;
    }
  }
  Shape out_shape(rank);
  std::vector<Index> in_strides(rank, 1), map_strides(rank, 1);
  for (std::size_t i = rank; i-- > 0;) {
    in_strides[i] = (i + 1 < rank) ? in_strides[i + 1] * x.dim(static_cast<Index>(i + 1)) : 1;
  }
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(perm[i]);
    map_strides[i] = in_strides[static_cast<std::size_t>(perm[i])];
  }
  Tensor<Scalar> y = Tensor<Scalar>::zeros(out_shape);
  std::vector<Index> src(static_cast<std::size_t>(x.size()));
  {
    std::vector<Index> idx(rank, 0);
    Index off = 0;
    Scalar* py = y.raw();
    const Scalar* px = x.data();
    for (Index o = 0; o < y.size(); ++o) {
      py[o] = px[off];
      src[static_cast<std::size_t>(o)] = off;
      for (std::size_t i = rank; i-- > 0;) {
        ++idx[i];
        off += map_strides[i];
        if (idx[i] < out_shape[i]) break;
        off -= map_strides[i] * out_shape[i];
        idx[i] = 0;
      }
    }
  }
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    yn->backprop = [yn = yn.get(), xn, src = std::move(src)]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      for (std::size_t o = 0; o < gy.size(); ++o) {
        gx[static_cast<std::size_t>(src[o])] += gy[o];
      }
    };
  }
  return y;
}

// Sum over `axes`; reduced dims become 1 when keepdims, otherwise drop.
template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& x, const std::vector<Index>& axes,
                          bool keepdims = false) {
  const auto rank = static_cast<std::size_t>(x.rank());
  std::vector<bool> reduced(rank, false);
  for (Index a : axes) {
    if (a < 0 || a >= static_cast<Index>(rank)) {
      throw ContractError("reduce_sum axis out of range");
    }
    reduced[static_cast<std::size_t>(a)] = true;
  }
  Shape kept_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) kept_shape[i] = reduced[i] ? 1 : x.dim(static_cast<Index>(i));
  // out strides with zeros on reduced axes: every input index maps to one slot
  std::vector<Index> out_strides(rank, 0);
  {
    Index s = 1;
    for (std::size_t i = rank; i-- > 0;) {
      if (!reduced[i]) {
        out_strides[i] = s;
        s *= kept_shape[i];
      }
    }
  }
  Shape final_shape;
  for (std::size_t i = 0; i < rank; ++i) {
    if (keepdims) {
      final_shape.push_back(kept_shape[i]);
    } else if (!reduced[i]) {
      final_shape.push_back(kept_shape[i]);
    }
  }
  Tensor<Scalar> y = Tensor<Scalar>::zeros(final_shape);
  std::vector<Index> map(static_cast<std::size_t>(x.size()));
  {
    std::vector<Index> idx(rank, 0);
    Index off = 0;
    Scalar* py = y.raw();
    const Scalar* px = x.data();
    for (Index i = 0; i < x.size(); ++i) {
      py[off] += px[i];
      map[static_cast<std::size_t>(i)] = off;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        off += out_strides[d];
        if (idx[d] < x.dim(static_cast<Index>(d))) break;
        off -= out_strides[d] * x.dim(static_cast<Index>(d));
        idx[d] = 0;
      }
    }
  }
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    yn->backprop = [yn = yn.get(), xn, map = std::move(map)]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += gy[static_cast<std::size_t>(map[i])];
      }
    };
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> reduce_sum_all(const Tensor<Scalar>& x) {
  std::vector<Index> axes(static_cast<std::size_t>(x.rank()));
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<Index>(i);
  return reduce_sum(x, axes, false);
}

// ---------------------------------------------------------------------------
// Convolution (im2col lowering) and max pooling.
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  Index n, c, h, w, k, kh, kw, ph, pw, ho, wo, stride;
};

template <typename Scalar>
ConvDims conv_dims(const Tensor<Scalar>& input, Index k, Index kh, Index kw,
                   Index stride, Padding pad, const char* what) {
  if (input.rank() != 4) {
    throw DimensionError(std::string(what) + ": input must be [N,C,H,W], got " +
                         shape_str(input.shape()));
  }
  if (stride < 1) {
    throw ContractError(std::string(what) + ": stride must be >= 1");
  }
  ConvDims d{};
  d.n = input.dim(0);
  d.c = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.k = k;
  d.kh = kh;
  d.kw = kw;
  d.stride = stride;
  if (pad == Padding::same) {
    if (kh % 2 == 0 || kw % 2 == 0) {
      throw ContractError(std::string(what) + ": same padding needs odd kernel sizes");
    }
    d.ph = (kh - 1) / 2;
    d.pw = (kw - 1) / 2;
  }
  if (d.h + 2 * d.ph < kh || d.w + 2 * d.pw < kw) {
    throw DimensionError(std::string(what) + ": kernel " + std::to_string(kh) + "x" +
                         std::to_string(kw) + " larger than padded input " +
                         shape_str(input.shape()));
  }
  d.ho = (d.h + 2 * d.ph - kh) / stride + 1;
  d.wo = (d.w + 2 * d.pw - kw) / stride + 1;
  return d;
}

// Patch matrix [Ho*Wo, C*kh*kw] for one sample; out-of-range cells are zero.
template <typename Scalar>
void im2col(const Scalar* x, const ConvDims& d, Scalar* cols) {
  const Index ckk = d.c * d.kh * d.kw;
  for (Index oy = 0; oy < d.ho; ++oy) {
    for (Index ox = 0; ox < d.wo; ++ox) {
      Scalar* row = cols + (oy * d.wo + ox) * ckk;
      const Index iy0 = oy * d.stride - d.ph;
      const Index ix0 = ox * d.stride - d.pw;
      for (Index c = 0; c < d.c; ++c) {
        for (Index ky = 0; ky < d.kh; ++ky) {
          const Index iy = iy0 + ky;
          for (Index kx = 0; kx < d.kw; ++kx) {
            const Index ix = ix0 + kx;
            const bool inside = iy >= 0 && iy < d.h && ix >= 0 && ix < d.w;
            row[(c * d.kh + ky) * d.kw + kx] =
                inside ? x[(c * d.h + iy) * d.w + ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* cols, const ConvDims& d, Scalar* gx) {
  const Index ckk = d.c * d.kh * d.kw;
  for (Index oy = 0; oy < d.ho; ++oy) {
    for (Index ox = 0; ox < d.wo; ++ox) {
      const Scalar* row = cols + (oy * d.wo + ox) * ckk;
      const Index iy0 = oy * d.stride - d.ph;
      const Index ix0 = ox * d.stride - d.pw;
      for (Index c = 0; c < d.c; ++c) {
        for (Index ky = 0; ky < d.kh; ++ky) {
          const Index iy = iy0 + ky;
          if (iy < 0 || iy >= d.h) continue;
          for (Index kx = 0; kx < d.kw; ++kx) {
            const Index ix = ix0 + kx;
            if (ix < 0 || ix >= d.w) continue;
            gx[(c * d.h + iy) * d.w + ix] += row[(c * d.kh + ky) * d.kw + kx];
          }
        }
      }
    }
  }
}

}  // namespace detail

// input [N,C,H,W] (*) kernel [K,C,kh,kw] -> [N,K,H',W'] with
// H' = floor((H + 2*pad - kh)/stride) + 1.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& kernel,
                      Index stride, Padding pad) {
  if (kernel.rank() != 4) {
    throw DimensionError("conv2d: kernel must be [K,C,kh,kw], got " +
                         shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: channel mismatch, input " + shape_str(input.shape()) +
                         " vs kernel " + shape_str(kernel.shape()));
  }
  const auto d = detail::conv_dims(input, kernel.dim(0), kernel.dim(2), kernel.dim(3),
                                   stride, pad, "conv2d");
  const Index ckk = d.c * d.kh * d.kw;
  Tensor<Scalar> y = Tensor<Scalar>::zeros({d.n, d.k, d.ho, d.wo});
  using Mat = typename Tensor<Scalar>::EigenMat;
  {
    std::vector<Scalar> cols(static_cast<std::size_t>(d.ho * d.wo * ckk));
    Eigen::Map<const Mat> kmat(kernel.data(), d.k, ckk);
    for (Index n = 0; n < d.n; ++n) {
      detail::im2col(input.data() + n * d.c * d.h * d.w, d, cols.data());
      Eigen::Map<const Mat> cmat(cols.data(), d.ho * d.wo, ckk);
      Eigen::Map<Mat> out(y.raw() + n * d.k * d.ho * d.wo, d.k, d.ho * d.wo);
      out.noalias() = kmat * cmat.transpose();
    }
  }
  auto* g = detail::common_graph<Scalar>({&input, &kernel});
  if (g && detail::any_requires_grad<Scalar>({&input, &kernel})) {
    auto yn = g->adopt(y, true);
    auto xn = input.node();
    auto kn = kernel.node();
    auto xv = input.detach();
    auto kv = kernel.detach();
    yn->backprop = [yn = yn.get(), xn, kn, xv, kv, d, ckk]() {
      std::vector<Scalar> cols(static_cast<std::size_t>(d.ho * d.wo * ckk));
      std::vector<Scalar> gcols(static_cast<std::size_t>(d.ho * d.wo * ckk));
      Eigen::Map<const Mat> kmat(kv.data(), d.k, ckk);
      const bool need_x = xn && xn->requires_grad;
      const bool need_k = kn && kn->requires_grad;
      Scalar* gx = need_x ? xn->grad_buffer().data() : nullptr;
      Scalar* gk = need_k ? kn->grad_buffer().data() : nullptr;
      for (Index n = 0; n < d.n; ++n) {
        Eigen::Map<const Mat> gy(yn->grad.data() + n * d.k * d.ho * d.wo, d.k,
                                 d.ho * d.wo);
        detail::im2col(xv.data() + n * d.c * d.h * d.w, d, cols.data());
        Eigen::Map<const Mat> cmat(cols.data(), d.ho * d.wo, ckk);
        if (need_k) {
          Eigen::Map<Mat> gkm(gk, d.k, ckk);
          gkm.noalias() += gy * cmat;
        }
        if (need_x) {
          Eigen::Map<Mat> gcm(gcols.data(), d.ho * d.wo, ckk);
          gcm.noalias() = gy.transpose() * kmat;
          detail::col2im_add(gcols.data(), d, gx + n * d.c * d.h * d.w);
        }
      }
    };
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& input, Index kernel, Index stride,
                          Padding pad) {
  const auto d = detail::conv_dims(input, input.dim(1), kernel, kernel, stride, pad,
                                   "max_pool2d");
  Tensor<Scalar> y = Tensor<Scalar>::zeros({d.n, d.c, d.ho, d.wo});
  std::vector<Index> argmax(static_cast<std::size_t>(y.size()));
  const Scalar* px = input.data();
  Scalar* py = y.raw();
  Index o = 0;
  for (Index n = 0; n < d.n; ++n) {
    for (Index c = 0; c < d.c; ++c) {
      const Scalar* plane = px + (n * d.c + c) * d.h * d.w;
      for (Index oy = 0; oy < d.ho; ++oy) {
        for (Index ox = 0; ox < d.wo; ++ox, ++o) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Index best_i = -1;
          for (Index ky = 0; ky < kernel; ++ky) {
            const Index iy = oy * stride - d.ph + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (Index kx = 0; kx < kernel; ++kx) {
              const Index ix = ox * stride - d.pw + kx;
              if (ix < 0 || ix >= d.w) continue;
              const Scalar v = plane[iy * d.w + ix];
              if (v > best) {
                best = v;
                best_i = (n * d.c + c) * d.h * d.w + iy * d.w + ix;
              }
            }
          }
          py[o] = best;
          argmax[static_cast<std::size_t>(o)] = best_i;
        }
      }
    }
  }
  if (input.requires_grad()) {
    auto yn = input.graph()->adopt(y, true);
    auto xn = input.node();
    yn->backprop = [yn = yn.get(), xn, argmax = std::move(argmax)]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      for (std::size_t i = 0; i < gy.size(); ++i) {
        gx[static_cast<std::size_t>(argmax[i])] += gy[i];
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel axis (axis 1).
// ---------------------------------------------------------------------------

// Train mode normalizes with batch statistics and folds them into the running
// averages in place; eval mode reads the running averages only.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Tensor<Scalar>& running_mean,
                          Tensor<Scalar>& running_var, Mode mode,
                          double momentum = 0.9, double eps = 1e-5) {
  if (x.rank() < 2) {
    throw DimensionError("batch_norm: input must have a batch and channel axis");
  }
  const Index c = x.dim(1);
  if (gamma.size() != c || beta.size() != c || running_mean.size() != c ||
      running_var.size() != c) {
    throw DimensionError("batch_norm: parameter size does not match channels " +
                         std::to_string(c));
  }
  const Index n = x.dim(0);
  const Index spatial = x.size() / (n * c);
  const Index m = n * spatial;  // elements per channel
  Tensor<Scalar> y = Tensor<Scalar>::zeros(x.shape());

  std::vector<Scalar> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  if (mode == Mode::train) {
    if (n < 2) {
      throw ContractError("batch_norm: degenerate batch of size " + std::to_string(n) +
                          " in train mode");
    }
    for (Index ci = 0; ci < c; ++ci) {
      Scalar sum = Scalar(0);
      for (Index ni = 0; ni < n; ++ni) {
        const Scalar* p = x.data() + (ni * c + ci) * spatial;
        for (Index s = 0; s < spatial; ++s) sum += p[s];
      }
      const Scalar mu = sum / static_cast<Scalar>(m);
      Scalar var = Scalar(0);
      for (Index ni = 0; ni < n; ++ni) {
        const Scalar* p = x.data() + (ni * c + ci) * spatial;
        for (Index s = 0; s < spatial; ++s) {
          const Scalar dv = p[s] - mu;
          var += dv * dv;
        }
      }
      var /= static_cast<Scalar>(m);
      mean[static_cast<std::size_t>(ci)] = mu;
      inv_std[static_cast<std::size_t>(ci)] =
          Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
      // running variance keeps the unbiased estimate
      const Scalar unbiased = m > 1 ? var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : var;
      running_mean.raw()[ci] = static_cast<Scalar>(momentum) * running_mean[ci] +
                               static_cast<Scalar>(1.0 - momentum) * mu;
      running_var.raw()[ci] = static_cast<Scalar>(momentum) * running_var[ci] +
                              static_cast<Scalar>(1.0 - momentum) * unbiased;
    }
  } else {
    for (Index ci = 0; ci < c; ++ci) {
      mean[static_cast<std::size_t>(ci)] = running_mean[ci];
      inv_std[static_cast<std::size_t>(ci)] =
          Scalar(1) / std::sqrt(running_var[ci] + static_cast<Scalar>(eps));
    }
  }

  {
    const Scalar* px = x.data();
    Scalar* py = y.raw();
    for (Index ni = 0; ni < n; ++ni) {
      for (Index ci = 0; ci < c; ++ci) {
        const Scalar mu = mean[static_cast<std::size_t>(ci)];
        const Scalar is = inv_std[static_cast<std::size_t>(ci)];
        const Scalar ga = gamma[ci], be = beta[ci];
        const Index base = (ni * c + ci) * spatial;
        for (Index s = 0; s < spatial; ++s) {
          py[base + s] = ga * (px[base + s] - mu) * is + be;
        }
      }
    }
  }

  auto* g = detail::common_graph<Scalar>({&x, &gamma, &beta});
  if (g && detail::any_requires_grad<Scalar>({&x, &gamma, &beta})) {
    auto yn = g->adopt(y, true);
    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto xv = x.detach();
    auto gv = gamma.detach();
    const bool train = mode == Mode::train;
    yn->backprop = [yn = yn.get(), xn, gn, bn, xv, gv, mean, inv_std, n, c, spatial, m,
                    train]() {
      const auto& gy = yn->grad;
      const Scalar* px = xv.data();
      for (Index ci = 0; ci < c; ++ci) {
        const Scalar mu = mean[static_cast<std::size_t>(ci)];
        const Scalar is = inv_std[static_cast<std::size_t>(ci)];
        Scalar sum_g = Scalar(0), sum_gx = Scalar(0);
        for (Index ni = 0; ni < n; ++ni) {
          const Index base = (ni * c + ci) * spatial;
          for (Index s = 0; s < spatial; ++s) {
            const Scalar gvl = gy[static_cast<std::size_t>(base + s)];
            sum_g += gvl;
            sum_gx += gvl * (px[base + s] - mu) * is;
          }
        }
        if (gn && gn->requires_grad) gn->grad_buffer()[ci] += sum_gx;
        if (bn && bn->requires_grad) bn->grad_buffer()[ci] += sum_g;
        if (xn && xn->requires_grad) {
          auto& gx = xn->grad_buffer();
          const Scalar ga = gv[ci];
          for (Index ni = 0; ni < n; ++ni) {
            const Index base = (ni * c + ci) * spatial;
            for (Index s = 0; s < spatial; ++s) {
              const Scalar gvl = gy[static_cast<std::size_t>(base + s)];
              if (train) {
                const Scalar xh = (px[base + s] - mu) * is;
                gx[static_cast<std::size_t>(base + s)] +=
                    ga * is *
                    (gvl - sum_g / static_cast<Scalar>(m) -
                     xh * sum_gx / static_cast<Scalar>(m));
              } else {
                gx[static_cast<std::size_t>(base + s)] += ga * is * gvl;
              }
            }
          }
        }
      }
    };
  }
  return y;
}

// ---------------------------------------------------------------------------
// Vector normalizations along the last axis.
// ---------------------------------------------------------------------------

inline constexpr double kNormEps = 1e-12;

// Rows with norm <= kNormEps map to zero instead of dividing by zero;
// degenerate_rows() reports which ones.
template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& x) {
  if (x.rank() < 1) throw DimensionError("l2_normalize: rank must be >= 1");
  const Index d = x.dim(x.rank() - 1);
  const Index rows = x.size() / d;
  Tensor<Scalar> y = Tensor<Scalar>::zeros(x.shape());
  std::vector<Scalar> norms(static_cast<std::size_t>(rows));
  const Scalar* px = x.data();
  Scalar* py = y.raw();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* vx = px + r * d;
    Scalar sq = Scalar(0);
    for (Index i = 0; i < d; ++i) sq += vx[i] * vx[i];
    const Scalar nrm = std::sqrt(sq);
    norms[static_cast<std::size_t>(r)] = nrm;
    if (nrm > static_cast<Scalar>(kNormEps)) {
      for (Index i = 0; i < d; ++i) py[r * d + i] = vx[i] / nrm;
    }
  }
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    auto yv = y.detach();
    yn->backprop = [yn = yn.get(), xn, yv, norms = std::move(norms), rows, d]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      const Scalar* py = yv.data();
      for (Index r = 0; r < rows; ++r) {
        const Scalar nrm = norms[static_cast<std::size_t>(r)];
        if (nrm <= static_cast<Scalar>(kNormEps)) continue;
        Scalar dot = Scalar(0);
        for (Index i = 0; i < d; ++i) {
          dot += gy[static_cast<std::size_t>(r * d + i)] * py[r * d + i];
        }
        for (Index i = 0; i < d; ++i) {
          gx[static_cast<std::size_t>(r * d + i)] +=
              (gy[static_cast<std::size_t>(r * d + i)] - dot * py[r * d + i]) / nrm;
        }
      }
    };
  }
  return y;
}

template <typename Scalar>
std::vector<std::uint8_t> degenerate_rows(const Tensor<Scalar>& x) {
  const Index d = x.dim(x.rank() - 1);
  const Index rows = x.size() / d;
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(rows), 0);
  for (Index r = 0; r < rows; ++r) {
    Scalar sq = Scalar(0);
    for (Index i = 0; i < d; ++i) {
      const Scalar v = x[r * d + i];
      sq += v * v;
    }
    flags[static_cast<std::size_t>(r)] = std::sqrt(sq) <= static_cast<Scalar>(kNormEps);
  }
  return flags;
}

// v = (|s|^2 / (1 + |s|^2)) * s / |s|, applied along the last axis.
// Maps into the open unit ball; the singularity at 0 takes the limit value 0.
template <typename Scalar>
Tensor<Scalar> squash(const Tensor<Scalar>& x) {
  if (x.rank() < 1) throw DimensionError("squash: rank must be >= 1");
  const Index d = x.dim(x.rank() - 1);
  const Index rows = x.size() / d;
  Tensor<Scalar> y = Tensor<Scalar>::zeros(x.shape());
  std::vector<Scalar> norms(static_cast<std::size_t>(rows));
  const Scalar* px = x.data();
  Scalar* py = y.raw();
  for (Index r = 0; r < rows; ++r) {
    const Scalar* vx = px + r * d;
    Scalar sq = Scalar(0);
    for (Index i = 0; i < d; ++i) sq += vx[i] * vx[i];
    const Scalar nrm = std::sqrt(sq);
    norms[static_cast<std::size_t>(r)] = nrm;
    if (nrm > static_cast<Scalar>(kNormEps)) {
      const Scalar f = nrm / (Scalar(1) + sq);
      for (Index i = 0; i < d; ++i) py[r * d + i] = vx[i] * f;
    }
  }
  if (x.requires_grad()) {
    auto yn = x.graph()->adopt(y, true);
    auto xn = x.node();
    auto xv = x.detach();
    yn->backprop = [yn = yn.get(), xn, xv, norms = std::move(norms), rows, d]() {
      auto& gx = xn->grad_buffer();
      const auto& gy = yn->grad;
      const Scalar* px = xv.data();
      for (Index r = 0; r < rows; ++r) {
        const Scalar nrm = norms[static_cast<std::size_t>(r)];
        if (nrm <= static_cast<Scalar>(kNormEps)) continue;
        const Scalar sq = nrm * nrm;
        const Scalar f = nrm / (Scalar(1) + sq);
        // d/ds of f(|s|): f'(r) = (1 - r^2) / (1 + r^2)^2
        const Scalar fp = (Scalar(1) - sq) / ((Scalar(1) + sq) * (Scalar(1) + sq));
        Scalar dot = Scalar(0);
        for (Index i = 0; i < d; ++i) {
          dot += gy[static_cast<std::size_t>(r * d + i)] * px[r * d + i];
        }
        const Scalar radial = dot * fp / nrm;
        for (Index i = 0; i < d; ++i) {
          gx[static_cast<std::size_t>(r * d + i)] +=
              f * gy[static_cast<std::size_t>(r * d + i)] + radial * px[r * d + i];
        }
      }
    };
  }
  return y;
}

}  // namespace geocaps

#endif  // GEOCAPS_OPS_HPP_
