#ifndef GEOCAPS_GRADCHECK_HPP_
#define GEOCAPS_GRADCHECK_HPP_

#include <functional>

#include "geocaps/tensor.hpp"

namespace geocaps {

// Central-difference gradient oracle: (f(x + h e_i) - f(x - h e_i)) / (2h)
// per coordinate. Meant to run at 64-bit precision.
template <typename Scalar>
Tensor<Scalar> finite_diff_grad(const std::function<Scalar(const Tensor<Scalar>&)>& f,
                                const Tensor<Scalar>& x, Scalar h) {
  Tensor<Scalar> grad = Tensor<Scalar>::zeros(x.shape());
  Tensor<Scalar> probe = x.clone();
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe[i];
    probe[i] = orig + h;
    const Scalar up = f(probe);
    probe[i] = orig - h;
    const Scalar down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (Scalar(2) * h);
  }
  return grad;
}

// Central difference restricted to a coordinate subset, for large tensors.
template <typename Scalar>
std::vector<Scalar> finite_diff_grad_at(
    const std::function<Scalar(const Tensor<Scalar>&)>& f, const Tensor<Scalar>& x,
    const std::vector<Index>& coords, Scalar h) {
  std::vector<Scalar> grad;
  grad.reserve(coords.size());
  Tensor<Scalar> probe = x.clone();
  for (Index i : coords) {
    const Scalar orig = probe[i];
    probe[i] = orig + h;
    const Scalar up = f(probe);
    probe[i] = orig - h;
    const Scalar down = f(probe);
    probe[i] = orig;
    grad.push_back((up - down) / (Scalar(2) * h));
  }
  return grad;
}

// |a - b| / max(floor, |a|, |b|); the floor keeps near-zero gradients from
// blowing up the ratio.
template <typename Scalar>
Scalar relative_error(Scalar a, Scalar b, Scalar floor = Scalar(1e-8)) {
  const Scalar scale = std::max({floor, std::abs(a), std::abs(b)});
  return std::abs(a - b) / scale;
}

}  // namespace geocaps

#endif  // GEOCAPS_GRADCHECK_HPP_
