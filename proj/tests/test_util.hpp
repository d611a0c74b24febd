#ifndef GEOCAPS_TESTS_TEST_UTIL_HPP_
#define GEOCAPS_TESTS_TEST_UTIL_HPP_

#include <functional>
#include <vector>

#include "geocaps/gradcheck.hpp"
#include "geocaps/ops.hpp"

namespace geocaps::testutil {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline Tensor<float> random_tensor_f(Shape shape, Rng& rng, float lo = -1.0f,
                                     float hi = 1.0f) {
  Tensor<float> t = Tensor<float>::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline std::vector<Index> sample_coords(Index size, Index want, Rng& rng) {
  std::vector<Index> all(static_cast<std::size_t>(size));
  for (Index i = 0; i < size; ++i) all[static_cast<std::size_t>(i)] = i;
  if (size <= want) return all;
  rng.shuffle(all);
  all.resize(static_cast<std::size_t>(want));
  return all;
}

inline Tensor<double> weighted_sum(const Tensor<double>& y, const Tensor<double>& weights) {
  return reduce_sum_all(mul(y, weights));
}

// Analytic-vs-central-difference comparison. `forward` sees tracked leaves
// during the analytic pass and plain tensors during probing.
inline double max_grad_error(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& forward,
    const std::vector<Tensor<double>>& inputs, Index coords_per_input, Rng& rng,
    double h = 1e-5) {
  Graph<double> graph;
  std::vector<Tensor<double>> tracked;
  tracked.reserve(inputs.size());
  for (const auto& t : inputs) tracked.push_back(graph.leaf(t));
  Tensor<double> loss = forward(tracked);
  auto grads = graph.backward(loss);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& analytic = grads.at(inputs[k]);
    const auto coords = sample_coords(inputs[k].size(), coords_per_input, rng);
    const auto fd = finite_diff_grad_at<double>(
        [&](const Tensor<double>& probe) {
          std::vector<Tensor<double>> plain = inputs;
          plain[k] = probe;
          return forward(plain).item();
        },
        inputs[k], coords, h);
    for (std::size_t i = 0; i < coords.size(); ++i) {
      worst = std::max(worst, relative_error(analytic[coords[i]], fd[i]));
    }
  }
  return worst;
}

// Central differences through a shared parameter buffer, probing it in place
// (restored after each probe). For checking gradients of module-owned
// parameters against a plain re-evaluation.
inline double fd_error_through_buffer(const Gradients<double>& grads,
                                      Tensor<double> buffer,
                                      const std::function<double()>& plain_value,
                                      Index coords_count, Rng& rng, double h = 1e-5) {
  const Tensor<double>& analytic = grads.at(buffer);
  const auto coords = sample_coords(buffer.size(), coords_count, rng);
  double worst = 0.0;
  for (Index c : coords) {
    const double orig = buffer.raw()[c];
    buffer.raw()[c] = orig + h;
    const double up = plain_value();
    buffer.raw()[c] = orig - h;
    const double down = plain_value();
    buffer.raw()[c] = orig;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, relative_error(analytic[c], fd));
  }
  return worst;
}

}  // namespace geocaps::testutil

#endif  // GEOCAPS_TESTS_TEST_UTIL_HPP_
