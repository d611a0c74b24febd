#ifndef GEOCAPS_OPTIM_HPP_
#define GEOCAPS_OPTIM_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "geocaps/config.hpp"
#include "geocaps/layers.hpp"

namespace geocaps {

// Adam with bias correction and decoupled weight decay:
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// State is kept per trainable parameter in registration order. A NaN or Inf
// gradient aborts the step with a diagnostic naming the parameter.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;

  Adam(const std::vector<NamedParam<Scalar>>& params, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      if (!p.trainable) continue;
      names_.push_back(p.name);
      m_.push_back(Tensor<Scalar>::zeros(p.value.shape()));
      v_.push_back(Tensor<Scalar>::zeros(p.value.shape()));
    }
  }

  void step(std::vector<NamedParam<Scalar>>& params, const Gradients<Scalar>& grads) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(cfg_.adam_beta1);
    const Scalar b2 = static_cast<Scalar>(cfg_.adam_beta2);
    const Scalar eps = static_cast<Scalar>(cfg_.adam_eps);
    const Scalar lr = static_cast<Scalar>(cfg_.lr);
    const Scalar wd = static_cast<Scalar>(cfg_.weight_decay);
    const Scalar bc1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(t_));
    const Scalar bc2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(t_));
    std::size_t slot = 0;
    for (auto& p : params) {
      if (!p.trainable) continue;
      const Tensor<Scalar>& g = grads.at(p.value);
      if (!g.all_finite()) {
        throw NumericError("non-finite gradient for parameter " + p.name +
                           " at step " + std::to_string(t_));
      }
      Scalar* pm = m_[slot].raw();
      Scalar* pv = v_[slot].raw();
      Scalar* pw = p.value.raw();
      const Scalar* pg = g.data();
      const Index n = p.value.size();
      for (Index i = 0; i < n; ++i) {
        pm[i] = b1 * pm[i] + (Scalar(1) - b1) * pg[i];
        pv[i] = b2 * pv[i] + (Scalar(1) - b2) * pg[i] * pg[i];
        const Scalar m_hat = pm[i] / bc1;
        const Scalar v_hat = pv[i] / bc2;
        pw[i] -= lr * (m_hat / (std::sqrt(v_hat) + eps) + wd * pw[i]);
      }
      ++slot;
    }
  }

  std::uint64_t step_count() const { return t_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor<Scalar>>& first_moments() const { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const { return v_; }

  // Restores state saved in a checkpoint (moment tensors in name order).
  void restore(std::uint64_t t, std::vector<Tensor<Scalar>> m, std::vector<Tensor<Scalar>> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) {
      throw ContractError("optimizer state size mismatch on restore");
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  TrainConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> m_;
  std::vector<Tensor<Scalar>> v_;
};

}  // namespace geocaps

#endif  // GEOCAPS_OPTIM_HPP_
