#ifndef GEOCAPS_TENSOR_HPP_
#define GEOCAPS_TENSOR_HPP_

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "geocaps/error.hpp"
#include "geocaps/rng.hpp"

namespace geocaps {

using Index = std::int64_t;
using Shape = std::vector<Index>;

template <typename Scalar>
class Graph;

template <typename Scalar>
class Tensor;

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

// One executed primitive on the tape. `backprop` reads this node's grad and
// accumulates into its parents' grad buffers; parents are kept alive through
// the closure captures.
template <typename Scalar>
struct Node {
  Shape shape;
  std::vector<Scalar> grad;           // empty until touched by backward()
  std::function<void()> backprop;     // null for leaves
  bool requires_grad = false;
  Graph<Scalar>* graph = nullptr;

  Index numel() const { return shape_numel(shape); }

  std::vector<Scalar>& grad_buffer() {
    if (grad.empty()) grad.assign(static_cast<std::size_t>(numel()), Scalar(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor. The value part (shape + contiguous data) is a
// cheap shared handle; a tensor produced by a primitive inside a Graph
// additionally carries the tape node that links it to its operands.
// Values are treated as immutable once produced by a primitive; raw()
// mutation is reserved for parameter construction and optimizer updates.
template <typename Scalar>
class Tensor {
 public:
  using EigenMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using EigenVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  static Tensor zeros(Shape shape) {
    return Tensor(std::move(shape), Scalar(0));
  }

  static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  static Tensor from_data(Shape shape, std::vector<Scalar> data) {
    if (shape_numel(shape) != static_cast<Index>(data.size())) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<Scalar>>(std::move(data));
    return t;
  }

  static Tensor gaussian(Shape shape, Rng& rng, double std_dev, double mean = 0.0) {
    Tensor t(std::move(shape), Scalar(0));
    for (auto& v : *t.data_) v = static_cast<Scalar>(rng.normal(mean, std_dev));
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_ ? static_cast<Index>(data_->size()) : 0; }
  bool empty() const { return !data_; }

  const Scalar* data() const { return data_->data(); }
  Scalar* raw() { return data_->data(); }
  const std::vector<Scalar>& vec() const { return *data_; }

  // Buffer identity; parameters are keyed by this in gradient maps,
  // optimizer state and weight sharing.
  const void* buffer_id() const { return static_cast<const void*>(data_.get()); }
  bool same_buffer(const Tensor& o) const { return data_ == o.data_; }

  Scalar operator[](Index i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  Scalar& operator[](Index i) { return (*data_)[static_cast<std::size_t>(i)]; }

  Scalar item() const {
    if (size() != 1) {
      throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
    }
    return (*data_)[0];
  }

  // Flat Eigen views over the contiguous storage.
  Eigen::Map<const EigenVec> flat() const {
    return Eigen::Map<const EigenVec>(data(), size());
  }
  Eigen::Map<EigenVec> flat_mut() {
    return Eigen::Map<EigenVec>(raw(), size());
  }
  Eigen::Map<const EigenMat> mat(Index rows, Index cols) const {
    return Eigen::Map<const EigenMat>(data(), rows, cols);
  }
  Eigen::Map<EigenMat> mat_mut(Index rows, Index cols) {
    return Eigen::Map<EigenMat>(raw(), rows, cols);
  }

  bool all_finite() const {
    for (const Scalar v : *data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // A value-only copy of this tensor (drops the tape linkage, shares data).
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<Scalar>>(*data_);
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_->size());
    for (std::size_t i = 0; i < data_->size(); ++i) {
      out[i] = static_cast<Other>((*data_)[i]);
    }
    return Tensor<Other>::from_data(shape_, std::move(out));
  }

  bool tracked() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<detail::Node<Scalar>>& node() const { return node_; }
  Graph<Scalar>* graph() const { return node_ ? node_->graph : nullptr; }

 private:
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)) {
    data_ = std::make_shared<std::vector<Scalar>>(
        static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  friend class Graph<Scalar>;

  Shape shape_;
  std::shared_ptr<std::vector<Scalar>> data_;
  std::shared_ptr<detail::Node<Scalar>> node_;
};

// Gradient map returned by Graph::backward, keyed by parameter buffer.
template <typename Scalar>
class Gradients {
 public:
  bool contains(const Tensor<Scalar>& param) const {
    return grads_.count(param.buffer_id()) > 0;
  }

  const Tensor<Scalar>& at(const Tensor<Scalar>& param) const {
    auto it = grads_.find(param.buffer_id());
    if (it == grads_.end()) {
      throw ContractError("gradient requested for a tensor that is not a leaf of this graph");
    }
    return it->second;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  friend class Graph<Scalar>;
  std::unordered_map<const void*, Tensor<Scalar>> grads_;
};

// Tape of executed primitives in execution (hence topological) order.
// Single-writer: one forward/backward at a time per instance. Distinct
// instances are independent.
template <typename Scalar>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Registers `value` as a leaf. Memoized on buffer identity, so a parameter
  // shared by two branches maps to one node and its gradient accumulates
  // from both uses.
  Tensor<Scalar> leaf(const Tensor<Scalar>& value, bool requires_grad = true) {
    auto it = leaf_memo_.find(value.buffer_id());
    if (it != leaf_memo_.end()) {
      Tensor<Scalar> t = value.detach();
      t.node_ = it->second;
      return t;
    }
    auto node = std::make_shared<detail::Node<Scalar>>();
    node->shape = value.shape();
    node->requires_grad = requires_grad;
    node->graph = this;
    tape_.push_back(node);
    leaf_memo_.emplace(value.buffer_id(), node);
    leaves_.push_back(value.detach());
    Tensor<Scalar> t = value.detach();
    t.node_ = node;
    return t;
  }

  // Attaches a freshly computed value to the tape. `backprop` is filled in
  // by the caller once parent captures are known.
  std::shared_ptr<detail::Node<Scalar>> adopt(Tensor<Scalar>& value, bool requires_grad) {
    auto node = std::make_shared<detail::Node<Scalar>>();
    node->shape = value.shape();
    node->requires_grad = requires_grad;
    node->graph = this;
    tape_.push_back(node);
    value.node_ = node;
    return node;
  }

  // Reverse pass from a scalar loss. Re-runnable: each call resets the
  // accumulators first, so replaying without re-executing forward yields
  // identical gradients.
  Gradients<Scalar> backward(const Tensor<Scalar>& loss) {
    if (loss.size() != 1) {
      throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
    }
    if (!loss.tracked() || loss.graph() != this) {
      throw ContractError("backward() loss does not belong to this graph");
    }
    for (auto& node : tape_) node->grad.clear();
    loss.node()->grad_buffer()[0] = Scalar(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      auto& node = *it;
      if (!node->grad.empty() && node->backprop) node->backprop();
    }
    Gradients<Scalar> out;
    for (const auto& leaf_value : leaves_) {
      auto node = leaf_memo_.at(leaf_value.buffer_id());
      if (!node->requires_grad) continue;
      Tensor<Scalar> g = node->grad.empty()
                             ? Tensor<Scalar>::zeros(leaf_value.shape())
                             : Tensor<Scalar>::from_data(leaf_value.shape(), node->grad);
      out.grads_.emplace(leaf_value.buffer_id(), std::move(g));
    }
    return out;
  }

  std::size_t node_count() const { return tape_.size(); }

 private:
  std::vector<std::shared_ptr<detail::Node<Scalar>>> tape_;
  std::unordered_map<const void*, std::shared_ptr<detail::Node<Scalar>>> leaf_memo_;
  std::vector<Tensor<Scalar>> leaves_;
};

namespace detail {

// Resolves the graph shared by the tracked operands; throws if two operands
// belong to different graphs.
template <typename Scalar>
Graph<Scalar>* common_graph(std::initializer_list<const Tensor<Scalar>*> operands) {
  Graph<Scalar>* g = nullptr;
  for (const auto* t : operands) {
    if (!t->tracked()) continue;
    if (g == nullptr) {
      g = t->graph();
    } else if (g != t->graph()) {
      throw ContractError("operands belong to different graphs");
    }
  }
  return g;
}

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const Tensor<Scalar>*> operands) {
  for (const auto* t : operands) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

}  // namespace geocaps

#endif  // GEOCAPS_TENSOR_HPP_
