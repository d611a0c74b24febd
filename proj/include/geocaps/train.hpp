#ifndef GEOCAPS_TRAIN_HPP_
#define GEOCAPS_TRAIN_HPP_

#include <vector>

#include "geocaps/data.hpp"
#include "geocaps/model.hpp"
#include "geocaps/objective.hpp"
#include "geocaps/optim.hpp"

namespace geocaps {

struct EpochStats {
  double mean_loss = 0.0;
  int batches = 0;
};

// One pass over the training set: a seeded shuffle split into floor(N/M)
// full batches (the remainder is dropped so mining always sees M anchors),
// each batch embedding both branches in train mode, the configured loss on
// the distance matrix, backward, and one Adam step.
template <typename Scalar>
class Trainer {
 public:
  Trainer(Model<Scalar>& model, const TrainConfig& tcfg, const LossConfig& lcfg)
      : model_(model),
        tcfg_(tcfg),
        lcfg_(lcfg),
        params_(model.parameters()),
        opt_(params_, tcfg),
        rng_(tcfg.seed) {}

  EpochStats run_epoch(const PairDataset& train_set) {
    const int n = static_cast<int>(train_set.pairs.size());
    if (n < tcfg_.batch_m) {
      throw DataError("training set of " + std::to_string(n) +
                      " pairs is smaller than batch_m " + std::to_string(tcfg_.batch_m));
    }
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng_.shuffle(order);

    EpochStats stats;
    const int full_batches = n / tcfg_.batch_m;
    double total = 0.0;
    for (int b = 0; b < full_batches; ++b) {
      std::vector<int> positions(order.begin() + static_cast<std::ptrdiff_t>(b) * tcfg_.batch_m,
                                 order.begin() + static_cast<std::ptrdiff_t>(b + 1) * tcfg_.batch_m);
      total += train_step(train_set, positions);
      ++stats.batches;
    }
    stats.mean_loss = stats.batches > 0 ? total / stats.batches : 0.0;
    return stats;
  }

  // Runs one optimization step on the given dataset positions; returns the
  // batch loss.
  double train_step(const PairDataset& dataset, const std::vector<int>& positions) {
    Batch<Scalar> batch = assemble_batch<Scalar>(dataset, positions);
    assert_distinct(batch.ids);
    Graph<Scalar> graph;
    Context<Scalar> ctx{&graph, Mode::train};
    DescriptorBatch<Scalar> dg = model_.embed(ctx, batch.ground, Branch::ground);
    DescriptorBatch<Scalar> ds = model_.embed(ctx, batch.satellite, Branch::satellite);
    BatchDistances<Scalar> dist = pairwise_sq_distances(dg.values, ds.values);
    Tensor<Scalar> loss = compute_loss(dist, lcfg_);
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
      throw NumericError("non-finite loss value");
    }
    Gradients<Scalar> grads = graph.backward(loss);
    opt_.step(params_, grads);
    return loss_value;
  }

  // Loss of a batch without touching parameters or optimizer state.
  double eval_loss(const PairDataset& dataset, const std::vector<int>& positions,
                   Mode mode = Mode::train) {
    Batch<Scalar> batch = assemble_batch<Scalar>(dataset, positions);
    Graph<Scalar> graph;
    Context<Scalar> ctx{&graph, mode};
    DescriptorBatch<Scalar> dg = model_.embed(ctx, batch.ground, Branch::ground);
    DescriptorBatch<Scalar> ds = model_.embed(ctx, batch.satellite, Branch::satellite);
    BatchDistances<Scalar> dist = pairwise_sq_distances(dg.values, ds.values);
    return static_cast<double>(compute_loss(dist, lcfg_).item());
  }

  Adam<Scalar>& optimizer() { return opt_; }
  std::vector<NamedParam<Scalar>>& parameters() { return params_; }
  Rng& rng() { return rng_; }

 private:
  static void assert_distinct(const std::vector<int>& ids) {
    std::vector<int> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ContractError("batch contains a repeated location id");
    }
  }

  Model<Scalar>& model_;
  TrainConfig tcfg_;
  LossConfig lcfg_;
  std::vector<NamedParam<Scalar>> params_;
  Adam<Scalar> opt_;
  Rng rng_;
};

}  // namespace geocaps

#endif  // GEOCAPS_TRAIN_HPP_
