#ifndef GEOCAPS_DATA_HPP_
#define GEOCAPS_DATA_HPP_

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "geocaps/config.hpp"
#include "geocaps/parallel.hpp"
#include "geocaps/png_io.hpp"
#include "geocaps/rng.hpp"
#include "geocaps/tensor.hpp"

namespace geocaps {

// One geo-location: a matched ground/satellite image pair. Pixels are raw
// [0,1] floats, [3,S,S]; standardization happens at batch assembly.
struct LocationPair {
  int location_id = 0;
  Tensor<float> ground;
  Tensor<float> satellite;
};

struct ChannelStats {
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> std{1.f, 1.f, 1.f};
};

struct PairDataset {
  std::vector<LocationPair> pairs;
  int image_size = 0;
  ChannelStats stats;  // always the training-split statistics
};

// Deterministic synthetic cross-view pairs: both views render the same latent
// vector through distinct blob layouts, so matched pairs share structure and
// unmatched pairs do not. Same spec -> bit-identical dataset.
PairDataset generate_synthetic_pairs(const SyntheticSpec& spec);

// Ingests <root>/ground/<name>.png + <root>/satellite/<name>.png, matched by
// filename (sorted order assigns location ids).
PairDataset load_image_directory(const std::string& root);

// Disjoint location split: the first floor(n * train_fraction) locations are
// the training set. Channel statistics are computed on the training split and
// stamped onto both halves.
std::pair<PairDataset, PairDataset> split_by_location(PairDataset dataset,
                                                      double train_fraction);

ChannelStats compute_channel_stats(const PairDataset& dataset);

template <typename Scalar>
struct Batch {
  Tensor<Scalar> ground;     // [M, 3, S, S], standardized
  Tensor<Scalar> satellite;  // [M, 3, S, S], row i matches ground row i
  std::vector<int> ids;
};

// Standardized image stack for the given dataset positions.
template <typename Scalar>
Batch<Scalar> assemble_batch(const PairDataset& dataset, const std::vector<int>& positions) {
  const Index m = static_cast<Index>(positions.size());
  const Index s = dataset.image_size;
  Batch<Scalar> batch;
  batch.ground = Tensor<Scalar>::zeros({m, 3, s, s});
  batch.satellite = Tensor<Scalar>::zeros({m, 3, s, s});
  const Index plane = s * s;
  for (Index i = 0; i < m; ++i) {
    const auto& pair = dataset.pairs.at(static_cast<std::size_t>(positions[static_cast<std::size_t>(i)]));
    batch.ids.push_back(pair.location_id);
    for (Index c = 0; c < 3; ++c) {
      const float mean = dataset.stats.mean[static_cast<std::size_t>(c)];
      const float inv_std = 1.0f / dataset.stats.std[static_cast<std::size_t>(c)];
      Scalar* pg = batch.ground.raw() + (i * 3 + c) * plane;
      Scalar* ps = batch.satellite.raw() + (i * 3 + c) * plane;
      const float* sg = pair.ground.data() + c * plane;
      const float* ss = pair.satellite.data() + c * plane;
      for (Index p = 0; p < plane; ++p) {
        pg[p] = static_cast<Scalar>((sg[p] - mean) * inv_std);
        ps[p] = static_cast<Scalar>((ss[p] - mean) * inv_std);
      }
    }
  }
  return batch;
}

// M distinct locations drawn without replacement; position i of both stacks
// holds the matched pair, so the distance-matrix diagonal is the positives.
template <typename Scalar>
Batch<Scalar> sample_batch(const PairDataset& dataset, int m, Rng& rng) {
  const int n = static_cast<int>(dataset.pairs.size());
  if (m > n) {
    throw DataError("batch of " + std::to_string(m) + " from dataset of " +
                    std::to_string(n) + " pairs");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  order.resize(static_cast<std::size_t>(m));
  return assemble_batch<Scalar>(dataset, order);
}

}  // namespace geocaps

#endif  // GEOCAPS_DATA_HPP_
