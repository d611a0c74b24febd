#ifndef GEOCAPS_CONFIG_HPP_
#define GEOCAPS_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "geocaps/model.hpp"
#include "geocaps/objective.hpp"

namespace geocaps {

// Procedural cross-view dataset: each location draws a latent vector and two
// deterministic renderers place latent-controlled blobs on distinct canvas
// layouts for the ground and overhead views.
struct SyntheticSpec {
  int n_locations = 640;
  int image_size = 64;
  int latent_dim = 16;
  double noise_std = 0.02;
  std::uint64_t seed = 17;
};

struct DataConfig {
  bool use_synthetic = true;
  SyntheticSpec synthetic;
  std::string directory;        // <root>/ground/*.png + <root>/satellite/*.png
  double train_fraction = 0.8;  // disjoint location split, train ids first
};

struct TrainConfig {
  int batch_m = 32;
  int epochs = 50;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 5e-4;
  std::uint64_t seed = 7;
};

struct EvalConfig {
  std::vector<int> k_list{1, 5, 10};
  std::vector<double> percent_list{1.0, 10.0};
};

struct OutputConfig {
  std::string loss_csv = "loss.csv";
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  DataConfig data;
  EvalConfig eval;
  OutputConfig output;
};

// Strict JSON parsing: unknown keys are rejected with the offending path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig parse_run_config_file(const std::string& path);

// Canonical (sorted-key, whitespace-free) JSON of the model section; the
// checkpoint digest is the FNV-1a of this string.
std::string canonical_model_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);
std::uint64_t config_digest(const ModelConfig& cfg);

}  // namespace geocaps

#endif  // GEOCAPS_CONFIG_HPP_
