#include "geocaps/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "geocaps/checkpoint.hpp"
#include "geocaps/error.hpp"

namespace geocaps {

namespace {

using nlohmann::json;

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path + " must be a JSON object");
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw ConfigError("unknown key \"" + item.key() + "\" at " +
                        (path.empty() ? "top level" : path));
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

double parse_width_scale(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) return std::stod(s);
      const double num = std::stod(s.substr(0, slash));
      const double den = std::stod(s.substr(slash + 1));
      if (den == 0.0) throw ConfigError("width_scale denominator is zero");
      return num / den;
    } catch (const std::invalid_argument&) {
      throw ConfigError("width_scale string must be a number or \"a/b\": " + s);
    }
  }
  throw ConfigError("width_scale must be a number or \"a/b\" string");
}

BackboneConfig parse_backbone(const json& j) {
  expect_object(j, "model.backbone");
  check_keys(j, "model.backbone",
             {"input_size", "stem_channels", "block_counts", "block_channels",
              "width_scale", "use_max_pool"});
  BackboneConfig cfg;
  if (j.contains("input_size")) {
    const auto& v = j.at("input_size");
    if (v.is_number_integer()) {
      cfg.input_h = cfg.input_w = v.get<Index>();
    } else if (v.is_array() && (v.size() == 2 || v.size() == 3)) {
      if (v.size() == 3 && v.at(2).get<int>() != 3) {
        throw ConfigError("input_size third entry must be 3 channels");
      }
      cfg.input_h = v.at(0).get<Index>();
      cfg.input_w = v.at(1).get<Index>();
    } else {
      throw ConfigError("input_size must be an integer or [H, W] / [H, W, 3]");
    }
  }
  cfg.stem_channels = get_or<Index>(j, "stem_channels", cfg.stem_channels);
  if (j.contains("block_counts")) {
    const auto counts = j.at("block_counts").get<std::vector<Index>>();
    if (counts.size() != 4) throw ConfigError("block_counts must have 4 entries");
    for (int i = 0; i < 4; ++i) cfg.block_counts[static_cast<std::size_t>(i)] = counts[static_cast<std::size_t>(i)];
  }
  if (j.contains("block_channels")) {
    const auto chans = j.at("block_channels").get<std::vector<std::vector<Index>>>();
    if (chans.size() != 4) throw ConfigError("block_channels must have 4 stages");
    for (std::size_t s = 0; s < 4; ++s) {
      if (chans[s].size() != 3) throw ConfigError("block_channels stages must be triples");
      for (std::size_t i = 0; i < 3; ++i) cfg.block_channels[s][i] = chans[s][i];
    }
  }
  if (j.contains("width_scale")) cfg.width_scale = parse_width_scale(j.at("width_scale"));
  cfg.use_max_pool = get_or<bool>(j, "use_max_pool", cfg.use_max_pool);
  return cfg;
}

CapsuleConfig parse_capsules(const json& j) {
  expect_object(j, "model.capsules");
  check_keys(j, "model.capsules",
             {"n_primary", "d_primary", "primary_kernel", "primary_stride", "n_out",
              "d_out", "routing_iterations"});
  CapsuleConfig cfg;
  cfg.n_primary = get_or<Index>(j, "n_primary", cfg.n_primary);
  cfg.d_primary = get_or<Index>(j, "d_primary", cfg.d_primary);
  cfg.primary_kernel = get_or<Index>(j, "primary_kernel", cfg.primary_kernel);
  cfg.primary_stride = get_or<Index>(j, "primary_stride", cfg.primary_stride);
  cfg.n_out = get_or<Index>(j, "n_out", cfg.n_out);
  cfg.d_out = get_or<Index>(j, "d_out", cfg.d_out);
  cfg.routing_iterations = get_or<Index>(j, "routing_iterations", cfg.routing_iterations);
  if (cfg.routing_iterations < 1) throw ConfigError("routing_iterations must be >= 1");
  return cfg;
}

ModelConfig parse_model(const json& j) {
  expect_object(j, "model");
  check_keys(j, "model", {"variant", "head", "backbone", "capsules", "fc_dim", "seed"});
  ModelConfig cfg;
  const std::string variant = get_or<std::string>(j, "variant", "II");
  if (variant == "I") {
    cfg.variant = Variant::I;
  } else if (variant == "II") {
    cfg.variant = Variant::II;
  } else {
    throw ConfigError("model.variant must be \"I\" or \"II\", got \"" + variant + "\"");
  }
  const std::string head = get_or<std::string>(j, "head", "caps");
  if (head == "caps") {
    cfg.head = HeadKind::caps;
  } else if (head == "fc") {
    cfg.head = HeadKind::fc;
  } else {
    throw ConfigError("model.head must be \"caps\" or \"fc\", got \"" + head + "\"");
  }
  if (j.contains("backbone")) cfg.backbone = parse_backbone(j.at("backbone"));
  if (j.contains("capsules")) cfg.capsules = parse_capsules(j.at("capsules"));
  cfg.fc_dim = get_or<Index>(j, "fc_dim", cfg.fc_dim);
  if (cfg.fc_dim < 1) throw ConfigError("fc_dim must be >= 1");
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  return cfg;
}

SyntheticSpec parse_synthetic(const json& j) {
  expect_object(j, "data.synthetic");
  check_keys(j, "data.synthetic",
             {"n_locations", "image_size", "latent_dim", "noise_std", "seed"});
  SyntheticSpec spec;
  spec.n_locations = get_or<int>(j, "n_locations", spec.n_locations);
  spec.image_size = get_or<int>(j, "image_size", spec.image_size);
  spec.latent_dim = get_or<int>(j, "latent_dim", spec.latent_dim);
  spec.noise_std = get_or<double>(j, "noise_std", spec.noise_std);
  spec.seed = get_or<std::uint64_t>(j, "seed", spec.seed);
  if (spec.n_locations < 2) throw ConfigError("synthetic.n_locations must be >= 2");
  return spec;
}

DataConfig parse_data(const json& j) {
  expect_object(j, "data");
  check_keys(j, "data", {"synthetic", "directory", "train_fraction"});
  DataConfig cfg;
  const bool has_syn = j.contains("synthetic");
  const bool has_dir = j.contains("directory");
  if (has_syn && has_dir) {
    throw ConfigError("data must name either \"synthetic\" or \"directory\", not both");
  }
  if (has_dir) {
    cfg.use_synthetic = false;
    cfg.directory = j.at("directory").get<std::string>();
  } else if (has_syn) {
    cfg.use_synthetic = true;
    cfg.synthetic = parse_synthetic(j.at("synthetic"));
  }
  cfg.train_fraction = get_or<double>(j, "train_fraction", cfg.train_fraction);
  if (cfg.train_fraction <= 0.0 || cfg.train_fraction >= 1.0) {
    throw ConfigError("train_fraction must be in (0, 1)");
  }
  return cfg;
}

TrainConfig parse_train(const json& j) {
  expect_object(j, "train");
  check_keys(j, "train",
             {"batch_m", "epochs", "lr", "adam_beta1", "adam_beta2", "adam_eps",
              "weight_decay", "seed"});
  TrainConfig cfg;
  cfg.batch_m = get_or<int>(j, "batch_m", cfg.batch_m);
  if (cfg.batch_m < 2) throw ConfigError("train.batch_m must be >= 2 (mining needs a negative)");
  cfg.epochs = get_or<int>(j, "epochs", cfg.epochs);
  if (cfg.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  cfg.lr = get_or<double>(j, "lr", cfg.lr);
  cfg.adam_beta1 = get_or<double>(j, "adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = get_or<double>(j, "adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = get_or<double>(j, "adam_eps", cfg.adam_eps);
  cfg.weight_decay = get_or<double>(j, "weight_decay", cfg.weight_decay);
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  return cfg;
}

LossConfig parse_loss(const json& j) {
  expect_object(j, "loss");
  check_keys(j, "loss", {"kind", "alpha", "theta"});
  LossConfig cfg;
  const std::string kind = get_or<std::string>(j, "kind", "soft_trihard");
  if (kind == "margin_trihard") {
    cfg.kind = LossKind::margin_trihard;
  } else if (kind == "soft_triplet") {
    cfg.kind = LossKind::soft_triplet;
  } else if (kind == "soft_trihard") {
    cfg.kind = LossKind::soft_trihard;
  } else {
    throw ConfigError("loss.kind must be margin_trihard, soft_triplet or soft_trihard");
  }
  cfg.alpha = get_or<double>(j, "alpha", cfg.alpha);
  if (cfg.alpha <= 0.0) throw ConfigError("loss.alpha must be > 0");
  cfg.theta = get_or<double>(j, "theta", cfg.theta);
  if (cfg.theta < 0.0) throw ConfigError("loss.theta must be >= 0");
  return cfg;
}

EvalConfig parse_eval(const json& j) {
  expect_object(j, "eval");
  check_keys(j, "eval", {"k_list", "percent_list"});
  EvalConfig cfg;
  cfg.k_list = get_or<std::vector<int>>(j, "k_list", cfg.k_list);
  cfg.percent_list = get_or<std::vector<double>>(j, "percent_list", cfg.percent_list);
  for (int k : cfg.k_list) {
    if (k < 1) throw ConfigError("eval.k_list entries must be >= 1");
  }
  for (double p : cfg.percent_list) {
    if (p <= 0.0 || p > 100.0) throw ConfigError("eval.percent_list entries must be in (0, 100]");
  }
  return cfg;
}

OutputConfig parse_output(const json& j) {
  expect_object(j, "output");
  check_keys(j, "output", {"loss_csv"});
  OutputConfig cfg;
  cfg.loss_csv = get_or<std::string>(j, "loss_csv", cfg.loss_csv);
  return cfg;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  expect_object(j, "config");
  check_keys(j, "", {"model", "train", "loss", "data", "eval", "output"});
  RunConfig cfg;
  if (j.contains("model")) cfg.model = parse_model(j.at("model"));
  if (j.contains("train")) cfg.train = parse_train(j.at("train"));
  if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss"));
  if (j.contains("data")) cfg.data = parse_data(j.at("data"));
  if (j.contains("eval")) cfg.eval = parse_eval(j.at("eval"));
  if (j.contains("output")) cfg.output = parse_output(j.at("output"));
  return cfg;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return parse_run_config(os.str());
}

std::string canonical_model_json(const ModelConfig& cfg) {
  json j;
  j["variant"] = cfg.variant == Variant::I ? "I" : "II";
  j["head"] = cfg.head == HeadKind::caps ? "caps" : "fc";
  j["fc_dim"] = cfg.fc_dim;
  j["seed"] = cfg.seed;
  json bb;
  bb["input_size"] = {cfg.backbone.input_h, cfg.backbone.input_w, 3};
  bb["stem_channels"] = cfg.backbone.stem_channels;
  bb["block_counts"] = cfg.backbone.block_counts;
  bb["block_channels"] = cfg.backbone.block_channels;
  bb["width_scale"] = cfg.backbone.width_scale;
  bb["use_max_pool"] = cfg.backbone.use_max_pool;
  j["backbone"] = bb;
  json cp;
  cp["n_primary"] = cfg.capsules.n_primary;
  cp["d_primary"] = cfg.capsules.d_primary;
  cp["primary_kernel"] = cfg.capsules.primary_kernel;
  cp["primary_stride"] = cfg.capsules.primary_stride;
  cp["n_out"] = cfg.capsules.n_out;
  cp["d_out"] = cfg.capsules.d_out;
  cp["routing_iterations"] = cfg.capsules.routing_iterations;
  j["capsules"] = cp;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model JSON: ") + e.what());
  }
  return parse_model(j);
}

std::uint64_t config_digest(const ModelConfig& cfg) {
  const std::string canon = canonical_model_json(cfg);
  return fnv1a64(canon.data(), canon.size());
}

}  // namespace geocaps
