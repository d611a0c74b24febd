#include "geocaps/runner.hpp"

#include <filesystem>
#include <unordered_map>

#include "geocaps/csv.hpp"
#include "geocaps/train.hpp"

namespace geocaps {

namespace {

CheckpointTensor to_ckpt_tensor(const std::string& name, const Tensor<float>& t) {
  CheckpointTensor out;
  out.name = name;
  out.dims.assign(t.shape().begin(), t.shape().end());
  out.values.assign(t.data(), t.data() + t.size());
  return out;
}

std::vector<double> merged_percents(const std::vector<double>& requested) {
  std::vector<double> out{1.0, 10.0};
  for (double p : requested) {
    bool present = false;
    for (double q : out) {
      if (q == p) present = true;
    }
    if (!present) out.push_back(p);
  }
  return out;
}

}  // namespace

PairDataset load_dataset(const DataConfig& cfg) {
  return cfg.use_synthetic ? generate_synthetic_pairs(cfg.synthetic)
                           : load_image_directory(cfg.directory);
}

Checkpoint model_to_checkpoint(Model<float>& model, const ModelConfig& cfg,
                               const Adam<float>* optimizer) {
  Checkpoint ckpt;
  ckpt.config_json = canonical_model_json(cfg);
  ckpt.digest = config_digest(cfg);
  for (const auto& p : model.parameters()) {
    ckpt.tensors.push_back(to_ckpt_tensor(p.name, p.value));
  }
  if (optimizer != nullptr) {
    ckpt.has_optimizer = true;
    ckpt.adam_step = optimizer->step_count();
    const auto& names = optimizer->names();
    for (std::size_t i = 0; i < names.size(); ++i) {
      ckpt.adam_m.push_back(to_ckpt_tensor(names[i], optimizer->first_moments()[i]));
      ckpt.adam_v.push_back(to_ckpt_tensor(names[i], optimizer->second_moments()[i]));
    }
  }
  return ckpt;
}

void load_model_params(Model<float>& model, const Checkpoint& ckpt) {
  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.tensors) by_name.emplace(t.name, &t);
  auto params = model.parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                          " tensors, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      throw CheckpointError("checkpoint is missing tensor " + p.name);
    }
    const CheckpointTensor& src = *it->second;
    if (static_cast<Index>(src.values.size()) != p.value.size()) {
      throw CheckpointError("checkpoint tensor " + p.name + " has " +
                            std::to_string(src.values.size()) + " values, expected " +
                            std::to_string(p.value.size()));
    }
    std::copy(src.values.begin(), src.values.end(), p.value.raw());
  }
}

DescriptorBatch<float> embed_dataset(Model<float>& model, const PairDataset& dataset,
                                     Branch branch, int chunk) {
  const int n = static_cast<int>(dataset.pairs.size());
  const Index dim = model.descriptor_length();
  DescriptorBatch<float> out;
  out.branch = branch;
  out.values = Tensor<float>::zeros({n, dim});
  out.degenerate.assign(static_cast<std::size_t>(n), 0);
  Context<float> ctx{nullptr, Mode::eval};
  for (int start = 0; start < n; start += chunk) {
    const int count = std::min(chunk, n - start);
    std::vector<int> positions(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) positions[static_cast<std::size_t>(i)] = start + i;
    Batch<float> batch = assemble_batch<float>(dataset, positions);
    const Tensor<float>& images = branch == Branch::ground ? batch.ground : batch.satellite;
    DescriptorBatch<float> d = model.embed(ctx, images, branch);
    std::copy(d.values.data(), d.values.data() + d.values.size(),
              out.values.raw() + static_cast<Index>(start) * dim);
    for (int i = 0; i < count; ++i) {
      out.degenerate[static_cast<std::size_t>(start + i)] = d.degenerate[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

void run_train(const RunConfig& cfg, const std::string& out_ckpt,
               const std::string& resume_ckpt) {
  PairDataset full = load_dataset(cfg.data);
  auto [train_set, test_set] = split_by_location(std::move(full), cfg.data.train_fraction);
  (void)test_set;

  Model<float> model(cfg.model);
  Trainer<float> trainer(model, cfg.train, cfg.loss);

  if (!resume_ckpt.empty()) {
    Checkpoint prev = load_checkpoint(resume_ckpt);
    if (prev.digest != config_digest(cfg.model)) {
      throw ConfigError("resume checkpoint digest does not match the model config");
    }
    load_model_params(model, prev);
    if (prev.has_optimizer) {
      std::vector<Tensor<float>> m, v;
      for (const auto& t : prev.adam_m) {
        Shape shape(t.dims.begin(), t.dims.end());
        m.push_back(Tensor<float>::from_data(shape, t.values));
      }
      for (const auto& t : prev.adam_v) {
        Shape shape(t.dims.begin(), t.dims.end());
        v.push_back(Tensor<float>::from_data(shape, t.values));
      }
      trainer.optimizer().restore(prev.adam_step, std::move(m), std::move(v));
    }
  }

  std::string log = "epoch,mean_loss,batches\n";
  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const EpochStats stats = trainer.run_epoch(train_set);
    log += csv_row({std::to_string(epoch), format_number(stats.mean_loss),
                    std::to_string(stats.batches)});
  }
  write_text_file(cfg.output.loss_csv, log);

  const Checkpoint ckpt = model_to_checkpoint(model, cfg.model, &trainer.optimizer());
  save_checkpoint(out_ckpt, ckpt);
}

void run_eval(const RunConfig& cfg, const std::string& ckpt_path,
              const std::string& report_csv) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.digest != config_digest(cfg.model)) {
    throw ConfigError("checkpoint digest does not match the model config (trained with " +
                      ckpt.config_json + ")");
  }
  PairDataset full = load_dataset(cfg.data);
  auto [train_set, test_set] = split_by_location(std::move(full), cfg.data.train_fraction);
  (void)train_set;

  Model<float> model(cfg.model);
  load_model_params(model, ckpt);

  DescriptorBatch<float> ground = embed_dataset(model, test_set, Branch::ground);
  DescriptorBatch<float> satellite = embed_dataset(model, test_set, Branch::satellite);
  RecallReport report = recall_curve(ground.values, satellite.values, cfg.eval.k_list,
                                     merged_percents(cfg.eval.percent_list));

  std::string csv = "metric,K_or_percent,value\n";
  for (const auto& [k, v] : report.recall_at_k) {
    csv += csv_row({"recall_at_k", std::to_string(k), format_number(v)});
  }
  for (const auto& [p, v] : report.recall_at_percent) {
    csv += csv_row({"recall_at_top_percent", format_number(p), format_number(v)});
  }
  write_text_file(report_csv, csv);
}

void run_embed(const std::string& ckpt_path, const std::string& input,
               const std::string& branch_name, const std::string& out_csv) {
  Branch branch;
  if (branch_name == "ground") {
    branch = Branch::ground;
  } else if (branch_name == "satellite") {
    branch = Branch::satellite;
  } else {
    throw ConfigError("branch must be \"ground\" or \"satellite\", got \"" + branch_name +
                      "\"");
  }
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ModelConfig model_cfg = model_config_from_json(ckpt.config_json);
  Model<float> model(model_cfg);
  load_model_params(model, ckpt);

  // The input is either an image directory (ground/ + satellite/) or a run
  // config whose data section names the source; a config input standardizes
  // with its training-split statistics, a directory with its own.
  PairDataset dataset;
  namespace fs = std::filesystem;
  if (fs::is_directory(input)) {
    dataset = load_image_directory(input);
  } else if (fs::is_regular_file(input)) {
    RunConfig run = parse_run_config_file(input);
    dataset = load_dataset(run.data);
    auto [train_set, test_set] = split_by_location(dataset, run.data.train_fraction);
    dataset.stats = train_set.stats;
  } else {
    throw DataError("embed input is neither a directory nor a config file: " + input);
  }

  DescriptorBatch<float> desc = embed_dataset(model, dataset, branch);
  const Index dim = desc.values.dim(1);
  std::string csv = "id";
  for (Index i = 0; i < dim; ++i) csv += ",c" + std::to_string(i);
  csv += '\n';
  for (std::size_t row = 0; row < dataset.pairs.size(); ++row) {
    csv += std::to_string(dataset.pairs[row].location_id);
    const float* v = desc.values.data() + static_cast<Index>(row) * dim;
    for (Index i = 0; i < dim; ++i) {
      csv += ',';
      csv += format_number(static_cast<double>(v[i]));
    }
    csv += '\n';
  }
  write_text_file(out_csv, csv);
}

}  // namespace geocaps
