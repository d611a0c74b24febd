#ifndef GEOCAPS_RUNNER_HPP_
#define GEOCAPS_RUNNER_HPP_

#include <string>

#include "geocaps/checkpoint.hpp"
#include "geocaps/config.hpp"
#include "geocaps/data.hpp"
#include "geocaps/eval.hpp"
#include "geocaps/model.hpp"
#include "geocaps/optim.hpp"

namespace geocaps {

PairDataset load_dataset(const DataConfig& cfg);

Checkpoint model_to_checkpoint(Model<float>& model, const ModelConfig& cfg,
                               const Adam<float>* optimizer);

// Copies checkpoint tensors into the model parameters; names and shapes must
// match exactly.
void load_model_params(Model<float>& model, const Checkpoint& ckpt);

// Embeds every pair of `dataset` on one branch in eval mode; rows follow
// dataset order.
DescriptorBatch<float> embed_dataset(Model<float>& model, const PairDataset& dataset,
                                     Branch branch, int chunk = 32);

// CLI command bodies. Errors surface as geocaps::Error with the exit-code
// category (2 config, 3 data, 4 numeric).
void run_train(const RunConfig& cfg, const std::string& out_ckpt,
               const std::string& resume_ckpt);
void run_eval(const RunConfig& cfg, const std::string& ckpt_path,
              const std::string& report_csv);
void run_embed(const std::string& ckpt_path, const std::string& input,
               const std::string& branch, const std::string& out_csv);

}  // namespace geocaps

#endif  // GEOCAPS_RUNNER_HPP_
