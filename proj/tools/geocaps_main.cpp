#include <CLI11.hpp>

#include <exception>
#include <iostream>

#include "geocaps/error.hpp"
#include "geocaps/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Cross-view geo-localization trainer and retrieval evaluator"};
  app.require_subcommand(1);

  std::string config_path, out_path, resume_path, ckpt_path, report_path;
  std::string input_path, branch, embed_out;

  CLI::App* train = app.add_subcommand("train", "Train a model from a JSON run config");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--out", out_path, "Checkpoint output path")->required();
  train->add_option("--resume", resume_path, "Checkpoint to resume from");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate retrieval metrics on the held-out split");
  eval->add_option("--config", config_path, "Run config JSON")->required();
  eval->add_option("--ckpt", ckpt_path, "Checkpoint to evaluate")->required();
  eval->add_option("--report", report_path, "Report CSV output path")->required();

  CLI::App* embed = app.add_subcommand("embed", "Export descriptors as CSV");
  embed->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  embed->add_option("--input", input_path,
                    "Image directory (ground/ + satellite/) or run config JSON")->required();
  embed->add_option("--branch", branch, "ground or satellite")->required();
  embed->add_option("--out", embed_out, "Descriptor CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) {
      geocaps::run_train(geocaps::parse_run_config_file(config_path), out_path, resume_path);
    } else if (eval->parsed()) {
      geocaps::run_eval(geocaps::parse_run_config_file(config_path), ckpt_path, report_path);
    } else if (embed->parsed()) {
      geocaps::run_embed(ckpt_path, input_path, branch, embed_out);
    }
  } catch (const geocaps::Error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
