#pragma once

// Command-line front end: layered run configuration and the subcommands.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "v2m/amt.hpp"
#include "v2m/losses.hpp"
#include "v2m/optimizer.hpp"
#include "v2m/regressor.hpp"

namespace v2m::cli {

// Every key is settable from the config file, the environment (V2M_<KEY> in
// upper case) and a flag (--key with '_' spelled '-').
struct RunConfig {
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string regressor;
  std::string resume;
  std::string chords;
  std::string key;
  std::string primer;
  std::uint64_t seed = 0;
  int epochs = 10;
  double lr = 1.0;
  double lambda = 0.4;
  int heads = 8;
  int layers = 6;
  int d_model = 512;
  int d_ff = 2048;
  double dropout = 0.1;
  int warmup_steps = 4000;
  int batch_size = 1;
  int tmax = 300;
  bool use_ground_truth_expressive = false;
  int n = 0;
  int length = 30;
  int d_sem = 16;
  std::string regressor_kind = "bigru";
  int regressor_hidden = 64;
  int regressor_layers = 2;
  int regressor_fc_hidden = 512;
  int regressor_epochs = 30;
  double regressor_lr = 1e-3;

  void validate() const;
  amt::ModelConfig model_config(int d_sem_override) const;
  train::OptimizerSpec optimizer_spec() const;
  train::LossWeights loss_weights() const;
  post::RegressorConfig regressor_config(int d_sem_override) const;
};

std::vector<std::string> config_keys();

// V2M_* variables of the running process.
std::map<std::string, std::string> process_environment();

// defaults < config file < environment < flags. Unknown keys in the file or
// in V2M_* variables are rejected.
RunConfig resolve_config(const std::map<std::string, std::string>& flags, const std::map<std::string, std::string>& env,
                         const std::optional<std::filesystem::path>& config_file);

// Entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Command bodies, callable without argument parsing.
int cmd_extract(const RunConfig& c, std::ostream& out);
int cmd_synth(const RunConfig& c, std::ostream& out);
int cmd_train(const RunConfig& c, std::ostream& out);
int cmd_train_regressor(const RunConfig& c, std::ostream& out);
int cmd_generate(const RunConfig& c, std::ostream& out);
int cmd_evaluate(const RunConfig& c, std::ostream& out);
int cmd_render(const RunConfig& c, std::ostream& out);

}  // namespace v2m::cli
