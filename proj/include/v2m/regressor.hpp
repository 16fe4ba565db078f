#pragma once

// Per-second note-density and loudness regressors over video features.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "v2m/amt.hpp"
#include "v2m/autograd.hpp"
#include "v2m/dataset.hpp"

namespace v2m::post {

enum class RegressorKind { kFc, kLstm, kBiLstm, kGru, kBiGru };

std::string_view regressor_kind_name(RegressorKind k);
RegressorKind parse_regressor_kind(std::string_view s);

struct RegressorConfig {
  RegressorKind kind = RegressorKind::kBiGru;
  int hidden = 64;  // per direction
  int layers = 2;
  int fc_hidden = 512;
  int d_sem = 0;
  int input_dim() const { return 8 + d_sem; }
  bool bidirectional() const { return kind == RegressorKind::kBiLstm || kind == RegressorKind::kBiGru; }
  void validate() const;
};

struct Prediction {
  std::vector<double> density;   // >= 0
  std::vector<double> loudness;  // [0, 1]
};

struct RegressorTrainOptions {
  int epochs = 30;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int t_max = data::kDefaultTmax;
  std::function<void(int epoch, double train_loss, double val_rmse_density, double val_rmse_loudness)> on_epoch;
};

struct RegressorScores {
  double rmse_density = 0.0;
  double rmse_loudness = 0.0;
};

class Regressor {
 public:
  Regressor(const RegressorConfig& config, std::uint64_t seed);
  Regressor(const RegressorConfig& config, nn::ParamStore params);

  const RegressorConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // T x 2 raw outputs (density, loudness), unclamped.
  nn::Var forward(nn::Graph& g, const nn::Matrix& features);
  Prediction predict(const amt::VideoInput& video);

  void fit_input_normalization(const std::vector<amt::VideoInput>& inputs);
  // Output biases start at the target means.
  void set_output_bias(double density, double loudness);

 private:
  void init(std::uint64_t seed);
  nn::Var recurrent_layer(nn::Graph& g, const std::string& prefix, nn::Var x, bool reverse);

  RegressorConfig config_;
  nn::ParamStore params_;
};

// Trains on the records' per-second density and loudness. With a non-empty
// validation set the parameters of the best validation epoch are restored and
// its scores returned.
RegressorScores train_regressor(Regressor& model, const std::vector<data::FeatureRecord>& train_set,
                                const std::vector<data::FeatureRecord>& val_set, const RegressorTrainOptions& opts);

RegressorScores score_regressor(Regressor& model, const std::vector<data::FeatureRecord>& records, int t_max);

// Predicts the training-set mean everywhere.
RegressorScores constant_baseline(const std::vector<data::FeatureRecord>& train_set,
                                  const std::vector<data::FeatureRecord>& eval_set, int t_max);

void save_regressor(const std::filesystem::path& path, const Regressor& model);
Regressor load_regressor(const std::filesystem::path& path);

}  // namespace v2m::post
