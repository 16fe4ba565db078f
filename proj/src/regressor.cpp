#include "v2m/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "v2m/checkpoint.hpp"
#include "v2m/error.hpp"
#include "v2m/optimizer.hpp"

namespace v2m::post {

using nn::Graph;
using nn::Matrix;
using nn::Var;

namespace {

constexpr std::pair<RegressorKind, std::string_view> kKindNames[] = {
    {RegressorKind::kFc, "fc"},     {RegressorKind::kLstm, "lstm"},   {RegressorKind::kBiLstm, "bilstm"},
    {RegressorKind::kGru, "gru"},   {RegressorKind::kBiGru, "bigru"},
};

bool is_lstm(RegressorKind k) { return k == RegressorKind::kLstm || k == RegressorKind::kBiLstm; }

int gate_count(RegressorKind k) { return is_lstm(k) ? 4 : 3; }

std::vector<std::string> directions(const RegressorConfig& c) {
  return c.bidirectional() ? std::vector<std::string>{"fwd", "bwd"} : std::vector<std::string>{"fwd"};
}

}  // namespace

std::string_view regressor_kind_name(RegressorKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

RegressorKind parse_regressor_kind(std::string_view s) {
  for (const auto& [kind, name] : kKindNames)
    if (name == s) return kind;
  throw ParseError("unknown regressor kind '" + std::string(s) + "' (expected fc, lstm, bilstm, gru or bigru)");
}

void RegressorConfig::validate() const {
  if (hidden <= 0) throw RangeError("regressor hidden must be > 0");
  if (layers <= 0) throw RangeError("regressor layers must be > 0");
  if (fc_hidden <= 0) throw RangeError("regressor fc_hidden must be > 0");
  if (d_sem < 0) throw RangeError("regressor d_sem must be >= 0");
}

Regressor::Regressor(const RegressorConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init(seed);
}

Regressor::Regressor(const RegressorConfig& config, nn::ParamStore params) : config_(config) {
  config_.validate();
  Regressor fresh(config_, 0);
  for (std::size_t i = 0; i < fresh.params_.size(); ++i) {
    const auto& want = fresh.params_[i];
    if (!params.contains(want.name)) throw SchemaError("regressor checkpoint lacks tensor '" + want.name + "'");
    const auto& have = params.get(want.name);
    if (have.value.rows() != want.value.rows() || have.value.cols() != want.value.cols())
      throw SchemaError("regressor tensor '" + want.name + "' has shape " + have.value.shape_string() + ", expected " +
                        want.value.shape_string());
    params_.add(want.name, have.value, want.trainable);
  }
}

void Regressor::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto in = static_cast<std::size_t>(config_.input_dim());
  Matrix mean(1, in), sd(1, in);
  sd.fill(1.0);
  params_.add("input.mean", mean, false);
  params_.add("input.std", sd, false);
  std::size_t head_in = 0;
  if (config_.kind == RegressorKind::kFc) {
    const auto h = static_cast<std::size_t>(config_.fc_hidden);
    params_.add("fc.w", nn::glorot(in, h, rng));
    params_.add("fc.b", Matrix(1, h));
    head_in = h;
  } else {
    const auto h = static_cast<std::size_t>(config_.hidden);
    const auto g = static_cast<std::size_t>(gate_count(config_.kind)) * h;
    const std::size_t width = h * directions(config_).size();
    for (int l = 0; l < config_.layers; ++l) {
      const std::size_t layer_in = l == 0 ? in : width;
      for (const auto& dir : directions(config_)) {
        const std::string p = "rnn." + std::to_string(l) + "." + dir;
        params_.add(p + ".wx", nn::glorot(layer_in, g, rng));
        Matrix bx(1, g);
        // LSTM forget gate starts open.
        if (is_lstm(config_.kind))
          for (std::size_t j = h; j < 2 * h; ++j) bx(0, j) = 1.0;
        params_.add(p + ".bx", bx);
        params_.add(p + ".wh", nn::glorot(h, g, rng));
        params_.add(p + ".bh", Matrix(1, g));
      }
    }
    head_in = width;
  }
  params_.add("head.w", nn::glorot(head_in, 2, rng));
  params_.add("head.b", Matrix(1, 2));
}

void Regressor::fit_input_normalization(const std::vector<amt::VideoInput>& inputs) {
  const auto n = static_cast<std::size_t>(config_.input_dim());
  std::vector<double> sum(n, 0.0), sq(n, 0.0);
  double count = 0.0;
  for (const auto& v : inputs)
    for (std::size_t t = 0; t < v.features.rows(); ++t) {
      if (!v.mask[t]) continue;
      for (std::size_t c = 0; c < n; ++c) {
        sum[c] += v.features(t, c);
        sq[c] += v.features(t, c) * v.features(t, c);
      }
      count += 1.0;
    }
  if (count == 0.0) return;
  auto& mean = params_.get("input.mean").value;
  auto& sd = params_.get("input.std").value;
  for (std::size_t c = 0; c < n; ++c) {
    mean(0, c) = sum[c] / count;
    const double s = std::sqrt(std::max(0.0, sq[c] / count - mean(0, c) * mean(0, c)));
    sd(0, c) = s > 1e-8 ? s : 1.0;
  }
}

void Regressor::set_output_bias(double density, double loudness) {
  auto& b = params_.get("head.b").value;
  b(0, 0) = density;
  b(0, 1) = loudness;
}

Var Regressor::recurrent_layer(Graph& g, const std::string& prefix, Var x, bool reverse) {
  const auto h = static_cast<std::size_t>(config_.hidden);
  const std::size_t t_len = x.rows();
  Var xg = nn::add_row(nn::matmul(x, g.param(params_.get(prefix + ".wx"))), g.param(params_.get(prefix + ".bx")));
  Var wh = g.param(params_.get(prefix + ".wh"));
  Var bh = g.param(params_.get(prefix + ".bh"));
  Var state = g.constant(Matrix(1, h));
  Var cell = g.constant(Matrix(1, h));
  std::vector<Var> out(t_len);
  for (std::size_t s = 0; s < t_len; ++s) {
    const std::size_t t = reverse ? t_len - 1 - s : s;
    Var xt = nn::slice_rows(xg, t, 1);
    Var hg = nn::add_row(nn::matmul(state, wh), bh);
    if (is_lstm(config_.kind)) {
      Var pre = nn::add(xt, hg);
      Var i = nn::sigmoid(nn::slice_cols(pre, 0, h));
      Var f = nn::sigmoid(nn::slice_cols(pre, h, h));
      Var c = nn::tanh(nn::slice_cols(pre, 2 * h, h));
      Var o = nn::sigmoid(nn::slice_cols(pre, 3 * h, h));
      cell = nn::add(nn::mul(f, cell), nn::mul(i, c));
      state = nn::mul(o, nn::tanh(cell));
    } else {
      Var r = nn::sigmoid(nn::add(nn::slice_cols(xt, 0, h), nn::slice_cols(hg, 0, h)));
      Var z = nn::sigmoid(nn::add(nn::slice_cols(xt, h, h), nn::slice_cols(hg, h, h)));
      Var n = nn::tanh(nn::add(nn::slice_cols(xt, 2 * h, h), nn::mul(r, nn::slice_cols(hg, 2 * h, h))));
      state = nn::add(n, nn::mul(z, nn::sub(state, n)));
    }
    out[t] = state;
  }
  return nn::concat_rows(out);
}

Var Regressor::forward(Graph& g, const Matrix& features) {
  const auto in = static_cast<std::size_t>(config_.input_dim());
  if (features.cols() != in)
    throw SchemaError("regressor expects " + std::to_string(in) + " feature columns, got " +
                      std::to_string(features.cols()));
  if (features.rows() == 0) throw SchemaError("regressor input is empty");
  const auto& mean = params_.get("input.mean").value;
  const auto& sd = params_.get("input.std").value;
  Matrix z(features.rows(), in);
  for (std::size_t t = 0; t < features.rows(); ++t)
    for (std::size_t c = 0; c < in; ++c) z(t, c) = (features(t, c) - mean(0, c)) / sd(0, c);
  Var x = g.constant(std::move(z));
  if (config_.kind == RegressorKind::kFc) {
    x = nn::relu(nn::add_row(nn::matmul(x, g.param(params_.get("fc.w"))), g.param(params_.get("fc.b"))));
  } else {
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "rnn." + std::to_string(l) + ".";
      if (config_.bidirectional()) {
        const Var parts[] = {recurrent_layer(g, p + "fwd", x, false), recurrent_layer(g, p + "bwd", x, true)};
        x = nn::concat_cols(parts);
      } else {
        x = recurrent_layer(g, p + "fwd", x, false);
      }
    }
  }
  return nn::add_row(nn::matmul(x, g.param(params_.get("head.w"))), g.param(params_.get("head.b")));
}

Prediction Regressor::predict(const amt::VideoInput& video) {
  std::size_t n = 0;
  while (n < video.mask.size() && video.mask[n]) ++n;
  Prediction p;
  if (n == 0) return p;
  Matrix feats(n, video.features.cols());
  std::copy_n(video.features.data(), feats.size(), feats.data());
  Graph g(false);
  const auto& out = g.value(forward(g, feats));
  for (std::size_t t = 0; t < n; ++t) {
    p.density.push_back(std::max(0.0, out(t, 0)));
    p.loudness.push_back(std::clamp(out(t, 1), 0.0, 1.0));
  }
  return p;
}

namespace {

struct Example {
  amt::VideoInput video;
  std::vector<double> density;
  std::vector<double> loudness;
  std::vector<std::uint8_t> mask;
};

Example make_example(const data::FeatureRecord& r, int t_max) {
  const auto padded = data::clip_or_pad(r, t_max);
  const auto n = static_cast<std::size_t>(padded.length);
  Example ex;
  auto full = amt::video_input(padded);
  ex.video.features = Matrix(n, full.features.cols());
  std::copy_n(full.features.data(), ex.video.features.size(), ex.video.features.data());
  ex.video.mask.assign(n, 1);
  for (std::size_t t = 0; t < n; ++t) {
    ex.density.push_back(static_cast<double>(padded.note_density[t]));
    ex.loudness.push_back(padded.loudness[t]);
  }
  ex.mask.assign(n, 1);
  return ex;
}

std::vector<Example> make_examples(const std::vector<data::FeatureRecord>& records, int t_max) {
  std::vector<Example> out;
  for (const auto& r : records)
    if (r.length() > 0) out.push_back(make_example(r, t_max));
  return out;
}

}  // namespace

RegressorScores score_regressor(Regressor& model, const std::vector<data::FeatureRecord>& records, int t_max) {
  double sd = 0.0, sl = 0.0;
  long n = 0;
  for (const auto& ex : make_examples(records, t_max)) {
    const auto p = model.predict(ex.video);
    for (std::size_t t = 0; t < p.density.size(); ++t) {
      sd += (p.density[t] - ex.density[t]) * (p.density[t] - ex.density[t]);
      sl += (p.loudness[t] - ex.loudness[t]) * (p.loudness[t] - ex.loudness[t]);
      ++n;
    }
  }
  if (n == 0) return {};
  return {std::sqrt(sd / n), std::sqrt(sl / n)};
}

RegressorScores constant_baseline(const std::vector<data::FeatureRecord>& train_set,
                                  const std::vector<data::FeatureRecord>& eval_set, int t_max) {
  const auto train = make_examples(train_set, t_max);
  double md = 0.0, ml = 0.0;
  long n = 0;
  for (const auto& ex : train)
    for (std::size_t t = 0; t < ex.density.size(); ++t, ++n) {
      md += ex.density[t];
      ml += ex.loudness[t];
    }
  if (n == 0) throw Error("baseline needs a non-empty training set");
  md /= n;
  ml /= n;
  double sd = 0.0, sl = 0.0;
  long m = 0;
  for (const auto& ex : make_examples(eval_set, t_max))
    for (std::size_t t = 0; t < ex.density.size(); ++t, ++m) {
      sd += (ex.density[t] - md) * (ex.density[t] - md);
      sl += (ex.loudness[t] - ml) * (ex.loudness[t] - ml);
    }
  if (m == 0) return {};
  return {std::sqrt(sd / m), std::sqrt(sl / m)};
}

RegressorScores train_regressor(Regressor& model, const std::vector<data::FeatureRecord>& train_set,
                                const std::vector<data::FeatureRecord>& val_set, const RegressorTrainOptions& opts) {
  auto examples = make_examples(train_set, opts.t_max);
  if (examples.empty()) throw Error("regressor training set is empty");
  std::vector<amt::VideoInput> inputs;
  double md = 0.0, ml = 0.0;
  long n = 0;
  for (const auto& ex : examples) {
    inputs.push_back(ex.video);
    for (std::size_t t = 0; t < ex.density.size(); ++t, ++n) {
      md += ex.density[t];
      ml += ex.loudness[t];
    }
  }
  model.fit_input_normalization(inputs);
  model.set_output_bias(md / n, ml / n);

  train::OptimizerSpec spec;
  spec.beta2 = 0.999;
  spec.eps = 1e-8;
  train::Adam adam(spec);
  std::vector<std::size_t> order(examples.size());
  RegressorScores scores;
  // With a validation set the epoch with the lowest summed validation MSE is kept.
  double best = std::numeric_limits<double>::infinity();
  std::vector<nn::Matrix> best_values;
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(opts.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double loss_sum = 0.0;
    for (const auto idx : order) {
      const auto& ex = examples[idx];
      model.params().zero_grad();
      Graph g(true);
      Var out = model.forward(g, ex.video.features);
      Var loss = nn::add(nn::masked_mse(nn::slice_cols(out, 0, 1), ex.density, ex.mask),
                         nn::masked_mse(nn::slice_cols(out, 1, 1), ex.loudness, ex.mask));
      const double l = g.value(loss)(0, 0);
      if (!std::isfinite(l)) throw DivergenceError("regressor loss became non-finite at epoch " + std::to_string(epoch));
      loss_sum += l;
      g.backward(loss);
      adam.step(model.params(), opts.lr);
    }
    RegressorScores current;
    if (!val_set.empty()) {
      current = score_regressor(model, val_set, opts.t_max);
      const double mse = current.rmse_density * current.rmse_density + current.rmse_loudness * current.rmse_loudness;
      if (mse < best) {
        best = mse;
        scores = current;
        best_values.clear();
        for (std::size_t i = 0; i < model.params().size(); ++i) best_values.push_back(model.params()[i].value);
      }
    }
    if (opts.on_epoch)
      opts.on_epoch(epoch, loss_sum / static_cast<double>(examples.size()), current.rmse_density,
                    current.rmse_loudness);
  }
  for (std::size_t i = 0; i < best_values.size(); ++i) model.params()[i].value = best_values[i];
  return scores;
}

void save_regressor(const std::filesystem::path& path, const Regressor& model) {
  const auto& c = model.config();
  nlohmann::json config = {{"kind", regressor_kind_name(c.kind)},
                           {"hidden", c.hidden},
                           {"layers", c.layers},
                           {"fc_hidden", c.fc_hidden},
                           {"d_sem", c.d_sem}};
  ckpt::save(path, "regressor", config, nlohmann::json::object(), model.params());
}

Regressor load_regressor(const std::filesystem::path& path) {
  auto ck = ckpt::load(path);
  if (ck.kind != "regressor") throw SchemaError(path.string() + " holds a '" + ck.kind + "' checkpoint, not a regressor");
  RegressorConfig c;
  try {
    c.kind = parse_regressor_kind(ck.config.at("kind").get<std::string>());
    c.hidden = ck.config.at("hidden").get<int>();
    c.layers = ck.config.at("layers").get<int>();
    c.fc_hidden = ck.config.at("fc_hidden").get<int>();
    c.d_sem = ck.config.at("d_sem").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("regressor config in " + path.string() + ": " + e.what());
  }
  return Regressor(c, std::move(ck.tensors));
}

}  // namespace v2m::post
