#include "v2m/amt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "v2m/error.hpp"

namespace v2m::amt {

using nn::Graph;
using nn::Matrix;
using nn::Var;

void ModelConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw SchemaError("d_model (" + std::to_string(d_model) + ") must be a positive multiple of n_heads (" +
                      std::to_string(n_heads) + ")");
  if (n_layers_enc < 0 || n_layers_dec < 1) throw SchemaError("need n_layers_enc >= 0 and n_layers_dec >= 1");
  if (d_ff < 1 || d_sem < 0) throw SchemaError("d_ff must be >= 1 and d_sem >= 0");
  if (vocab_size != music::kVocabSize) throw SchemaError("vocab_size must be " + std::to_string(music::kVocabSize));
  if (max_len < 1 || max_rel_dist < 1) throw SchemaError("max_len and max_rel_dist must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw SchemaError("dropout must be in [0,1)");
}

void GenerationConstraints::validate() const {
  if (max_repeat_chord < 1 || max_repeat_silence < 1) throw RangeError("repeat limits must be >= 1");
  if (temperature < 0.0) throw RangeError("temperature must be >= 0");
}

int quality_row(int token) {
  if (token == music::kSilenceId) return music::kNumQualities;
  if (token == music::kPadId) return music::kNumQualities + 1;
  if (token == music::kSosId) return music::kNumQualities + 2;
  const int q = music::token_quality_index(token);
  if (q < 0) throw RangeError("token id " + std::to_string(token) + " out of range");
  return q;
}

int root_row(int token) {
  if (token == music::kSilenceId) return 12;
  if (token == music::kPadId) return 13;
  if (token == music::kSosId) return 14;
  const int r = music::token_root_index(token);
  if (r < 0) throw RangeError("token id " + std::to_string(token) + " out of range");
  return r;
}

namespace {

template <class Seq>
VideoInput make_video_input(const Seq& scene, const Seq& motion, const auto& emotion, const auto& semantic,
                            std::vector<std::uint8_t> mask) {
  const std::size_t t = mask.size();
  const std::size_t d_sem = semantic.empty() ? 0 : semantic.front().size();
  VideoInput in;
  in.features = Matrix(t, 8 + d_sem);
  for (std::size_t i = 0; i < t; ++i) {
    in.features(i, 0) = static_cast<double>(scene[i]);
    in.features(i, 1) = static_cast<double>(motion[i]);
    for (int e = 0; e < 6; ++e) in.features(i, 2 + e) = emotion[i][e];
    if (semantic[i].size() != d_sem) throw SchemaError("ragged semantic rows");
    for (std::size_t s = 0; s < d_sem; ++s) in.features(i, 8 + s) = semantic[i][s];
  }
  in.mask = std::move(mask);
  return in;
}

}  // namespace

VideoInput video_input(const data::FeatureRecord& r) {
  std::vector<double> scene(r.scene_offset.begin(), r.scene_offset.end());
  return make_video_input(scene, r.motion, r.emotion, r.semantic, std::vector<std::uint8_t>(r.length(), 1));
}

VideoInput video_input(const data::PaddedExample& ex) {
  std::vector<double> scene(ex.scene_offset.begin(), ex.scene_offset.end());
  return make_video_input(scene, ex.motion, ex.emotion, ex.semantic, ex.mask);
}

std::shared_ptr<const std::vector<std::uint8_t>> causal_mask(std::size_t t) {
  auto m = std::make_shared<std::vector<std::uint8_t>>(t * t, 0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j <= i; ++j) (*m)[i * t + j] = 1;
  return m;
}

std::shared_ptr<const std::vector<std::uint8_t>> key_mask(std::size_t t_q, const std::vector<std::uint8_t>& keys) {
  auto m = std::make_shared<std::vector<std::uint8_t>>(t_q * keys.size(), 0);
  for (std::size_t i = 0; i < t_q; ++i)
    for (std::size_t j = 0; j < keys.size(); ++j) (*m)[i * keys.size() + j] = keys[j] ? 1 : 0;
  return m;
}

Var relative_attention(Var q, Var k, Var v, const Var* rel, int max_rel,
                       std::shared_ptr<const std::vector<std::uint8_t>> mask, Matrix* weights_out) {
  Var scores = nn::matmul_nt(q, k);
  if (rel) scores = nn::add(scores, nn::relative_logits(q, *rel, max_rel));
  scores = nn::scale(scores, 1.0 / std::sqrt(static_cast<double>(q.cols())));
  Var weights = nn::masked_softmax(scores, std::move(mask));
  if (weights_out) *weights_out = weights.value();
  return nn::matmul(weights, v);
}

AmtModel::AmtModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  init(seed);
  positional_ = nn::sinusoidal_encoding(config_.max_len, config_.d_model);
}

AmtModel::AmtModel(const ModelConfig& config, nn::ParamStore params) : config_(config), params_(std::move(params)) {
  config_.validate();
  check_shapes();
  positional_ = nn::sinusoidal_encoding(config_.max_len, config_.d_model);
}

namespace {

struct Shape {
  std::string name;
  std::size_t rows, cols;
};

std::vector<Shape> expected_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, dh = c.d_head();
  std::vector<Shape> s;
  s.push_back({"input.mean", 1, static_cast<std::size_t>(c.video_dim())});
  s.push_back({"input.std", 1, static_cast<std::size_t>(c.video_dim())});
  s.push_back({"emb.quality", kQualityRows, d});
  s.push_back({"emb.root", kRootRows, d});
  s.push_back({"emb.chord.w", d + 1, d});
  s.push_back({"emb.chord.b", 1, d});
  s.push_back({"video.fc.w", static_cast<std::size_t>(c.video_dim()), d});
  s.push_back({"video.fc.b", 1, d});
  auto attn = [&](const std::string& pre) {
    for (const char* w : {"q", "k", "v", "o"}) {
      s.push_back({pre + ".w" + w, d, d});
      s.push_back({pre + ".b" + w, 1, d});
    }
  };
  auto ln = [&](const std::string& pre) {
    s.push_back({pre + ".g", 1, d});
    s.push_back({pre + ".b", 1, d});
  };
  auto ff = [&](const std::string& pre) {
    s.push_back({pre + ".w1", d, f});
    s.push_back({pre + ".b1", 1, f});
    s.push_back({pre + ".w2", f, d});
    s.push_back({pre + ".b2", 1, d});
  };
  for (int l = 0; l < c.n_layers_enc; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    ln(pre + ".ln1");
    attn(pre + ".attn");
    ln(pre + ".ln2");
    ff(pre + ".ff");
  }
  ln("enc.ln");
  for (int l = 0; l < c.n_layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    ln(pre + ".ln1");
    attn(pre + ".self");
    if (c.relative)
      for (int h = 0; h < c.n_heads; ++h)
        s.push_back({pre + ".self.rel" + std::to_string(h), static_cast<std::size_t>(2 * c.max_rel_dist - 1), dh});
    ln(pre + ".ln2");
    attn(pre + ".cross");
    ln(pre + ".ln3");
    ff(pre + ".ff");
  }
  ln("dec.ln");
  s.push_back({"head.w", d, static_cast<std::size_t>(c.vocab_size)});
  s.push_back({"head.b", 1, static_cast<std::size_t>(c.vocab_size)});
  return s;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void AmtModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& sh : expected_shapes(config_)) {
    Matrix m(sh.rows, sh.cols);
    bool trainable = true;
    if (sh.name == "input.mean") {
      trainable = false;
    } else if (sh.name == "input.std") {
      m.fill(1.0);
      trainable = false;
    } else if (ends_with(sh.name, ".g")) {
      m.fill(1.0);
    } else if (sh.rows == 1) {
      // biases and layer-norm offsets start at zero
    } else if (sh.name.find(".rel") != std::string::npos || (sh.name.rfind("emb.", 0) == 0 && sh.name != "emb.chord.w")) {
      std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(sh.cols)));
      for (double& v : m.storage()) v = n(rng);
    } else {
      m = nn::glorot(sh.rows, sh.cols, rng);
    }
    params_.add(sh.name, std::move(m), trainable);
  }
}

void AmtModel::check_shapes() const {
  const auto shapes = expected_shapes(config_);
  if (shapes.size() != params_.size())
    throw SchemaError("model expects " + std::to_string(shapes.size()) + " tensors, got " +
                      std::to_string(params_.size()));
  for (const auto& sh : shapes) {
    const auto& prm = params_.get(sh.name);
    if (prm.value.rows() != sh.rows || prm.value.cols() != sh.cols)
      throw SchemaError("tensor '" + sh.name + "' has shape " + prm.value.shape_string() + ", expected " +
                        std::to_string(sh.rows) + "x" + std::to_string(sh.cols));
    if (!nn::all_finite(prm.value)) throw SchemaError("tensor '" + sh.name + "' has non-finite values");
  }
}

void AmtModel::set_input_normalization(const std::vector<double>& mean, const std::vector<double>& stddev) {
  const auto n = static_cast<std::size_t>(config_.video_dim());
  if (mean.size() != n || stddev.size() != n) throw SchemaError("normalization width mismatch");
  auto& m = params_.get("input.mean").value;
  auto& s = params_.get("input.std").value;
  for (std::size_t i = 0; i < n; ++i) {
    m(0, i) = mean[i];
    s(0, i) = stddev[i] > 1e-8 ? stddev[i] : 1.0;
  }
}

void AmtModel::fit_input_normalization(const std::vector<VideoInput>& inputs) {
  const auto n = static_cast<std::size_t>(config_.video_dim());
  std::vector<double> sum(n, 0.0), sq(n, 0.0);
  double count = 0.0;
  for (const auto& in : inputs)
    for (std::size_t t = 0; t < in.features.rows(); ++t) {
      if (!in.mask[t]) continue;
      for (std::size_t c = 0; c < n; ++c) {
        sum[c] += in.features(t, c);
        sq[c] += in.features(t, c) * in.features(t, c);
      }
      count += 1.0;
    }
  if (count == 0.0) return;
  std::vector<double> mean(n), sd(n);
  for (std::size_t c = 0; c < n; ++c) {
    mean[c] = sum[c] / count;
    sd[c] = std::sqrt(std::max(0.0, sq[c] / count - mean[c] * mean[c]));
  }
  set_input_normalization(mean, sd);
}

Var AmtModel::embed_music(Graph& g, const std::vector<int>& tokens, const music::Key& key, const ForwardOptions& opts) {
  const std::size_t t = tokens.size();
  if (t == 0 || t > static_cast<std::size_t>(config_.max_len))
    throw RangeError("decoder length " + std::to_string(t) + " outside [1, " + std::to_string(config_.max_len) + "]");
  std::vector<int> q(t), r(t);
  for (std::size_t i = 0; i < t; ++i) {
    if (tokens[i] < 0 || tokens[i] >= config_.vocab_size)
      throw RangeError("token id " + std::to_string(tokens[i]) + " out of range");
    q[i] = quality_row(tokens[i]);
    r[i] = root_row(tokens[i]);
  }
  Var chord = nn::add(nn::gather_rows(p(g, "emb.quality"), std::move(q)), nn::gather_rows(p(g, "emb.root"), std::move(r)));
  Var k = g.constant(Matrix(t, 1, key.mode == music::Mode::kMajor ? 1.0 : 0.0));
  const Var parts[] = {chord, k};
  Var x = nn::add_row(nn::matmul(nn::concat_cols(parts), p(g, "emb.chord.w")), p(g, "emb.chord.b"));
  Matrix pe(t, config_.d_model);
  std::copy_n(positional_.data(), pe.size(), pe.data());
  x = nn::add(x, g.constant(std::move(pe)));
  if (opts.training) x = nn::dropout(x, config_.dropout, *opts.rng);
  return x;
}

Var AmtModel::embed_video(Graph& g, const Matrix& features, const ForwardOptions& opts) {
  const std::size_t t = features.rows();
  if (features.cols() != static_cast<std::size_t>(config_.video_dim()))
    throw SchemaError("video features have " + std::to_string(features.cols()) + " columns, model expects " +
                      std::to_string(config_.video_dim()));
  if (t == 0 || t > static_cast<std::size_t>(config_.max_len))
    throw RangeError("video length " + std::to_string(t) + " outside [1, " + std::to_string(config_.max_len) + "]");
  const auto& mean = params_.get("input.mean").value;
  const auto& sd = params_.get("input.std").value;
  Matrix x(t, features.cols());
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < features.cols(); ++c) x(i, c) = (features(i, c) - mean(0, c)) / sd(0, c);
  Var h = nn::add_row(nn::matmul(g.constant(std::move(x)), p(g, "video.fc.w")), p(g, "video.fc.b"));
  Matrix pe(t, config_.d_model);
  std::copy_n(positional_.data(), pe.size(), pe.data());
  h = nn::add(h, g.constant(std::move(pe)));
  if (opts.training) h = nn::dropout(h, config_.dropout, *opts.rng);
  return h;
}

Var AmtModel::norm(Graph& g, const std::string& prefix, Var x) {
  return nn::layer_norm(x, p(g, prefix + ".g"), p(g, prefix + ".b"));
}

Var AmtModel::feed_forward(Graph& g, const std::string& prefix, Var x, const ForwardOptions& opts) {
  Var h = nn::relu(nn::add_row(nn::matmul(x, p(g, prefix + ".w1")), p(g, prefix + ".b1")));
  if (opts.training) h = nn::dropout(h, config_.dropout, *opts.rng);
  return nn::add_row(nn::matmul(h, p(g, prefix + ".w2")), p(g, prefix + ".b2"));
}

Var AmtModel::attention_block(Graph& g, const std::string& prefix, Var xq, Var xkv,
                              std::shared_ptr<const std::vector<std::uint8_t>> mask, bool relative,
                              std::vector<Matrix>* trace) {
  const std::size_t dh = config_.d_head();
  Var q = nn::add_row(nn::matmul(xq, p(g, prefix + ".wq")), p(g, prefix + ".bq"));
  Var k = nn::add_row(nn::matmul(xkv, p(g, prefix + ".wk")), p(g, prefix + ".bk"));
  Var v = nn::add_row(nn::matmul(xkv, p(g, prefix + ".wv")), p(g, prefix + ".bv"));
  std::vector<Var> heads;
  for (int h = 0; h < config_.n_heads; ++h) {
    Var qh = nn::slice_cols(q, h * dh, dh);
    Var kh = nn::slice_cols(k, h * dh, dh);
    Var vh = nn::slice_cols(v, h * dh, dh);
    std::optional<Var> rel;
    if (relative) rel = p(g, prefix + ".rel" + std::to_string(h));
    Matrix weights;
    heads.push_back(relative_attention(qh, kh, vh, rel ? &*rel : nullptr, config_.max_rel_dist, mask,
                                       trace ? &weights : nullptr));
    if (trace) trace->push_back(std::move(weights));
  }
  Var merged = heads.size() == 1 ? heads.front() : nn::concat_cols(heads);
  return nn::add_row(nn::matmul(merged, p(g, prefix + ".wo")), p(g, prefix + ".bo"));
}

Var AmtModel::encode(Graph& g, Var video_emb, const std::vector<std::uint8_t>& mask, const ForwardOptions& opts) {
  if (mask.size() != video_emb.rows()) throw SchemaError("encoder mask length mismatch");
  const auto attn_mask = key_mask(mask.size(), mask);
  Var x = video_emb;
  for (int l = 0; l < config_.n_layers_enc; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    Var h = norm(g, pre + ".ln1", x);
    Var a = attention_block(g, pre + ".attn", h, h, attn_mask, false,
                            opts.trace ? &opts.trace->encoder_self : nullptr);
    if (opts.training) a = nn::dropout(a, config_.dropout, *opts.rng);
    x = nn::add(x, a);
    Var f = feed_forward(g, pre + ".ff", norm(g, pre + ".ln2", x), opts);
    if (opts.training) f = nn::dropout(f, config_.dropout, *opts.rng);
    x = nn::add(x, f);
  }
  return norm(g, "enc.ln", x);
}

Var AmtModel::decode(Graph& g, Var music_emb, Var memory, const std::vector<std::uint8_t>& memory_mask,
                     const ForwardOptions& opts) {
  if (memory_mask.size() != memory.rows()) throw SchemaError("memory mask length mismatch");
  const std::size_t t = music_emb.rows();
  const auto self_mask = causal_mask(t);
  const auto cross_mask = key_mask(t, memory_mask);
  Var x = music_emb;
  for (int l = 0; l < config_.n_layers_dec; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    Var h = norm(g, pre + ".ln1", x);
    Var a = attention_block(g, pre + ".self", h, h, self_mask, config_.relative,
                            opts.trace ? &opts.trace->decoder_self : nullptr);
    if (opts.training) a = nn::dropout(a, config_.dropout, *opts.rng);
    x = nn::add(x, a);
    Var c = attention_block(g, pre + ".cross", norm(g, pre + ".ln2", x), memory, cross_mask, false,
                            opts.trace ? &opts.trace->decoder_cross : nullptr);
    if (opts.training) c = nn::dropout(c, config_.dropout, *opts.rng);
    x = nn::add(x, c);
    Var f = feed_forward(g, pre + ".ff", norm(g, pre + ".ln3", x), opts);
    if (opts.training) f = nn::dropout(f, config_.dropout, *opts.rng);
    x = nn::add(x, f);
  }
  x = norm(g, "dec.ln", x);
  return nn::add_row(nn::matmul(x, p(g, "head.w")), p(g, "head.b"));
}

Var AmtModel::forward(Graph& g, const std::vector<int>& decoder_tokens, const music::Key& key, const VideoInput& video,
                      const ForwardOptions& opts) {
  if (opts.training && config_.dropout > 0.0 && !opts.rng) throw Error("training forward with dropout needs an rng");
  Var memory = encode(g, embed_video(g, video.features, opts), video.mask, opts);
  return decode(g, embed_music(g, decoder_tokens, key, opts), memory, video.mask, opts);
}

Matrix AmtModel::logits(const std::vector<int>& decoder_tokens, const music::Key& key, const VideoInput& video,
                        AttentionTrace* trace) {
  Graph g(false);
  ForwardOptions opts;
  opts.trace = trace;
  return forward(g, decoder_tokens, key, video, opts).value();
}

int select_next_token(std::span<const double> logits, const std::vector<int>& history,
                      const GenerationConstraints& constraints, std::mt19937_64* rng) {
  const int n = static_cast<int>(logits.size());
  std::vector<int> order;
  for (int i = 0; i < n; ++i)
    if (i != music::kPadId && i != music::kSosId) order.push_back(i);
  // Highest logit first; lower id first on ties.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });

  if (constraints.temperature > 0.0 && rng) {
    // Sampling: draw from the softmax, then fall back through the ranking if the draw breaks a limit.
    const double mx = logits[order.front()];
    std::vector<double> w(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) w[i] = std::exp((logits[order[i]] - mx) / constraints.temperature);
    std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
    const std::size_t drawn = dist(*rng);
    std::rotate(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(drawn), order.begin() + static_cast<std::ptrdiff_t>(drawn) + 1);
  }

  auto violates = [&](int token) {
    const int limit = token == music::kSilenceId ? constraints.max_repeat_silence : constraints.max_repeat_chord;
    int run = 0;
    for (auto it = history.rbegin(); it != history.rend() && *it == token; ++it) ++run;
    return run >= limit;
  };
  for (int token : order)
    if (!violates(token)) return token;
  return order.front();
}

std::vector<music::ChordLabel> AmtModel::generate(const VideoInput& video, const music::Key& key,
                                                  const std::vector<music::ChordLabel>& primer,
                                                  const GenerationConstraints& constraints, std::mt19937_64* rng) {
  constraints.validate();
  const std::size_t t = video.features.rows();
  if (primer.size() >= t && !(primer.empty() && t == 0))
    throw RangeError("primer has " + std::to_string(primer.size()) + " chords, video has only " + std::to_string(t) +
                     " seconds");
  Graph mem_graph(false);
  Var memory = encode(mem_graph, embed_video(mem_graph, video.features), video.mask);

  std::vector<int> history;
  for (const auto& c : primer) history.push_back(music::tokenize(c));
  while (history.size() < t) {
    std::vector<int> input{music::kSosId};
    input.insert(input.end(), history.begin(), history.end());
    Graph g(false);
    Var mem = g.constant(memory.value());
    Var logits = decode(g, embed_music(g, input, key), mem, video.mask);
    history.push_back(select_next_token(logits.value().row(input.size() - 1), history, constraints, rng));
  }
  std::vector<music::ChordLabel> out;
  out.reserve(t);
  for (int id : history) out.push_back(music::detokenize_label(id));
  return out;
}

}  // namespace v2m::amt
