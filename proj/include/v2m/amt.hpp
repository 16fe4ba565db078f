#pragma once

// Video-conditioned chord transformer: a video encoder, a chord decoder with
// relative-position masked self-attention and cross-attention into the
// encoded video, and greedy constrained generation.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "v2m/autograd.hpp"
#include "v2m/dataset.hpp"
#include "v2m/music_theory.hpp"

namespace v2m::amt {

struct ModelConfig {
  int d_model = 512;
  int n_heads = 8;
  int n_layers_enc = 6;
  int n_layers_dec = 6;
  int d_ff = 2048;
  int d_sem = 512;
  int vocab_size = music::kVocabSize;
  int max_len = 300;
  int max_rel_dist = 300;
  double dropout = 0.1;
  // Off gives a plain causal decoder (no relative embeddings).
  bool relative = true;

  int d_head() const { return d_model / n_heads; }
  // scene offset, motion, six emotion probabilities, semantic vector
  int video_dim() const { return 8 + d_sem; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Rows of the chord-quality and chord-root embedding tables.
inline constexpr int kQualityRows = music::kNumQualities + 3;  // + silence, pad, sos
inline constexpr int kRootRows = 12 + 3;

int quality_row(int token);
int root_row(int token);

// Per-second video inputs in embedding-column order.
struct VideoInput {
  nn::Matrix features;               // T x video_dim
  std::vector<std::uint8_t> mask;    // T, 1 = real step
};

VideoInput video_input(const data::FeatureRecord& r);
VideoInput video_input(const data::PaddedExample& ex);

struct GenerationConstraints {
  int max_repeat_chord = 2;
  int max_repeat_silence = 2;
  // > 0 switches from greedy argmax to sampling at this temperature.
  double temperature = 0.0;
  void validate() const;
};

// Softmax matrices captured from every attention head, in call order.
struct AttentionTrace {
  std::vector<nn::Matrix> encoder_self;
  std::vector<nn::Matrix> decoder_self;
  std::vector<nn::Matrix> decoder_cross;
};

struct ForwardOptions {
  bool training = false;             // enables dropout
  std::mt19937_64* rng = nullptr;    // dropout stream, required when training with dropout > 0
  AttentionTrace* trace = nullptr;
};

// softmax((Q K^T + S_rel) / sqrt(d)) V with S_rel[i][j] = Q_i . R[clip(j - i)], positions
// restricted by `mask` (row-major T_q x T_k, 1 = may attend). `rel` may be null.
nn::Var relative_attention(nn::Var q, nn::Var k, nn::Var v, const nn::Var* rel, int max_rel,
                           std::shared_ptr<const std::vector<std::uint8_t>> mask, nn::Matrix* weights_out = nullptr);

std::shared_ptr<const std::vector<std::uint8_t>> causal_mask(std::size_t t);
// Query rows x key columns, admitting keys with key_mask != 0.
std::shared_ptr<const std::vector<std::uint8_t>> key_mask(std::size_t t_q, const std::vector<std::uint8_t>& keys);

class AmtModel {
 public:
  AmtModel(const ModelConfig& config, std::uint64_t seed);
  // Adopts existing parameters (checkpoint load); shapes are checked.
  AmtModel(const ModelConfig& config, nn::ParamStore params);

  const ModelConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.trainable_count(); }

  // Per-column standardization applied to video features before projection.
  void set_input_normalization(const std::vector<double>& mean, const std::vector<double>& stddev);
  void fit_input_normalization(const std::vector<VideoInput>& inputs);

  nn::Var embed_music(nn::Graph& g, const std::vector<int>& tokens, const music::Key& key,
                      const ForwardOptions& opts = {});
  nn::Var embed_video(nn::Graph& g, const nn::Matrix& features, const ForwardOptions& opts = {});
  nn::Var encode(nn::Graph& g, nn::Var video_emb, const std::vector<std::uint8_t>& mask,
                 const ForwardOptions& opts = {});
  // Logits, one row per decoder input step.
  nn::Var decode(nn::Graph& g, nn::Var music_emb, nn::Var memory, const std::vector<std::uint8_t>& memory_mask,
                 const ForwardOptions& opts = {});

  nn::Var forward(nn::Graph& g, const std::vector<int>& decoder_tokens, const music::Key& key, const VideoInput& video,
                  const ForwardOptions& opts = {});

  // Convenience inference pass returning the logits matrix.
  nn::Matrix logits(const std::vector<int>& decoder_tokens, const music::Key& key, const VideoInput& video,
                    AttentionTrace* trace = nullptr);

  std::vector<music::ChordLabel> generate(const VideoInput& video, const music::Key& key,
                                          const std::vector<music::ChordLabel>& primer,
                                          const GenerationConstraints& constraints = {},
                                          std::mt19937_64* rng = nullptr);

 private:
  struct AttnRefs;
  void init(std::uint64_t seed);
  void check_shapes() const;
  nn::Var attention_block(nn::Graph& g, const std::string& prefix, nn::Var xq, nn::Var xkv,
                          std::shared_ptr<const std::vector<std::uint8_t>> mask, bool relative,
                          std::vector<nn::Matrix>* trace);
  nn::Var feed_forward(nn::Graph& g, const std::string& prefix, nn::Var x, const ForwardOptions& opts);
  nn::Var norm(nn::Graph& g, const std::string& prefix, nn::Var x);
  nn::Var p(nn::Graph& g, const std::string& name) { return g.param(params_.get(name)); }

  ModelConfig config_;
  nn::ParamStore params_;
  nn::Matrix positional_;
};

// Picks the next token from one logits row under the repeat limits. `history`
// holds the tokens emitted so far (primer included).
int select_next_token(std::span<const double> logits, const std::vector<int>& history,
                      const GenerationConstraints& constraints, std::mt19937_64* rng = nullptr);

}  // namespace v2m::amt
