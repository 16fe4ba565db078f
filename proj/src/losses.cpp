#include "v2m/losses.hpp"

#include "v2m/error.hpp"
#include "v2m/music_theory.hpp"

namespace v2m::train {

void LossWeights::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw RangeError("lambda must be in [0,1], got " + std::to_string(lambda));
}

double chord_loss(const nn::Matrix& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
  nn::Graph g(false);
  return nn::cross_entropy(g.constant(logits), targets, mask).value()(0, 0);
}

EmotionTarget emotion_target(const features::EmotionProbs& emotion, const EmotionChordTable& table) {
  EmotionTarget t;
  t.multi_hot.assign(music::kVocabSize, 0.0);
  const auto top = features::top_emotion(emotion);
  if (top == features::Emotion::kNeutral) return t;
  t.active = true;
  const auto& row = table.row(top);
  for (int id = music::kFirstChordId; id < music::kVocabSize; ++id)
    if (row[music::token_quality_index(id)]) t.multi_hot[id] = 1.0;
  return t;
}

EmotionTargets emotion_targets(std::span<const features::EmotionProbs> emotions, const std::vector<std::uint8_t>& mask,
                               const EmotionChordTable& table) {
  if (mask.size() != emotions.size()) throw SchemaError("emotion/mask length mismatch");
  EmotionTargets out;
  out.targets = nn::Matrix(emotions.size(), music::kVocabSize);
  out.active.assign(emotions.size(), 0);
  for (std::size_t t = 0; t < emotions.size(); ++t) {
    if (!mask[t]) continue;
    const auto target = emotion_target(emotions[t], table);
    if (!target.active) continue;
    out.active[t] = 1;
    std::copy(target.multi_hot.begin(), target.multi_hot.end(), out.targets.row(t).begin());
  }
  return out;
}

double emotion_loss(const nn::Matrix& logits, const nn::Matrix& targets, const std::vector<std::uint8_t>& active) {
  nn::Graph g(false);
  return nn::multi_hot_bce(g.constant(logits), targets, active).value()(0, 0);
}

double total_loss(double chord, double emotion, const LossWeights& w) {
  w.validate();
  return w.lambda * chord + (1.0 - w.lambda) * emotion;
}

nn::Var total_loss(nn::Var chord, nn::Var emotion, const LossWeights& w) {
  w.validate();
  if (w.lambda == 1.0) return chord;
  if (w.lambda == 0.0) return emotion;
  return nn::add(nn::scale(chord, w.lambda), nn::scale(emotion, 1.0 - w.lambda));
}

}  // namespace v2m::train
