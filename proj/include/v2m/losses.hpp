#pragma once

// Chord cross-entropy, the affective matching term and their weighted sum.

#include <cstdint>
#include <span>
#include <vector>

#include "v2m/autograd.hpp"
#include "v2m/emotion_chord_table.hpp"
#include "v2m/features.hpp"

namespace v2m::train {

struct LossWeights {
  double lambda = 0.4;  // weight on the chord term; 1 - lambda on the emotion term
  void validate() const;
};

double chord_loss(const nn::Matrix& logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask);

// Multi-hot over the vocabulary for the top emotion; inactive for neutral.
struct EmotionTarget {
  std::vector<double> multi_hot;
  bool active = false;
};

EmotionTarget emotion_target(const features::EmotionProbs& emotion, const EmotionChordTable& table);

struct EmotionTargets {
  nn::Matrix targets;                // T x vocab
  std::vector<std::uint8_t> active;  // real and non-neutral steps
};

EmotionTargets emotion_targets(std::span<const features::EmotionProbs> emotions, const std::vector<std::uint8_t>& mask,
                               const EmotionChordTable& table);

double emotion_loss(const nn::Matrix& logits, const nn::Matrix& targets, const std::vector<std::uint8_t>& active);

double total_loss(double chord, double emotion, const LossWeights& w);
nn::Var total_loss(nn::Var chord, nn::Var emotion, const LossWeights& w);

}  // namespace v2m::train
