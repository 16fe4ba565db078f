#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "v2m/emotion_chord_table.hpp"
#include "v2m/features.hpp"
#include "v2m/tensor.hpp"

namespace v2m::train {

// 1 + classes scoring strictly higher + equal-scoring classes with a lower id.
int rank_of(std::span<const double> logits, int target);

// Fraction of (unmasked) rows whose target ranks within the top k.
double hits_at_k(const nn::Matrix& logits, const std::vector<int>& targets, int k,
                 const std::vector<std::uint8_t>& mask = {});

double rmse(std::span<const double> predicted, std::span<const double> actual);

struct CountMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<long>> counts;  // [target][predicted]

  explicit CountMatrix(std::vector<std::string> l)
      : labels(std::move(l)), counts(labels.size(), std::vector<long>(labels.size(), 0)) {}
  long row_sum(std::size_t r) const;
  long total() const;
  void write_csv(std::ostream& out) const;
};

struct ConfusionMatrices {
  CountMatrix chord;    // vocabulary x vocabulary
  CountMatrix root;     // 12 roots + silence
  CountMatrix quality;  // quality implied by the video emotion vs generated quality
};

// Token sequences for predictions and targets plus the per-step video emotion.
// The third matrix credits a generated quality on the diagonal when it belongs
// to the emotion's quality row; otherwise the count lands in the row of the
// first quality (vocabulary order) of that emotion's row. Neutral steps and
// silences are skipped there.
ConfusionMatrices confusion_matrices(const std::vector<int>& predictions, const std::vector<int>& targets,
                                     std::span<const features::EmotionProbs> emotions, const EmotionChordTable& table);

}  // namespace v2m::train
