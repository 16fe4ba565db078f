#include "v2m/metrics.hpp"

#include <cmath>

#include "v2m/error.hpp"
#include "v2m/music_theory.hpp"

namespace v2m::train {

int rank_of(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw RangeError("target " + std::to_string(target) + " out of range");
  const double v = logits[target];
  int rank = 1;
  for (std::size_t c = 0; c < logits.size(); ++c)
    if (logits[c] > v || (logits[c] == v && static_cast<int>(c) < target)) ++rank;
  return rank;
}

double hits_at_k(const nn::Matrix& logits, const std::vector<int>& targets, int k, const std::vector<std::uint8_t>& mask) {
  if (k < 1) throw RangeError("k must be >= 1");
  if (targets.size() != logits.rows() || (!mask.empty() && mask.size() != logits.rows()))
    throw SchemaError("hits_at_k length mismatch");
  long hits = 0, n = 0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (!mask.empty() && !mask[t]) continue;
    ++n;
    if (rank_of(logits.row(t), targets[t]) <= k) ++hits;
  }
  return n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
}

double rmse(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size())
    throw SchemaError("rmse length mismatch: " + std::to_string(predicted.size()) + " vs " + std::to_string(actual.size()));
  if (predicted.empty()) throw SchemaError("rmse of empty sequences");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += (predicted[i] - actual[i]) * (predicted[i] - actual[i]);
  return std::sqrt(s / static_cast<double>(predicted.size()));
}

long CountMatrix::row_sum(std::size_t r) const {
  long s = 0;
  for (long v : counts[r]) s += v;
  return s;
}

long CountMatrix::total() const {
  long s = 0;
  for (std::size_t r = 0; r < counts.size(); ++r) s += row_sum(r);
  return s;
}

void CountMatrix::write_csv(std::ostream& out) const {
  out << "target\\predicted";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (std::size_t r = 0; r < counts.size(); ++r) {
    out << labels[r];
    for (long v : counts[r]) out << ',' << v;
    out << '\n';
  }
}

namespace {

std::vector<std::string> token_labels() {
  std::vector<std::string> l;
  for (int id = 0; id < music::kVocabSize; ++id) {
    const auto tok = music::detokenize(id);
    if (const auto* s = std::get_if<music::Special>(&tok))
      l.push_back(*s == music::Special::kPad ? "PAD" : "SOS");
    else if (std::holds_alternative<music::Silence>(tok))
      l.push_back("N");
    else
      l.push_back(music::format_chord(std::get<music::Chord>(tok)));
  }
  return l;
}

std::vector<std::string> root_labels() {
  std::vector<std::string> l;
  for (int r = 0; r < 12; ++r) l.emplace_back(music::pitch_class_name(music::PitchClass(r)));
  l.emplace_back("N");
  return l;
}

std::vector<std::string> quality_labels() {
  std::vector<std::string> l;
  for (auto q : music::kAllQualities) l.emplace_back(music::quality_name(q));
  return l;
}

}  // namespace

ConfusionMatrices confusion_matrices(const std::vector<int>& predictions, const std::vector<int>& targets,
                                     std::span<const features::EmotionProbs> emotions, const EmotionChordTable& table) {
  if (predictions.size() != targets.size() || (!emotions.empty() && emotions.size() != targets.size()))
    throw SchemaError("confusion_matrices inputs are not aligned");
  ConfusionMatrices m{CountMatrix(token_labels()), CountMatrix(root_labels()), CountMatrix(quality_labels())};
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int p = predictions[t], y = targets[t];
    if (p < 0 || p >= music::kVocabSize || y < 0 || y >= music::kVocabSize)
      throw RangeError("token out of range in confusion_matrices");
    ++m.chord.counts[y][p];
    const int rp = music::token_root_index(p), ry = music::token_root_index(y);
    if (rp >= 0 && ry >= 0) ++m.root.counts[ry][rp];
    if (emotions.empty()) continue;
    const int qp = music::token_quality_index(p);
    const auto e = features::top_emotion(emotions[t]);
    if (qp < 0 || e == features::Emotion::kNeutral) continue;
    const auto& row = table.row(e);
    int target_q = qp;
    if (!row[qp])
      for (int q = 0; q < music::kNumQualities; ++q)
        if (row[q]) {
          target_q = q;
          break;
        }
    ++m.quality.counts[target_q][qp];
  }
  return m;
}

}  // namespace v2m::train
