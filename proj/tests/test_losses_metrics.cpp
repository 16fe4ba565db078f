#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "v2m/error.hpp"
#include "v2m/losses.hpp"
#include "v2m/metrics.hpp"
#include "v2m/optimizer.hpp"

using namespace v2m;
using namespace v2m::train;
using features::Emotion;
using features::EmotionProbs;
using music::Quality;
using nn::Matrix;

namespace {

EmotionProbs peak(Emotion e) {
  EmotionProbs p{};
  p.fill(0.1);
  p[static_cast<std::size_t>(e)] = 0.5;
  return p;
}

int token(int root, Quality q) { return music::tokenize(music::ChordLabel{music::Chord{music::PitchClass(root), q}}); }

// Position of target after sorting classes by (logit desc, id asc).
int brute_rank(std::span<const double> row, int target) {
  std::vector<int> ids(row.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) { return row[a] != row[b] ? row[a] > row[b] : a < b; });
  return static_cast<int>(std::find(ids.begin(), ids.end(), target) - ids.begin()) + 1;
}

}  // namespace

TEST_CASE("the emotion table") {
  const auto t = EmotionChordTable::standard();
  using enum Quality;
  auto row_is = [&](Emotion e, std::initializer_list<Quality> qs) {
    for (Quality q : music::kAllQualities)
      CHECK(t.contains(e, q) == (std::find(qs.begin(), qs.end(), q) != qs.end()));
    CHECK(t.row_size(e) == static_cast<int>(qs.size()));
  };
  row_is(Emotion::kExciting, {kMaj, kSus4, kDom7});
  row_is(Emotion::kFearful, {kDim, kMin7, kDim7, kHdim7});
  row_is(Emotion::kTense, {kDim, kSus4, kMin7, kDom7});
  row_is(Emotion::kSad, {kMin7, kMin, kSus2});
  row_is(Emotion::kRelaxing, {kMaj, kMaj6, kMaj7});
  CHECK(t.row_size(Emotion::kNeutral) == 0);
  for (Emotion e : {Emotion::kExciting, Emotion::kFearful, Emotion::kTense, Emotion::kSad, Emotion::kRelaxing}) {
    CHECK_FALSE(t.contains(e, kAug));
    CHECK_FALSE(t.contains(e, kMin6));
  }
}

TEST_CASE("emotion targets") {
  const auto table = EmotionChordTable::standard();
  const auto sad = emotion_target(peak(Emotion::kSad), table);
  CHECK(sad.active);
  CHECK(std::accumulate(sad.multi_hot.begin(), sad.multi_hot.end(), 0.0) == 36.0);
  CHECK(sad.multi_hot[token(9, Quality::kMin)] == 1.0);
  CHECK(sad.multi_hot[token(0, Quality::kMaj)] == 0.0);
  for (int special : {music::kPadId, music::kSosId, music::kSilenceId}) CHECK(sad.multi_hot[special] == 0.0);

  const auto relaxing = emotion_target(peak(Emotion::kRelaxing), table);
  for (int root = 0; root < 12; ++root) {
    CHECK(relaxing.multi_hot[token(root, Quality::kMaj)] == 1.0);
    CHECK(relaxing.multi_hot[token(root, Quality::kMaj6)] == 1.0);
    CHECK(relaxing.multi_hot[token(root, Quality::kMaj7)] == 1.0);
    CHECK(relaxing.multi_hot[token(root, Quality::kMin)] == 0.0);
  }
  for (Emotion e : {Emotion::kExciting, Emotion::kFearful, Emotion::kTense}) {
    const auto target = emotion_target(peak(e), table);
    CHECK(std::accumulate(target.multi_hot.begin(), target.multi_hot.end(), 0.0) == 12.0 * table.row_size(e));
  }

  const auto neutral = emotion_target(peak(Emotion::kNeutral), table);
  CHECK_FALSE(neutral.active);
  CHECK(std::all_of(neutral.multi_hot.begin(), neutral.multi_hot.end(), [](double v) { return v == 0.0; }));

  const std::vector<EmotionProbs> seq = {peak(Emotion::kSad), peak(Emotion::kNeutral), peak(Emotion::kTense)};
  const auto targets = emotion_targets(seq, {1, 1, 0}, table);
  CHECK(targets.active == std::vector<std::uint8_t>{1, 0, 0});
  CHECK_THROWS(emotion_targets(seq, {1, 1}, table));
}

TEST_CASE("loss values") {
  const Matrix uniform(4, music::kVocabSize, 0.0);
  CHECK(chord_loss(uniform, {3, 4, 5, 6}, {1, 1, 1, 1}) == doctest::Approx(std::log(159.0)).epsilon(1e-14));
  CHECK(std::log(159.0) == doctest::Approx(5.0689).epsilon(1e-4));
  CHECK_THROWS(chord_loss(uniform, {3, 4, 5, 6}, {0, 0, 0, 0}));

  Matrix z(2, music::kVocabSize, 0.0);
  z(0, 10) = 3.0;
  const double one = chord_loss(z, {10, 11}, {1, 0});
  z(1, 50) = 40.0;
  CHECK(chord_loss(z, {10, 11}, {1, 0}) == one);

  Matrix sharp(1, music::kVocabSize, -50.0);
  sharp(0, 7) = 50.0;
  CHECK(chord_loss(sharp, {7}, {1}) < 1e-30);

  const auto sad = emotion_target(peak(Emotion::kSad), EmotionChordTable::standard());
  Matrix y(2, music::kVocabSize);
  std::copy(sad.multi_hot.begin(), sad.multi_hot.end(), y.row(0).begin());
  CHECK(emotion_loss(Matrix(2, music::kVocabSize), y, {1, 1}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(emotion_loss(Matrix(2, music::kVocabSize), y, {0, 0}) == 0.0);
  Matrix saturated(2, music::kVocabSize, -40.0);
  for (std::size_t j = 0; j < y.cols(); ++j)
    if (y(0, j) == 1.0) saturated(0, j) = 40.0;
  CHECK(emotion_loss(saturated, y, {1, 0}) < 1e-15);
}

TEST_CASE("total loss") {
  CHECK(total_loss(2.0, 1.0, LossWeights{0.4}) == doctest::Approx(1.4).epsilon(1e-12));
  CHECK(std::abs(total_loss(2.0, 1.0, LossWeights{0.4}) - 1.4) <= 1e-12);
  CHECK(total_loss(2.75, 9.0, LossWeights{1.0}) == 2.75);
  CHECK(total_loss(2.75, 9.0, LossWeights{0.0}) == 9.0);
  CHECK_THROWS_AS(total_loss(1.0, 1.0, LossWeights{1.5}), RangeError);
  CHECK_THROWS_AS(total_loss(1.0, 1.0, LossWeights{-0.1}), RangeError);
  // Affine in each component.
  const LossWeights w{0.3};
  CHECK(total_loss(5.0, 1.0, w) - total_loss(4.0, 1.0, w) == doctest::Approx(0.3));
  CHECK(total_loss(4.0, 2.0, w) - total_loss(4.0, 1.0, w) == doctest::Approx(0.7));
}

TEST_CASE("ranks and hits") {
  const std::vector<double> row = {0.5, 2.0, 2.0, -1.0, 3.0};
  CHECK(rank_of(row, 4) == 1);
  CHECK(rank_of(row, 1) == 2);
  CHECK(rank_of(row, 2) == 3);
  CHECK(rank_of(row, 3) == 5);
  CHECK_THROWS(rank_of(row, 5));

  // Targets placed at ranks 1, 2, 4, 6.
  Matrix z = Matrix::from_rows({{6, 5, 4, 3, 2, 1}, {6, 5, 4, 3, 2, 1}, {6, 5, 4, 3, 2, 1}, {6, 5, 4, 3, 2, 1}});
  const std::vector<int> targets = {0, 1, 3, 5};
  CHECK(hits_at_k(z, targets, 3) == 0.5);
  CHECK(hits_at_k(z, targets, 1) == 0.25);
  CHECK(hits_at_k(z, targets, 6) == 1.0);
  CHECK(hits_at_k(z, targets, 3, {1, 0, 0, 1}) == 0.5);
  CHECK(hits_at_k(z, targets, 3, {0, 1, 1, 0}) == 0.5);
  CHECK_THROWS(hits_at_k(z, targets, 0));

  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> u(-3, 3), pick(0, music::kVocabSize - 1);
  Matrix logits(100, music::kVocabSize);
  std::vector<int> tgt(100);
  for (auto& v : logits.storage()) v = u(rng);
  for (auto& t : tgt) t = pick(rng);
  for (int k : {1, 3, 5, 20}) {
    long hits = 0;
    for (std::size_t r = 0; r < 100; ++r) {
      CHECK(rank_of(logits.row(r), tgt[r]) == brute_rank(logits.row(r), tgt[r]));
      hits += brute_rank(logits.row(r), tgt[r]) <= k;
    }
    CHECK(hits_at_k(logits, tgt, k) == static_cast<double>(hits) / 100.0);
  }
  Matrix scaled = logits;
  for (auto& v : scaled.storage()) v *= 2.5;
  double prev = 0.0;
  for (int k = 1; k <= music::kVocabSize; ++k) {
    const double h = hits_at_k(logits, tgt, k);
    CHECK(h >= prev);
    CHECK(hits_at_k(scaled, tgt, k) == h);
    prev = h;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("rmse") {
  const std::vector<double> a = {0, 0}, b = {3, 4};
  CHECK(rmse(a, b) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-14));
  CHECK(rmse(a, b) == doctest::Approx(3.5355).epsilon(1e-4));
  CHECK(rmse(b, a) == rmse(a, b));
  CHECK(rmse(b, b) == 0.0);
  CHECK_THROWS(rmse(a, std::vector<double>{1.0}));
  CHECK_THROWS(rmse(std::vector<double>{}, std::vector<double>{}));
}

TEST_CASE("confusion matrices") {
  const auto table = EmotionChordTable::standard();
  const int c_maj = token(0, Quality::kMaj), a_min = token(9, Quality::kMin), g_dom = token(7, Quality::kDom7);
  const std::vector<int> pred = {c_maj, c_maj, a_min, music::kSilenceId, g_dom};
  const std::vector<int> gold = {c_maj, a_min, a_min, music::kSilenceId, c_maj};
  const std::vector<EmotionProbs> emo = {peak(Emotion::kRelaxing), peak(Emotion::kSad), peak(Emotion::kSad),
                                         peak(Emotion::kSad), peak(Emotion::kNeutral)};
  const auto cm = confusion_matrices(pred, gold, emo, table);

  CHECK(cm.chord.labels.size() == static_cast<std::size_t>(music::kVocabSize));
  CHECK(cm.root.labels.size() == 13);
  CHECK(cm.quality.labels.size() == 13);
  CHECK(cm.chord.counts[a_min][c_maj] == 1);
  CHECK(cm.chord.counts[c_maj][c_maj] == 1);
  CHECK(cm.chord.counts[c_maj][g_dom] == 1);
  CHECK(cm.chord.total() == 5);
  CHECK(cm.chord.row_sum(c_maj) == 2);
  CHECK(cm.chord.row_sum(a_min) == 2);
  CHECK(cm.root.counts[9][0] == 1);
  CHECK(cm.root.counts[12][12] == 1);
  CHECK(cm.root.counts[0][7] == 1);
  CHECK(cm.root.total() == 5);

  // Relaxing + maj: credited on the diagonal. Sad + maj: off the diagonal in sad's first quality row.
  // Sad + min: diagonal. Silence and neutral steps are skipped.
  const auto qi = [](Quality q) { return static_cast<std::size_t>(q); };
  CHECK(cm.quality.counts[qi(Quality::kMaj)][qi(Quality::kMaj)] == 1);
  CHECK(cm.quality.counts[qi(Quality::kMin7)][qi(Quality::kMaj)] == 1);
  CHECK(cm.quality.counts[qi(Quality::kMin)][qi(Quality::kMin)] == 1);
  CHECK(cm.quality.total() == 3);

  const auto perfect = confusion_matrices(gold, gold, emo, table);
  for (std::size_t r = 0; r < perfect.chord.counts.size(); ++r)
    for (std::size_t c = 0; c < perfect.chord.counts.size(); ++c)
      if (r != c) CHECK(perfect.chord.counts[r][c] == 0);

  std::ostringstream csv;
  cm.root.write_csv(csv);
  std::size_t lines = 0;
  for (char ch : csv.str()) lines += ch == '\n';
  CHECK(lines == 14);
  CHECK_THROWS(confusion_matrices(pred, std::vector<int>{1}, emo, table));
}

TEST_CASE("learning-rate schedule") {
  OptimizerSpec spec;
  CHECK(scheduled_lr(spec, 4000, 512) == doctest::Approx(std::pow(512.0, -0.5) * std::pow(4000.0, -0.5)));
  CHECK(scheduled_lr(spec, 1, 512) == doctest::Approx(std::pow(512.0, -0.5) * std::pow(4000.0, -1.5)));
  CHECK(scheduled_lr(spec, 16000, 512) == doctest::Approx(std::pow(512.0, -0.5) / 126.49110640673517));
  for (int s = 1; s < 4000; s += 37) CHECK(scheduled_lr(spec, s + 1, 512) > scheduled_lr(spec, s, 512));
  for (int s = 4000; s < 20000; s += 313) CHECK(scheduled_lr(spec, s + 1, 512) < scheduled_lr(spec, s, 512));
  spec.base_lr = 2.0;
  CHECK(scheduled_lr(spec, 100, 64) == doctest::Approx(2.0 * scheduled_lr(OptimizerSpec{}, 100, 64)));
  spec.beta2 = 1.0;
  CHECK_THROWS(spec.validate());
}

TEST_CASE("Adam update") {
  nn::ParamStore ps;
  ps.add("w", Matrix::from_rows({{1.0, -2.0}}));
  ps.add("frozen", Matrix(1, 1, 5.0), false);
  OptimizerSpec spec;
  Adam adam(spec);

  double m = 0, v = 0, w = 1.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = 0.5 * t;
    ps.get("w").grad = Matrix::from_rows({{g, -g}});
    ps.get("frozen").grad = Matrix(1, 1, 1.0);
    adam.step(ps, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.98 * v + 0.02 * g * g;
    w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.98, t))) + 1e-9);
    CHECK(ps.get("w").value(0, 0) == doctest::Approx(w).epsilon(1e-14));
  }
  CHECK(ps.get("frozen").value(0, 0) == 5.0);
  CHECK(adam.steps() == 3);

  // State round trip continues identically.
  Adam resumed(spec);
  resumed.load_state(adam.state());
  CHECK(resumed.steps() == 3);
  nn::ParamStore copy;
  copy.add("w", ps.get("w").value);
  copy.get("w").grad = Matrix::from_rows({{0.1, 0.2}});
  ps.get("w").grad = Matrix::from_rows({{0.1, 0.2}});
  adam.step(ps, 0.01);
  resumed.step(copy, 0.01);
  CHECK(copy.get("w").value == ps.get("w").value);

  nn::ParamStore bad;
  bad.add("q/w", Matrix(1, 1));
  CHECK_THROWS(resumed.load_state(bad));
}
