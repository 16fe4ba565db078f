#include "v2m/emotion_chord_table.hpp"

#include <initializer_list>

namespace v2m::train {

using features::Emotion;
using music::Quality;

EmotionChordTable EmotionChordTable::standard() {
  EmotionChordTable t;
  auto set = [&t](Emotion e, std::initializer_list<Quality> qs) {
    for (Quality q : qs) t.cells_[static_cast<int>(e)][static_cast<int>(q)] = true;
  };
  set(Emotion::kExciting, {Quality::kMaj, Quality::kSus4, Quality::kDom7});
  set(Emotion::kFearful, {Quality::kDim, Quality::kMin7, Quality::kDim7, Quality::kHdim7});
  set(Emotion::kTense, {Quality::kDim, Quality::kSus4, Quality::kMin7, Quality::kDom7});
  set(Emotion::kSad, {Quality::kMin7, Quality::kMin, Quality::kSus2});
  set(Emotion::kRelaxing, {Quality::kMaj, Quality::kMaj6, Quality::kMaj7});
  return t;
}

bool EmotionChordTable::contains(Emotion e, Quality q) const {
  return cells_[static_cast<int>(e)][static_cast<int>(q)];
}

const std::array<bool, music::kNumQualities>& EmotionChordTable::row(Emotion e) const {
  return cells_[static_cast<int>(e)];
}

int EmotionChordTable::row_size(Emotion e) const {
  int n = 0;
  for (bool b : row(e)) n += b;
  return n;
}

}  // namespace v2m::train
