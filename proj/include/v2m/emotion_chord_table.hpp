#pragma once

#include <array>

#include "v2m/features.hpp"
#include "v2m/music_theory.hpp"

namespace v2m::train {

// Which chord qualities carry each (non-neutral) video emotion.
class EmotionChordTable {
 public:
  static constexpr int kRows = 5;

  // The emotion/chord-type mapping used by the affective loss.
  static EmotionChordTable standard();

  bool contains(features::Emotion e, music::Quality q) const;
  // Neutral has no row; everything is false.
  const std::array<bool, music::kNumQualities>& row(features::Emotion e) const;
  int row_size(features::Emotion e) const;

 private:
  std::array<std::array<bool, music::kNumQualities>, kRows + 1> cells_{};
};

}  // namespace v2m::train
