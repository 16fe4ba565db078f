#include "v2m/arpeggio.hpp"

#include <algorithm>
#include <cmath>

#include "v2m/error.hpp"

namespace v2m::post {

namespace {

constexpr std::array<std::string_view, 5> kPatterns = {
    "1***2***3***4***",
    "1*2*3***4*2*3***",
    "1*2*3*4*3*2*3*4*",
    "12324*3*21234*3*",
    "1232432321234323",
};

}  // namespace

int density_to_level(double density) {
  if (!(density >= 0.0)) throw RangeError("note density must be >= 0");
  const double n = std::floor(density + 0.5);
  if (n <= 5) return 1;
  if (n <= 10) return 2;
  if (n <= 15) return 3;
  if (n <= 20) return 4;
  return 5;
}

std::string_view arpeggio_pattern(int level) {
  if (level < 1 || level > 5) throw RangeError("arpeggio level " + std::to_string(level) + " outside [1, 5]");
  return kPatterns[static_cast<std::size_t>(level - 1)];
}

int sounded_slots(int level, int half) {
  const auto p = arpeggio_pattern(level).substr(static_cast<std::size_t>(half) * 8, 8);
  return static_cast<int>(std::count_if(p.begin(), p.end(), [](char c) { return c != '*'; }));
}

std::vector<features::NoteEvent> arpeggiate(const std::vector<music::ChordLabel>& chords, const std::vector<int>& levels) {
  if (chords.size() != levels.size())
    throw SchemaError("arpeggiate: " + std::to_string(chords.size()) + " chords but " + std::to_string(levels.size()) +
                      " levels");
  std::vector<features::NoteEvent> out;
  std::size_t t = 0;
  while (t < chords.size()) {
    std::size_t end = t + 1;
    while (end < chords.size() && chords[end] == chords[t]) ++end;
    if (const auto* chord = std::get_if<music::Chord>(&chords[t])) {
      const auto tones = music::chord_tones(*chord, kArpeggioOctave);
      const std::size_t first = out.size();
      for (std::size_t s = t; s < end; ++s) {
        const auto half = arpeggio_pattern(levels[s]).substr(((s - t) % 2) * 8, 8);
        for (std::size_t k = 0; k < half.size(); ++k) {
          if (half[k] == '*') continue;
          features::NoteEvent n;
          n.onset = static_cast<double>(s) + static_cast<double>(k) * kSlotSeconds;
          n.pitch = tones[static_cast<std::size_t>(half[k] - '1')];
          out.push_back(n);
        }
      }
      for (std::size_t i = first; i < out.size(); ++i) {
        const double stop = i + 1 < out.size() ? out[i + 1].onset : static_cast<double>(end);
        out[i].duration = stop - out[i].onset;
      }
    }
    t = end;
  }
  return out;
}

int loudness_to_velocity(double loudness) {
  const double l = std::isnan(loudness) ? 0.0 : std::clamp(loudness, 0.0, 1.0);
  return static_cast<int>(std::floor(49.0 + 63.0 * l + 0.5));
}

void apply_velocity(std::vector<features::NoteEvent>& notes, const std::vector<double>& loudness) {
  if (loudness.empty()) return;
  for (auto& n : notes) {
    const auto sec = static_cast<std::size_t>(std::max(0.0, std::floor(n.onset)));
    n.velocity = loudness_to_velocity(loudness[std::min(sec, loudness.size() - 1)]);
  }
}

}  // namespace v2m::post
