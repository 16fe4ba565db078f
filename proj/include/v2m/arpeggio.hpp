#pragma once

// Chord-to-note rendering: density levels, arpeggio patterns and velocity.

#include <array>
#include <string_view>
#include <vector>

#include "v2m/features.hpp"
#include "v2m/music_theory.hpp"

namespace v2m::post {

inline constexpr int kPatternSlots = 16;
inline constexpr double kSlotSeconds = 1.0 / 8.0;
inline constexpr int kArpeggioOctave = 4;

// Rounds half-up, then bins: <=5 -> 1, 6-10 -> 2, 11-15 -> 3, 16-20 -> 4, >=21 -> 5.
int density_to_level(double density);

// 16 characters; '1'..'4' sound that chord tone, '*' rests.
std::string_view arpeggio_pattern(int level);

// Sounded slot count in the first (half 0) or second (half 1) eight slots.
int sounded_slots(int level, int half);

// One second per entry. Chord runs alternate pattern halves starting with the
// first; each note rings until the next onset in its run or the run's end.
std::vector<features::NoteEvent> arpeggiate(const std::vector<music::ChordLabel>& chords, const std::vector<int>& levels);

// round-half-up(49 + 63 * loudness) with loudness clamped to [0, 1].
int loudness_to_velocity(double loudness);

// Notes with onset in second t get velocity(loudness[t]); later onsets use the last entry.
void apply_velocity(std::vector<features::NoteEvent>& notes, const std::vector<double>& loudness);

}  // namespace v2m::post
