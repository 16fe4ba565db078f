#pragma once

// Per-second music and video features computed from ingested primitives.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "v2m/music_theory.hpp"

namespace v2m::features {

struct NoteEvent {
  double onset = 0.0;     // seconds
  double duration = 0.0;  // seconds, > 0
  int pitch = 60;
  int velocity = 64;
};

void validate(const NoteEvent& n);

struct RgbFrame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // r,g,b interleaved, row-major
};

inline constexpr int kNumEmotions = 6;
enum class Emotion : std::uint8_t { kExciting, kFearful, kTense, kSad, kRelaxing, kNeutral };
std::string_view emotion_name(Emotion e);

using EmotionProbs = std::array<double, kNumEmotions>;

// Clamps each component into [0,1]; returns true when anything changed.
bool clamp_emotion(EmotionProbs& p);

// Index of the largest probability; the first wins on ties.
Emotion top_emotion(const EmotionProbs& p);

enum class KeyAlgorithm : std::uint8_t { kKrumhanslSchmuckler, kTemperleyKostkaPayne, kBellmanBudge };

struct KeyProfileSet {
  std::string name;
  std::array<double, 12> major{};
  std::array<double, 12> minor{};
};

// Text file with three `[name]` blocks, each holding `major = ...` and
// `minor = ...` lines of twelve comma-separated values.
std::vector<KeyProfileSet> parse_key_profiles(std::string_view text);
std::vector<KeyProfileSet> load_key_profiles(const std::filesystem::path& path);
std::filesystem::path default_key_profile_path();
// Profile sets ordered Krumhansl-Schmuckler, Temperley-Kostka-Payne, Bellman-Budge.
std::array<KeyProfileSet, 3> ordered_profiles(const std::vector<KeyProfileSet>& sets);

std::vector<int> note_density(std::span<const NoteEvent> notes, int total_seconds);

inline constexpr double kRmsFullScale = 32767.0;
inline constexpr double kRmsEpsilon = 1e-9;
double loudness_from_rms(double rms);

// Duration-weighted pitch-class histogram.
std::array<double, 12> pitch_class_histogram(std::span<const NoteEvent> notes);
double pearson(std::span<const double> a, std::span<const double> b);

music::Key detect_key_single(std::span<const NoteEvent> notes, const KeyProfileSet& profiles);
// Majority of three; a three-way split returns the first (Krumhansl-Schmuckler) candidate.
music::Key vote_key(const std::array<music::Key, 3>& candidates);
music::Key detect_key(std::span<const NoteEvent> notes, const std::array<KeyProfileSet, 3>& profiles);

// One note per chord tone, sustained over each second the chord holds.
std::vector<NoteEvent> chords_to_notes(std::span<const music::ChordLabel> chords);

std::vector<int> scene_offsets(std::span<const int> scene_ids);

std::vector<double> motion_values(std::span<const RgbFrame> frames);

std::vector<EmotionProbs> smooth_emotions(std::span<const EmotionProbs> series, int window = 5);

// Binary PPM (P6, maxval 255).
RgbFrame read_ppm(const std::filesystem::path& path);
void write_ppm(const RgbFrame& frame, const std::filesystem::path& path);

}  // namespace v2m::features
