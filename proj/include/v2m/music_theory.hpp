#pragma once

// Chord and key domain model: parsing, transposition, key normalization,
// chord-to-note expansion and the decoder token vocabulary.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace v2m::music {

class PitchClass {
 public:
  constexpr PitchClass() = default;
  constexpr explicit PitchClass(int semitones) : value_(wrap(semitones)) {}

  constexpr int value() const { return value_; }
  constexpr PitchClass operator+(int shift) const { return PitchClass(value_ + shift); }
  constexpr bool operator==(const PitchClass&) const = default;

 private:
  static constexpr int wrap(int v) { return ((v % 12) + 12) % 12; }
  int value_ = 0;
};

// Order matters: it fixes the token layout of the vocabulary.
enum class Quality : std::uint8_t {
  kMaj,
  kDim,
  kSus4,
  kMin7,
  kMin,
  kSus2,
  kAug,
  kDim7,
  kMaj6,
  kHdim7,
  kDom7,
  kMin6,
  kMaj7,
};

inline constexpr int kNumQualities = 13;
inline constexpr std::array<Quality, kNumQualities> kAllQualities{
    Quality::kMaj,  Quality::kDim,  Quality::kSus4, Quality::kMin7, Quality::kMin,
    Quality::kSus2, Quality::kAug,  Quality::kDim7, Quality::kMaj6, Quality::kHdim7,
    Quality::kDom7, Quality::kMin6, Quality::kMaj7};

std::string_view quality_name(Quality q);
std::optional<Quality> quality_from_name(std::string_view name);
// Semitones above the root.
std::vector<int> interval_template(Quality q);

struct Chord {
  PitchClass root;
  Quality quality = Quality::kMaj;
  bool operator==(const Chord&) const = default;
};

struct Silence {
  bool operator==(const Silence&) const = default;
};

// A per-second chord label: a sounding chord or "N".
using ChordLabel = std::variant<Chord, Silence>;

inline bool is_silence(const ChordLabel& c) { return std::holds_alternative<Silence>(c); }

enum class Mode : std::uint8_t { kMajor, kMinor };

struct Key {
  PitchClass tonic;
  Mode mode = Mode::kMajor;
  bool operator==(const Key&) const = default;
};

// "C:maj", "F#:min7", "Bb:dom7" or "N".
ChordLabel parse_chord(std::string_view text);
std::string format_chord(const ChordLabel& c);

// "C:major", "A:minor".
Key parse_key(std::string_view text);
std::string format_key(const Key& k);

// Compact primer tokens: "C", "Am", "G7", "Fmaj7", "Bdim", or the canonical form.
ChordLabel parse_compact_chord(std::string_view text);
std::vector<ChordLabel> parse_primer(std::string_view text);

std::string_view pitch_class_name(PitchClass pc);

ChordLabel transpose_chord(const ChordLabel& c, int shift);

struct NormalizedSequence {
  std::vector<ChordLabel> chords;
  Key key;
};

// Transposes to C major (major keys) or A minor (minor keys).
NormalizedSequence normalize_sequence(const std::vector<ChordLabel>& chords, const Key& key);

// Shift that moves `key` onto its reference key.
int normalization_shift(const Key& key);

// MIDI pitches of the chord rooted in `base_octave` (C4 = 60). Triads get the
// root doubled an octave up so there are always at least four tones.
std::vector<int> chord_tones(const Chord& c, int base_octave);

// Token vocabulary: PAD, SOS, SILENCE, then 12 roots x 13 qualities.
enum class Special : std::uint8_t { kPad, kSos };
using Token = std::variant<Chord, Silence, Special>;

inline constexpr int kPadId = 0;
inline constexpr int kSosId = 1;
inline constexpr int kSilenceId = 2;
inline constexpr int kFirstChordId = 3;
inline constexpr int kVocabSize = 12 * kNumQualities + 3;

int tokenize(const Token& t);
int tokenize(const ChordLabel& c);
Token detokenize(int id);
// Throws for PAD/SOS.
ChordLabel detokenize_label(int id);

// Index into kAllQualities, or -1 for specials/silence.
int token_quality_index(int id);
// Root pitch class, 12 for silence, -1 for PAD/SOS.
int token_root_index(int id);

}  // namespace v2m::music
