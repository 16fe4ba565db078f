#include "v2m/music_theory.hpp"

#include <sstream>

#include "v2m/error.hpp"

namespace v2m::music {
namespace {

constexpr std::array<std::string_view, kNumQualities> kQualityNames{
    "maj", "dim", "sus4", "min7", "min", "sus2", "aug", "dim7", "maj6", "hdim7", "dom7", "min6", "maj7"};

constexpr std::array<std::string_view, 12> kPitchNames{"C",  "C#", "D",  "D#", "E",  "F",
                                                       "F#", "G",  "G#", "A",  "A#", "B"};

int quality_index(Quality q) { return static_cast<int>(q); }

// Parses "<A-G>[#|b]?" at the front of `text`; returns the pitch class and the
// number of characters consumed.
std::optional<std::pair<PitchClass, std::size_t>> parse_root(std::string_view text) {
  if (text.empty()) return std::nullopt;
  int base = 0;
  switch (text[0]) {
    case 'C': base = 0; break;
    case 'D': base = 2; break;
    case 'E': base = 4; break;
    case 'F': base = 5; break;
    case 'G': base = 7; break;
    case 'A': base = 9; break;
    case 'B': base = 11; break;
    default: return std::nullopt;
  }
  std::size_t used = 1;
  if (text.size() > 1 && text[1] == '#') {
    ++base;
    ++used;
  } else if (text.size() > 1 && text[1] == 'b') {
    --base;
    ++used;
  }
  return std::pair{PitchClass(base), used};
}

}  // namespace

std::string_view quality_name(Quality q) { return kQualityNames[quality_index(q)]; }

std::optional<Quality> quality_from_name(std::string_view name) {
  for (int i = 0; i < kNumQualities; ++i)
    if (kQualityNames[i] == name) return kAllQualities[i];
  return std::nullopt;
}

std::vector<int> interval_template(Quality q) {
  switch (q) {
    case Quality::kMaj: return {0, 4, 7};
    case Quality::kMin: return {0, 3, 7};
    case Quality::kDim: return {0, 3, 6};
    case Quality::kAug: return {0, 4, 8};
    case Quality::kSus2: return {0, 2, 7};
    case Quality::kSus4: return {0, 5, 7};
    case Quality::kDom7: return {0, 4, 7, 10};
    case Quality::kMaj7: return {0, 4, 7, 11};
    case Quality::kMin7: return {0, 3, 7, 10};
    case Quality::kDim7: return {0, 3, 6, 9};
    case Quality::kHdim7: return {0, 3, 6, 10};
    case Quality::kMaj6: return {0, 4, 7, 9};
    case Quality::kMin6: return {0, 3, 7, 9};
  }
  return {};
}

std::string_view pitch_class_name(PitchClass pc) { return kPitchNames[pc.value()]; }

ChordLabel parse_chord(std::string_view text) {
  if (text == "N") return Silence{};
  const auto colon = text.find(':');
  if (colon == std::string_view::npos)
    throw ParseError("malformed chord '" + std::string(text) + "': expected <root>:<quality> or N");
  const auto root_text = text.substr(0, colon);
  const auto root = parse_root(root_text);
  if (!root || root->second != root_text.size())
    throw ParseError("malformed chord '" + std::string(text) + "': bad root '" +
                     std::string(root_text) + "'");
  const auto qual_text = text.substr(colon + 1);
  const auto quality = quality_from_name(qual_text);
  if (!quality)
    throw ParseError("malformed chord '" + std::string(text) + "': unknown quality '" +
                     std::string(qual_text) + "'");
  return Chord{root->first, *quality};
}

std::string format_chord(const ChordLabel& c) {
  if (is_silence(c)) return "N";
  const auto& ch = std::get<Chord>(c);
  return std::string(pitch_class_name(ch.root)) + ":" + std::string(quality_name(ch.quality));
}

Key parse_key(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos)
    throw ParseError("malformed key '" + std::string(text) + "': expected <tonic>:major|minor");
  const auto root_text = text.substr(0, colon);
  const auto root = parse_root(root_text);
  if (!root || root->second != root_text.size())
    throw ParseError("malformed key '" + std::string(text) + "': bad tonic");
  const auto mode = text.substr(colon + 1);
  if (mode == "major") return Key{root->first, Mode::kMajor};
  if (mode == "minor") return Key{root->first, Mode::kMinor};
  throw ParseError("malformed key '" + std::string(text) + "': bad mode '" + std::string(mode) + "'");
}

std::string format_key(const Key& k) {
  return std::string(pitch_class_name(k.tonic)) + (k.mode == Mode::kMajor ? ":major" : ":minor");
}

ChordLabel parse_compact_chord(std::string_view text) {
  if (text == "N") return Silence{};
  if (text.find(':') != std::string_view::npos) return parse_chord(text);
  const auto root = parse_root(text);
  if (!root) throw ParseError("unparseable chord token '" + std::string(text) + "'");
  const auto suffix = text.substr(root->second);
  struct Alias {
    std::string_view suffix;
    Quality quality;
  };
  static constexpr std::array<Alias, 22> kAliases{{
      {"", Quality::kMaj},       {"maj", Quality::kMaj},     {"M", Quality::kMaj},
      {"m", Quality::kMin},      {"min", Quality::kMin},     {"dim", Quality::kDim},
      {"o", Quality::kDim},      {"aug", Quality::kAug},     {"+", Quality::kAug},
      {"sus2", Quality::kSus2},  {"sus4", Quality::kSus4},   {"sus", Quality::kSus4},
      {"7", Quality::kDom7},     {"maj7", Quality::kMaj7},   {"M7", Quality::kMaj7},
      {"m7", Quality::kMin7},    {"min7", Quality::kMin7},   {"dim7", Quality::kDim7},
      {"m7b5", Quality::kHdim7}, {"hdim7", Quality::kHdim7}, {"6", Quality::kMaj6},
      {"m6", Quality::kMin6},
  }};
  for (const auto& a : kAliases)
    if (a.suffix == suffix) return Chord{root->first, a.quality};
  throw ParseError("unparseable chord token '" + std::string(text) + "'");
}

std::vector<ChordLabel> parse_primer(std::string_view text) {
  std::vector<ChordLabel> out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(parse_compact_chord(tok));
  return out;
}

ChordLabel transpose_chord(const ChordLabel& c, int shift) {
  if (is_silence(c)) return c;
  auto ch = std::get<Chord>(c);
  ch.root = ch.root + shift;
  return ch;
}

int normalization_shift(const Key& key) {
  const int reference = key.mode == Mode::kMajor ? 0 : 9;
  return PitchClass(reference - key.tonic.value()).value();
}

NormalizedSequence normalize_sequence(const std::vector<ChordLabel>& chords, const Key& key) {
  const int shift = normalization_shift(key);
  NormalizedSequence out;
  out.chords.reserve(chords.size());
  for (const auto& c : chords) out.chords.push_back(transpose_chord(c, shift));
  out.key = Key{key.tonic + shift, key.mode};
  return out;
}

std::vector<int> chord_tones(const Chord& c, int base_octave) {
  const int root_pitch = 12 * (base_octave + 1) + c.root.value();
  std::vector<int> tones;
  for (int iv : interval_template(c.quality)) tones.push_back(root_pitch + iv);
  if (tones.size() == 3) tones.push_back(root_pitch + 12);
  for (int p : tones)
    if (p < 0 || p > 127)
      throw RangeError("chord " + format_chord(c) + " at octave " + std::to_string(base_octave) +
                       " leaves the MIDI pitch range");
  return tones;
}

int tokenize(const Token& t) {
  if (const auto* s = std::get_if<Special>(&t)) return *s == Special::kPad ? kPadId : kSosId;
  if (std::holds_alternative<Silence>(t)) return kSilenceId;
  const auto& c = std::get<Chord>(t);
  return kFirstChordId + c.root.value() * kNumQualities + quality_index(c.quality);
}

int tokenize(const ChordLabel& c) {
  if (is_silence(c)) return kSilenceId;
  return tokenize(Token{std::get<Chord>(c)});
}

Token detokenize(int id) {
  if (id < 0 || id >= kVocabSize)
    throw RangeError("token id " + std::to_string(id) + " outside [0, " +
                     std::to_string(kVocabSize) + ")");
  if (id == kPadId) return Special::kPad;
  if (id == kSosId) return Special::kSos;
  if (id == kSilenceId) return Silence{};
  const int k = id - kFirstChordId;
  return Chord{PitchClass(k / kNumQualities), kAllQualities[k % kNumQualities]};
}

ChordLabel detokenize_label(int id) {
  const Token t = detokenize(id);
  if (std::holds_alternative<Special>(t))
    throw RangeError("token id " + std::to_string(id) + " is not a chord label");
  if (std::holds_alternative<Silence>(t)) return Silence{};
  return std::get<Chord>(t);
}

int token_quality_index(int id) {
  if (id < kFirstChordId || id >= kVocabSize) return -1;
  return (id - kFirstChordId) % kNumQualities;
}

int token_root_index(int id) {
  if (id == kSilenceId) return 12;
  if (id < kFirstChordId || id >= kVocabSize) return -1;
  return (id - kFirstChordId) / kNumQualities;
}

}  // namespace v2m::music
