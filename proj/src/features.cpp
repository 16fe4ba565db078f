#include "v2m/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "v2m/error.hpp"
#include "v2m/log.hpp"

namespace v2m::features {

void validate(const NoteEvent& n) {
  if (!(n.onset >= 0.0)) throw RangeError("note onset must be >= 0, got " + std::to_string(n.onset));
  if (!(n.duration > 0.0))
    throw RangeError("note duration must be > 0, got " + std::to_string(n.duration));
  if (n.pitch < 0 || n.pitch > 127) throw RangeError("note pitch out of range: " + std::to_string(n.pitch));
  if (n.velocity < 1 || n.velocity > 127)
    throw RangeError("note velocity out of range: " + std::to_string(n.velocity));
}

std::string_view emotion_name(Emotion e) {
  static constexpr std::array<std::string_view, kNumEmotions> kNames{
      "exciting", "fearful", "tense", "sad", "relaxing", "neutral"};
  return kNames[static_cast<int>(e)];
}

bool clamp_emotion(EmotionProbs& p) {
  bool changed = false;
  for (double& v : p) {
    const double c = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
    if (c != v) {
      changed = true;
      v = c;
    }
  }
  return changed;
}

Emotion top_emotion(const EmotionProbs& p) {
  return static_cast<Emotion>(std::max_element(p.begin(), p.end()) - p.begin());
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::array<double, 12> parse_profile_row(const std::string& values, const std::string& where) {
  std::array<double, 12> out{};
  std::stringstream ss(values);
  std::string cell;
  int n = 0;
  while (std::getline(ss, cell, ',')) {
    if (n >= 12) throw ParseError(where + ": more than 12 values");
    try {
      std::size_t used = 0;
      const auto t = trim(cell);
      out[n] = std::stod(t, &used);
      if (used != t.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(where + ": bad number '" + trim(cell) + "'");
    }
    if (!std::isfinite(out[n])) throw ParseError(where + ": non-finite value");
    ++n;
  }
  if (n != 12) throw ParseError(where + ": expected 12 values, got " + std::to_string(n));
  return out;
}

}  // namespace

std::vector<KeyProfileSet> parse_key_profiles(std::string_view text) {
  std::vector<KeyProfileSet> sets;
  std::vector<std::pair<bool, bool>> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "key profiles line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(where + ": unterminated block header");
      sets.push_back({line.substr(1, line.size() - 2), {}, {}});
      seen.emplace_back(false, false);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || sets.empty()) throw ParseError(where + ": expected 'major = ...' inside a block");
    const auto field = trim(std::string_view(line).substr(0, eq));
    const auto values = line.substr(eq + 1);
    if (field == "major") {
      sets.back().major = parse_profile_row(values, where);
      seen.back().first = true;
    } else if (field == "minor") {
      sets.back().minor = parse_profile_row(values, where);
      seen.back().second = true;
    } else {
      throw ParseError(where + ": unknown field '" + field + "'");
    }
  }
  for (std::size_t i = 0; i < sets.size(); ++i)
    if (!seen[i].first || !seen[i].second)
      throw ParseError("key profile block '" + sets[i].name + "' needs both major and minor rows");
  return sets;
}

std::vector<KeyProfileSet> load_key_profiles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open key profile file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_profiles(ss.str());
}

std::filesystem::path default_key_profile_path() {
  if (const char* env = std::getenv("V2M_KEY_PROFILES")) return env;
  return std::filesystem::path(V2M_DATA_DIR) / "key_profiles.txt";
}

std::array<KeyProfileSet, 3> ordered_profiles(const std::vector<KeyProfileSet>& sets) {
  static constexpr std::array<std::string_view, 3> kOrder{"krumhansl_schmuckler", "temperley_kostka_payne",
                                                          "bellman_budge"};
  std::array<KeyProfileSet, 3> out;
  for (int i = 0; i < 3; ++i) {
    const auto it = std::find_if(sets.begin(), sets.end(), [&](const auto& s) { return s.name == kOrder[i]; });
    if (it == sets.end()) throw SchemaError("key profile block '" + std::string(kOrder[i]) + "' missing");
    out[i] = *it;
  }
  return out;
}

std::vector<int> note_density(std::span<const NoteEvent> notes, int total_seconds) {
  if (total_seconds < 0) throw RangeError("total_seconds must be >= 0");
  std::vector<int> density(total_seconds, 0);
  for (const auto& n : notes) {
    if (n.onset < 0.0) throw RangeError("negative note onset " + std::to_string(n.onset));
    const auto t = static_cast<long>(std::floor(n.onset));
    if (t < total_seconds) ++density[t];
  }
  return density;
}

double loudness_from_rms(double rms) {
  if (!(rms >= 0.0)) throw RangeError("RMS must be >= 0, got " + std::to_string(rms));
  if (rms > kRmsFullScale) {
    log::warn("RMS " + std::to_string(rms) + " above full scale, clamped to 32767");
    rms = kRmsFullScale;
  }
  if (!(rms >= kRmsEpsilon)) return 0.0;
  const double db = 20.0 * std::log10(rms / kRmsFullScale);
  return std::pow(10.0, db / 20.0);
}

std::array<double, 12> pitch_class_histogram(std::span<const NoteEvent> notes) {
  std::array<double, 12> h{};
  for (const auto& n : notes) h[n.pitch % 12] += n.duration;
  return h;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

music::Key detect_key_single(std::span<const NoteEvent> notes, const KeyProfileSet& profiles) {
  if (notes.empty()) throw Error("key detection needs at least one note");
  const auto hist = pitch_class_histogram(notes);
  music::Key best;
  double best_r = -2.0;
  for (int m = 0; m < 2; ++m) {
    const auto& profile = m == 0 ? profiles.major : profiles.minor;
    for (int tonic = 0; tonic < 12; ++tonic) {
      // Profile rotated so its tonic weight lands on `tonic`.
      std::array<double, 12> rotated{};
      for (int pc = 0; pc < 12; ++pc) rotated[pc] = profile[(pc - tonic + 12) % 12];
      const double r = pearson(hist, rotated);
      if (r > best_r) {
        best_r = r;
        best = music::Key{music::PitchClass(tonic), m == 0 ? music::Mode::kMajor : music::Mode::kMinor};
      }
    }
  }
  return best;
}

music::Key vote_key(const std::array<music::Key, 3>& c) {
  if (c[1] == c[2] && !(c[0] == c[1])) return c[1];
  return c[0];
}

music::Key detect_key(std::span<const NoteEvent> notes, const std::array<KeyProfileSet, 3>& profiles) {
  return vote_key({detect_key_single(notes, profiles[0]), detect_key_single(notes, profiles[1]),
                   detect_key_single(notes, profiles[2])});
}

std::vector<NoteEvent> chords_to_notes(std::span<const music::ChordLabel> chords) {
  std::vector<NoteEvent> notes;
  std::size_t t = 0;
  while (t < chords.size()) {
    std::size_t end = t + 1;
    while (end < chords.size() && chords[end] == chords[t]) ++end;
    if (!music::is_silence(chords[t])) {
      for (int p : music::chord_tones(std::get<music::Chord>(chords[t]), 4))
        notes.push_back({static_cast<double>(t), static_cast<double>(end - t), p, 100});
    }
    t = end;
  }
  return notes;
}

std::vector<int> scene_offsets(std::span<const int> scene_ids) {
  std::vector<int> out(scene_ids.size(), 0);
  for (std::size_t t = 1; t < scene_ids.size(); ++t)
    out[t] = scene_ids[t] == scene_ids[t - 1] ? out[t - 1] + 1 : 0;
  return out;
}

std::vector<double> motion_values(std::span<const RgbFrame> frames) {
  std::vector<double> out(frames.size(), 0.0);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const auto& a = frames[t - 1];
    const auto& b = frames[t];
    if (a.width != b.width || a.height != b.height || a.pixels.size() != b.pixels.size())
      throw SchemaError("frame " + std::to_string(t) + " is " + std::to_string(b.width) + "x" +
                        std::to_string(b.height) + ", previous frame is " + std::to_string(a.width) + "x" +
                        std::to_string(a.height));
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
      sum += static_cast<std::uint64_t>(std::abs(int(a.pixels[i]) - int(b.pixels[i])));
    out[t] = a.pixels.empty() ? 0.0 : static_cast<double>(sum) / static_cast<double>(a.pixels.size());
  }
  return out;
}

std::vector<EmotionProbs> smooth_emotions(std::span<const EmotionProbs> series, int window) {
  if (window < 1) throw RangeError("smoothing window must be >= 1");
  std::vector<EmotionProbs> out(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    const std::size_t first = t + 1 >= std::size_t(window) ? t + 1 - window : 0;
    const double n = static_cast<double>(t + 1 - first);
    for (int c = 0; c < kNumEmotions; ++c) {
      double s = 0.0;
      for (std::size_t i = first; i <= t; ++i) s += series[i][c];
      out[t][c] = s / n;
    }
  }
  return out;
}

namespace {

// Skips whitespace and '#' comments between PPM header tokens.
int read_ppm_int(std::istream& in, const std::string& where) {
  int c;
  while ((c = in.peek()) != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw ParseError(where + ": malformed PPM header");
  return v;
}

}  // namespace

RgbFrame read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open frame " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw ParseError(path.string() + ": not a binary PPM (P6)");
  RgbFrame f;
  f.width = read_ppm_int(in, path.string());
  f.height = read_ppm_int(in, path.string());
  const int maxval = read_ppm_int(in, path.string());
  if (f.width <= 0 || f.height <= 0 || maxval != 255)
    throw ParseError(path.string() + ": unsupported PPM geometry or maxval");
  in.get();
  f.pixels.resize(static_cast<std::size_t>(f.width) * f.height * 3);
  in.read(reinterpret_cast<char*>(f.pixels.data()), static_cast<std::streamsize>(f.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(f.pixels.size()))
    throw ParseError(path.string() + ": truncated pixel data");
  return f;
}

void write_ppm(const RgbFrame& frame, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write frame " + path.string());
  out << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(frame.pixels.data()), static_cast<std::streamsize>(frame.pixels.size()));
}

}  // namespace v2m::features
