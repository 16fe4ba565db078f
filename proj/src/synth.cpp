#include <algorithm>
#include <cmath>
#include <random>

#include "v2m/dataset.hpp"
#include "v2m/emotion_chord_table.hpp"
#include "v2m/error.hpp"

namespace v2m::data {
namespace {

using features::Emotion;
using music::Chord;
using music::ChordLabel;
using music::PitchClass;
using music::Quality;

std::vector<Chord> chord_pool(music::Mode mode) {
  auto c = [](int root, Quality q) { return Chord{PitchClass(root), q}; };
  if (mode == music::Mode::kMajor)
    return {c(0, Quality::kMaj),   c(2, Quality::kMin),   c(4, Quality::kMin),   c(5, Quality::kMaj),
            c(7, Quality::kMaj),   c(9, Quality::kMin),   c(11, Quality::kDim),  c(7, Quality::kDom7),
            c(2, Quality::kMin7),  c(5, Quality::kMaj7),  c(0, Quality::kMaj6),  c(7, Quality::kSus4),
            c(2, Quality::kSus2),  c(11, Quality::kHdim7), c(11, Quality::kDim7), c(4, Quality::kMin7),
            c(0, Quality::kAug),   c(2, Quality::kMin6)};
  return {c(9, Quality::kMin),   c(11, Quality::kDim),  c(0, Quality::kMaj),   c(2, Quality::kMin),
          c(4, Quality::kMin),   c(5, Quality::kMaj),   c(7, Quality::kMaj),   c(4, Quality::kDom7),
          c(11, Quality::kHdim7), c(8, Quality::kDim7), c(2, Quality::kMin7),  c(9, Quality::kMin7),
          c(5, Quality::kMaj7),  c(0, Quality::kMaj6),  c(9, Quality::kSus2),  c(4, Quality::kSus4),
          c(0, Quality::kAug),   c(9, Quality::kMin6)};
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[rng() % v.size()];
}

}  // namespace

std::vector<FeatureRecord> synthesize_dataset(int n, std::uint64_t seed, const SynthOptions& opts) {
  if (n < 1) throw RangeError("synthesize_dataset needs n >= 1");
  if (opts.length < 1 || opts.d_sem < 0) throw RangeError("synthetic length must be >= 1 and d_sem >= 0");
  const auto table = train::EmotionChordTable::standard();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<FeatureRecord> out;
  for (int i = 0; i < n; ++i) {
    FeatureRecord r;
    r.id = "synth_" + std::to_string(seed) + "_" + std::to_string(i);
    const bool major = rng() % 2 == 0;
    r.key = major ? music::Key{PitchClass(0), music::Mode::kMajor} : music::Key{PitchClass(9), music::Mode::kMinor};
    const auto pool = chord_pool(r.key.mode);
    const int len = opts.length;

    // Mood segments choose the emotion; chords are drawn from the mood's qualities.
    std::vector<Emotion> mood(len);
    for (int t = 0; t < len;) {
      const int seg = 3 + static_cast<int>(rng() % 5);
      const auto e = static_cast<Emotion>(unit(rng) < 0.1 ? 5 : rng() % 5);
      for (int k = 0; k < seg && t < len; ++k) mood[t++] = e;
    }

    for (int t = 0; t < len;) {
      const Emotion e = mood[t];
      std::vector<Chord> candidates;
      for (const auto& c : pool) {
        const bool in_row = table.contains(e, c.quality);
        const bool unmapped = c.quality == Quality::kAug || c.quality == Quality::kMin6;
        if (e == Emotion::kNeutral ? unmapped || c.quality == Quality::kMaj || c.quality == Quality::kMin : in_row)
          candidates.push_back(c);
      }
      // Holding a chord for at most two seconds keeps the data inside the repeat limit.
      const std::size_t have = r.chords.size();
      const bool full_run = have >= 2 && r.chords[have - 1] == r.chords[have - 2];
      ChordLabel chord = pick(candidates, rng);
      if (unit(rng) < 0.03) chord = music::Silence{};
      for (int retry = 0; full_run && chord == r.chords.back() && retry < 16; ++retry) chord = pick(candidates, rng);
      if (full_run && chord == r.chords.back()) chord = music::Silence{};
      const int hold = (full_run || (have >= 1 && chord == r.chords.back())) ? 1 : 1 + static_cast<int>(rng() % 2);
      for (int k = 0; k < hold && t < len; ++k, ++t) r.chords.push_back(chord);
    }

    std::vector<int> scene_ids(len);
    int scene = 0;
    for (int t = 0; t < len;) {
      const int seg = 3 + static_cast<int>(rng() % 6);
      for (int k = 0; k < seg && t < len; ++k) scene_ids[t++] = scene;
      ++scene;
    }
    r.scene_offset = features::scene_offsets(scene_ids);

    std::vector<std::vector<double>> scene_vec(scene, std::vector<double>(opts.d_sem));
    for (auto& v : scene_vec)
      for (double& x : v) x = gauss(rng);
    std::vector<double> scene_motion(scene);
    for (double& m : scene_motion) m = 0.1 + 0.8 * unit(rng);

    for (int t = 0; t < len; ++t) {
      std::vector<double> sem = scene_vec[scene_ids[t]];
      for (double& x : sem) x += 0.1 * gauss(rng);
      r.semantic.push_back(std::move(sem));

      EmotionProbs p{};
      const int top = static_cast<int>(mood[t]);
      p[top] = 0.45 + 0.3 * unit(rng);
      const double rest = 1.0 - p[top];
      double wsum = 0.0;
      std::array<double, features::kNumEmotions> w{};
      for (int k = 0; k < features::kNumEmotions; ++k)
        if (k != top) wsum += (w[k] = 0.5 + 0.5 * unit(rng));
      for (int k = 0; k < features::kNumEmotions; ++k)
        if (k != top) p[k] = rest * w[k] / wsum;
      r.emotion.push_back(p);

      const double motion = std::clamp(scene_motion[scene_ids[t]] + 0.08 * (2.0 * unit(rng) - 1.0), 0.0, 1.0);
      r.motion.push_back(motion);
      r.note_density.push_back(std::max(0, static_cast<int>(std::lround(3.0 + 20.0 * motion + gauss(rng)))));
      r.loudness.push_back(std::clamp(0.15 + 0.7 * motion + 0.03 * gauss(rng), 0.0, 1.0));
    }
    validate(r, opts.d_sem);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace v2m::data
