#pragma once

// Feature records, their on-disk JSON form, sequence alignment and splits.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "v2m/features.hpp"
#include "v2m/music_theory.hpp"

namespace v2m::data {

using features::EmotionProbs;

struct FeatureRecord {
  std::string id;
  music::Key key;  // C major or A minor after normalization
  std::vector<std::vector<double>> semantic;
  std::vector<EmotionProbs> emotion;
  std::vector<int> scene_offset;
  std::vector<double> motion;
  std::vector<music::ChordLabel> chords;
  std::vector<int> note_density;
  std::vector<double> loudness;

  int length() const { return static_cast<int>(chords.size()); }
  int d_sem() const { return semantic.empty() ? 0 : static_cast<int>(semantic.front().size()); }
};

// Throws SchemaError naming the field (and index) that violates the schema.
// `expected_d_sem` < 0 skips the dataset-wide width check.
void validate(const FeatureRecord& r, int expected_d_sem = -1);

std::string to_json(const FeatureRecord& r);
FeatureRecord from_json(const std::string& text, int expected_d_sem = -1);

void save_record(const FeatureRecord& r, const std::filesystem::path& path);
FeatureRecord load_record(const std::filesystem::path& path, int expected_d_sem = -1);

inline constexpr int kDefaultTmax = 300;

struct PaddedExample {
  std::string id;
  music::Key key;
  int length = 0;  // real steps, == count of true mask entries
  std::vector<int> chord_tokens;
  std::vector<std::uint8_t> mask;
  std::vector<std::vector<double>> semantic;
  std::vector<EmotionProbs> emotion;
  std::vector<int> scene_offset;
  std::vector<double> motion;
  std::vector<int> note_density;
  std::vector<double> loudness;
};

PaddedExample clip_or_pad(const FeatureRecord& r, int t_max = kDefaultTmax);

struct SplitSpec {
  int train = 8;
  int val = 1;
  int test = 1;
  std::uint64_t shuffle_seed = 0;
};

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

// Sizes floor(train/10 * n), floor(val/10 * n) and the remainder.
Split split_dataset(const std::vector<std::string>& ids, const SplitSpec& spec);

struct Manifest {
  std::vector<std::string> ids;
  int d_sem = 0;
};

void save_manifest(const Manifest& m, const std::filesystem::path& dir);
Manifest load_manifest(const std::filesystem::path& dir);
std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& id);

struct Dataset {
  Manifest manifest;
  std::vector<FeatureRecord> records;  // manifest order

  const FeatureRecord& by_id(const std::string& id) const;
};

Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::vector<FeatureRecord>& records, const std::filesystem::path& dir);

struct SynthOptions {
  int length = 30;
  int d_sem = 16;
};

// Desk-scale corpus with learnable structure: diatonic progressions in the
// reference keys, an emotion channel derived from each chord's quality via
// the emotion/quality table, and density/loudness driven by motion.
std::vector<FeatureRecord> synthesize_dataset(int n, std::uint64_t seed, const SynthOptions& opts = {});

}  // namespace v2m::data
