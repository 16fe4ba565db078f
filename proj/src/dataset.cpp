#include "v2m/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "v2m/error.hpp"
#include "v2m/log.hpp"

namespace v2m::data {

using nlohmann::json;

namespace {

std::string at_index(const std::string& field, std::size_t i) { return field + "[" + std::to_string(i) + "]"; }

void check_length(const std::string& field, std::size_t got, std::size_t want) {
  if (got != want)
    throw SchemaError("field '" + field + "' has length " + std::to_string(got) + ", expected " + std::to_string(want));
}

const json& require(const json& j, const char* field) {
  if (!j.contains(field)) throw SchemaError(std::string("missing field '") + field + "'");
  return j.at(field);
}

const json& require_array(const json& j, const char* field) {
  const json& a = require(j, field);
  if (!a.is_array()) throw SchemaError(std::string("field '") + field + "' must be an array");
  return a;
}

double as_real(const json& v, const std::string& where) {
  if (!v.is_number()) throw SchemaError("field '" + where + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw SchemaError("field '" + where + "' is not finite");
  return d;
}

int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw SchemaError("field '" + where + "' must be an integer");
  return v.get<int>();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

void validate(const FeatureRecord& r, int expected_d_sem) {
  if (r.id.empty()) throw SchemaError("field 'id' is empty");
  const std::size_t n = r.chords.size();
  check_length("semantic", r.semantic.size(), n);
  check_length("emotion", r.emotion.size(), n);
  check_length("scene_offset", r.scene_offset.size(), n);
  check_length("motion", r.motion.size(), n);
  check_length("note_density", r.note_density.size(), n);
  check_length("loudness", r.loudness.size(), n);
  const int d = r.d_sem();
  if (expected_d_sem >= 0 && n > 0 && d != expected_d_sem)
    throw SchemaError("field 'semantic' has width " + std::to_string(d) + ", dataset d_sem is " +
                      std::to_string(expected_d_sem));
  const bool reference = (r.key == music::Key{music::PitchClass(0), music::Mode::kMajor}) ||
                         (r.key == music::Key{music::PitchClass(9), music::Mode::kMinor});
  if (!reference) throw SchemaError("field 'key' must be C:major or A:minor, got " + music::format_key(r.key));
  for (std::size_t t = 0; t < n; ++t) {
    if (r.semantic[t].size() != static_cast<std::size_t>(d))
      throw SchemaError("field '" + at_index("semantic", t) + "' has width " + std::to_string(r.semantic[t].size()) +
                        ", expected " + std::to_string(d));
    for (double v : r.semantic[t])
      if (!std::isfinite(v)) throw SchemaError("field '" + at_index("semantic", t) + "' is not finite");
    for (double p : r.emotion[t])
      if (!(p >= 0.0 && p <= 1.0)) throw SchemaError("field '" + at_index("emotion", t) + "' outside [0,1]");
    if (r.scene_offset[t] < 0) throw SchemaError("field '" + at_index("scene_offset", t) + "' is negative");
    if (!std::isfinite(r.motion[t]) || r.motion[t] < 0.0)
      throw SchemaError("field '" + at_index("motion", t) + "' must be finite and >= 0");
    if (r.note_density[t] < 0) throw SchemaError("field '" + at_index("note_density", t) + "' is negative");
    if (!(r.loudness[t] >= 0.0 && r.loudness[t] <= 1.0))
      throw SchemaError("field '" + at_index("loudness", t) + "' outside [0,1]");
  }
}

std::string to_json(const FeatureRecord& r) {
  json j;
  j["id"] = r.id;
  j["key"] = music::format_key(r.key);
  json chords = json::array();
  for (const auto& c : r.chords) chords.push_back(music::format_chord(c));
  j["chords"] = std::move(chords);
  j["semantic"] = r.semantic;
  json emo = json::array();
  for (const auto& e : r.emotion) emo.push_back(std::vector<double>(e.begin(), e.end()));
  j["emotion"] = std::move(emo);
  j["scene_offset"] = r.scene_offset;
  j["motion"] = r.motion;
  j["note_density"] = r.note_density;
  j["loudness"] = r.loudness;
  return j.dump(1) + "\n";
}

FeatureRecord from_json(const std::string& text, int expected_d_sem) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("record is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("record must be a JSON object");
  FeatureRecord r;
  const json& id = require(j, "id");
  if (!id.is_string()) throw SchemaError("field 'id' must be a string");
  r.id = id.get<std::string>();
  const json& key = require(j, "key");
  if (!key.is_string()) throw SchemaError("field 'key' must be a string");
  try {
    r.key = music::parse_key(key.get<std::string>());
  } catch (const ParseError& e) {
    throw SchemaError(std::string("field 'key': ") + e.what());
  }

  const json& chords = require_array(j, "chords");
  for (std::size_t t = 0; t < chords.size(); ++t) {
    if (!chords[t].is_string()) throw SchemaError("field '" + at_index("chords", t) + "' must be a string");
    try {
      r.chords.push_back(music::parse_chord(chords[t].get<std::string>()));
    } catch (const ParseError& e) {
      throw SchemaError("field '" + at_index("chords", t) + "': " + e.what());
    }
  }
  const json& sem = require_array(j, "semantic");
  for (std::size_t t = 0; t < sem.size(); ++t) {
    if (!sem[t].is_array()) throw SchemaError("field '" + at_index("semantic", t) + "' must be an array");
    std::vector<double> row;
    for (std::size_t k = 0; k < sem[t].size(); ++k) row.push_back(as_real(sem[t][k], at_index(at_index("semantic", t), k)));
    r.semantic.push_back(std::move(row));
  }
  const json& emo = require_array(j, "emotion");
  for (std::size_t t = 0; t < emo.size(); ++t) {
    const std::string where = at_index("emotion", t);
    if (!emo[t].is_array() || emo[t].size() != features::kNumEmotions)
      throw SchemaError("field '" + where + "' must be a 6-tuple");
    EmotionProbs p{};
    for (int k = 0; k < features::kNumEmotions; ++k) p[k] = as_real(emo[t][k], where);
    if (features::clamp_emotion(p)) log::warn("record " + r.id + ": " + where + " clamped into [0,1]");
    r.emotion.push_back(p);
  }
  for (const auto& v : require_array(j, "scene_offset")) r.scene_offset.push_back(as_int(v, "scene_offset"));
  for (const auto& v : require_array(j, "motion")) r.motion.push_back(as_real(v, "motion"));
  for (const auto& v : require_array(j, "note_density")) r.note_density.push_back(as_int(v, "note_density"));
  for (const auto& v : require_array(j, "loudness")) r.loudness.push_back(as_real(v, "loudness"));
  validate(r, expected_d_sem);
  return r;
}

void save_record(const FeatureRecord& r, const std::filesystem::path& path) {
  validate(r);
  write_file(path, to_json(r));
}

FeatureRecord load_record(const std::filesystem::path& path, int expected_d_sem) {
  try {
    return from_json(read_file(path), expected_d_sem);
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

PaddedExample clip_or_pad(const FeatureRecord& r, int t_max) {
  if (t_max < 1) throw RangeError("t_max must be >= 1");
  PaddedExample ex;
  ex.id = r.id;
  ex.key = r.key;
  ex.length = std::min(r.length(), t_max);
  const auto n = static_cast<std::size_t>(t_max);
  const auto real = static_cast<std::size_t>(ex.length);
  const int d = r.d_sem();
  ex.chord_tokens.assign(n, music::kPadId);
  ex.mask.assign(n, 0);
  ex.semantic.assign(n, std::vector<double>(d, 0.0));
  ex.emotion.assign(n, EmotionProbs{});
  ex.scene_offset.assign(n, 0);
  ex.motion.assign(n, 0.0);
  ex.note_density.assign(n, 0);
  ex.loudness.assign(n, 0.0);
  for (std::size_t t = 0; t < real; ++t) {
    ex.chord_tokens[t] = music::tokenize(r.chords[t]);
    ex.mask[t] = 1;
    ex.semantic[t] = r.semantic[t];
    ex.emotion[t] = r.emotion[t];
    ex.scene_offset[t] = r.scene_offset[t];
    ex.motion[t] = r.motion[t];
    ex.note_density[t] = r.note_density[t];
    ex.loudness[t] = r.loudness[t];
  }
  return ex;
}

Split split_dataset(const std::vector<std::string>& ids, const SplitSpec& spec) {
  if (ids.empty()) throw Error("cannot split an empty id list");
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 || spec.train + spec.val + spec.test != 10)
    throw RangeError("split ratios must be non-negative and sum to 10");
  std::vector<std::string> order = ids;
  std::mt19937_64 rng(spec.shuffle_seed);
  // Fisher-Yates with explicit modulo so the order is identical on every standard library.
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const std::size_t n = order.size();
  const std::size_t n_train = n * spec.train / 10;
  const std::size_t n_val = n * spec.val / 10;
  Split s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

void save_manifest(const Manifest& m, const std::filesystem::path& dir) {
  json j;
  j["ids"] = m.ids;
  j["d_sem"] = m.d_sem;
  write_file(dir / "manifest.json", j.dump(1) + "\n");
}

Manifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  Manifest m;
  const json& ids = require_array(j, "ids");
  for (const auto& id : ids) {
    if (!id.is_string()) throw SchemaError(path.string() + ": ids must be strings");
    m.ids.push_back(id.get<std::string>());
  }
  m.d_sem = as_int(require(j, "d_sem"), "d_sem");
  return m;
}

std::filesystem::path record_path(const std::filesystem::path& dir, const std::string& id) {
  return dir / (id + ".json");
}

const FeatureRecord& Dataset::by_id(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return r;
  throw Error("no record with id '" + id + "'");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.manifest = load_manifest(dir);
  for (const auto& id : ds.manifest.ids) ds.records.push_back(load_record(record_path(dir, id), ds.manifest.d_sem));
  return ds;
}

void save_dataset(const std::vector<FeatureRecord>& records, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.d_sem = records.empty() ? 0 : records.front().d_sem();
  for (const auto& r : records) {
    validate(r, m.d_sem);
    save_record(r, record_path(dir, r.id));
    m.ids.push_back(r.id);
  }
  save_manifest(m, dir);
}

}  // namespace v2m::data
