#include <algorithm>
#include <fstream>
#include <sstream>

#include "v2m/cli.hpp"
#include "v2m/dataset.hpp"
#include "v2m/error.hpp"
#include "v2m/features.hpp"
#include "v2m/log.hpp"

namespace fs = std::filesystem;

namespace v2m::cli {

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing " + path.filename().string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    out.push_back(line);
  }
  return out;
}

std::vector<double> split_numbers(const std::string& line, const fs::path& path) {
  std::vector<double> out;
  std::istringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ParseError(path.filename().string() + ": bad number '" + cell + "'");
    }
  }
  return out;
}

// Rows of numbers; a first line that does not parse is taken as a header.
std::vector<std::vector<double>> read_table(const fs::path& path) {
  auto lines = read_lines(path);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      rows.push_back(split_numbers(lines[i], path));
    } catch (const ParseError&) {
      if (i != 0) throw;
    }
  }
  return rows;
}

void expect_length(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw SchemaError(std::string(what) + " has " + std::to_string(got) + " seconds, chords.txt has " +
                      std::to_string(want));
}

data::FeatureRecord extract_record(const fs::path& dir, const std::array<features::KeyProfileSet, 3>& profiles) {
  data::FeatureRecord r;
  r.id = dir.filename().string();

  std::vector<music::ChordLabel> chords;
  for (const auto& line : read_lines(dir / "chords.txt")) chords.push_back(music::parse_chord(line));
  const std::size_t t = chords.size();
  if (t == 0) throw SchemaError("chords.txt is empty");

  std::vector<features::NoteEvent> notes;
  for (const auto& row : read_table(dir / "notes.csv")) {
    if (row.size() != 4) throw SchemaError("notes.csv rows need onset,duration,pitch,velocity");
    features::NoteEvent n{row[0], row[1], static_cast<int>(row[2]), static_cast<int>(row[3])};
    features::validate(n);
    notes.push_back(n);
  }

  std::vector<double> rms;
  for (const auto& row : read_table(dir / "rms.txt")) {
    if (row.size() != 1) throw SchemaError("rms.txt needs one value per line");
    rms.push_back(row[0]);
  }
  expect_length(rms.size(), t, "rms.txt");

  std::vector<int> scenes;
  for (const auto& row : read_table(dir / "scenes.txt")) {
    if (row.size() != 1) throw SchemaError("scenes.txt needs one id per line");
    scenes.push_back(static_cast<int>(row[0]));
  }
  expect_length(scenes.size(), t, "scenes.txt");

  std::vector<features::EmotionProbs> emotion;
  for (const auto& row : read_table(dir / "emotion.csv")) {
    if (row.size() != features::kNumEmotions) throw SchemaError("emotion.csv rows need 6 probabilities");
    features::EmotionProbs p{};
    std::copy(row.begin(), row.end(), p.begin());
    emotion.push_back(p);
  }
  expect_length(emotion.size(), t, "emotion.csv");

  const auto semantic = read_table(dir / "semantic.csv");
  expect_length(semantic.size(), t, "semantic.csv");

  const fs::path frame_dir = dir / "frames";
  if (!fs::is_directory(frame_dir)) throw Error("missing frames/");
  std::vector<fs::path> frame_files;
  for (const auto& e : fs::directory_iterator(frame_dir))
    if (e.path().extension() == ".ppm") frame_files.push_back(e.path());
  std::sort(frame_files.begin(), frame_files.end());
  expect_length(frame_files.size(), t, "frames/");
  std::vector<features::RgbFrame> frames;
  for (const auto& f : frame_files) frames.push_back(features::read_ppm(f));

  // Key detection runs on the chord expansion, not the transcription.
  const auto chord_notes = features::chords_to_notes(chords);
  if (chord_notes.empty()) throw SchemaError("chords.txt holds only silence; no key can be detected");
  const music::Key key = features::detect_key(chord_notes, profiles);
  auto normalized = music::normalize_sequence(chords, key);
  r.key = normalized.key;
  r.chords = std::move(normalized.chords);
  r.note_density = features::note_density(notes, static_cast<int>(t));
  for (double v : rms) r.loudness.push_back(features::loudness_from_rms(v));
  r.scene_offset = features::scene_offsets(scenes);
  r.motion = features::motion_values(frames);
  r.emotion = features::smooth_emotions(emotion);
  r.semantic = semantic;
  data::validate(r);
  return r;
}

}  // namespace

int cmd_extract(const RunConfig& c, std::ostream& out) {
  if (c.data.empty() || c.out.empty()) throw Error("extract needs --data <inputs dir> and --out <dataset dir>");
  const auto profiles = features::ordered_profiles(features::load_key_profiles(features::default_key_profile_path()));
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(c.data))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());

  std::vector<data::FeatureRecord> records;
  for (const auto& d : dirs) {
    try {
      auto r = extract_record(d, profiles);
      if (!records.empty() && r.d_sem() != records.front().d_sem())
        throw SchemaError("semantic width " + std::to_string(r.d_sem()) + " differs from " +
                          std::to_string(records.front().d_sem()));
      out << r.id << ": " << r.length() << " s, key " << music::format_key(r.key) << "\n";
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      log::warn("skipping " + d.filename().string() + ": " + e.what());
    }
  }
  if (records.empty()) throw Error("no record could be extracted from " + c.data);
  data::save_dataset(records, c.out);
  out << "wrote " << records.size() << " of " << dirs.size() << " records to " << c.out << "\n";
  return 0;
}

}  // namespace v2m::cli
