#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "v2m/cli.hpp"
#include "v2m/dataset.hpp"
#include "v2m/error.hpp"
#include "v2m/features.hpp"
#include "v2m/midi.hpp"

using namespace v2m;
using namespace v2m::cli;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("v2m_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "v2m");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

const std::vector<std::string> kTinyModel = {"--d-model", "16", "--heads", "2", "--layers", "1", "--d-ff",
                                              "32", "--dropout", "0", "--warmup-steps", "10", "--tmax", "8"};

std::vector<std::string> with_tiny(std::vector<std::string> args) {
  args.insert(args.end(), kTinyModel.begin(), kTinyModel.end());
  return args;
}

}  // namespace

TEST_CASE("configuration layers") {
  const auto dir = temp_dir("config");
  write_text(dir / "c.json", R"({"lambda": 0.2, "epochs": 7, "seed": 5, "regressor_kind": "fc"})");

  const auto defaults = resolve_config({}, {}, std::nullopt);
  CHECK(defaults.lambda == 0.4);
  CHECK(defaults.d_model == 512);
  CHECK(defaults.heads == 8);
  CHECK(defaults.layers == 6);
  CHECK(defaults.lr == 1.0);

  const auto file = resolve_config({}, {}, dir / "c.json");
  CHECK(file.lambda == 0.2);
  CHECK(file.epochs == 7);
  CHECK(file.seed == 5);
  CHECK(file.regressor_kind == "fc");

  const auto env = resolve_config({}, {{"V2M_LAMBDA", "0.6"}, {"V2M_SIMD", "scalar"}}, dir / "c.json");
  CHECK(env.lambda == 0.6);
  CHECK(env.epochs == 7);

  const auto flag = resolve_config({{"lambda", "0.9"}}, {{"V2M_LAMBDA", "0.6"}}, dir / "c.json");
  CHECK(flag.lambda == 0.9);

  CHECK_THROWS_AS(resolve_config({}, {{"V2M_LAMDBA", "0.6"}}, std::nullopt), SchemaError);
  write_text(dir / "bad.json", R"({"lamda": 0.2})");
  CHECK_THROWS_AS(resolve_config({}, {}, dir / "bad.json"), SchemaError);
  write_text(dir / "typed.json", R"({"epochs": "many"})");
  CHECK_THROWS(resolve_config({}, {}, dir / "typed.json"));
  CHECK_THROWS(resolve_config({{"epochs", "ten"}}, {}, std::nullopt));
  CHECK_THROWS_AS(resolve_config({{"lambda", "1.5"}}, {}, std::nullopt), RangeError);
  fs::remove_all(dir);
}

TEST_CASE("derived settings") {
  RunConfig c;
  c.d_model = 32;
  c.heads = 4;
  c.layers = 3;
  c.tmax = 50;
  const auto m = c.model_config(7);
  CHECK(m.d_model == 32);
  CHECK(m.n_layers_enc == 3);
  CHECK(m.n_layers_dec == 3);
  CHECK(m.d_sem == 7);
  CHECK(m.max_len == 50);
  CHECK(m.max_rel_dist == 50);
  CHECK(c.optimizer_spec().beta2 == 0.98);
  CHECK(c.loss_weights().lambda == 0.4);
  CHECK(c.regressor_config(3).kind == post::RegressorKind::kBiGru);
  CHECK(config_keys().size() == 30);
}

TEST_CASE("command errors exit nonzero") {
  CHECK(invoke({}).code != 0);
  CHECK(invoke({"nonsense"}).code != 0);
  const auto zero = invoke({"synth", "--n", "0", "--out", (fs::temp_directory_path() / "v2m_never").string()});
  CHECK(zero.code == 1);
  CHECK_FALSE(zero.err.empty());
  CHECK(invoke({"train", "--lambda", "2", "--data", "x", "--out", "y"}).code == 1);
  CHECK(invoke({"generate", "--data", "missing.json", "--checkpoint", "missing.ckpt", "--out", "x.mid"}).code == 1);
}

TEST_CASE("synth, train, generate and render") {
  const auto dir = temp_dir("pipeline");
  const auto ds = (dir / "ds").string(), ckpt = (dir / "m.ckpt").string();
  REQUIRE(invoke({"synth", "--n", "10", "--length", "8", "--d-sem", "4", "--seed", "3", "--out", ds}).code == 0);
  const auto trained = invoke(with_tiny({"train", "--data", ds, "--out", ckpt, "--epochs", "2", "--seed", "1"}));
  REQUIRE(trained.code == 0);
  CHECK(fs::exists(ckpt));
  const auto log = slurp(ckpt + ".log");
  CHECK(log.rfind("epoch,chord_loss,emotion_loss,total_loss,val_hits@1,val_hits@3,val_hits@5,wall_seconds\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 3);

  const auto resumed =
      invoke(with_tiny({"train", "--data", ds, "--out", ckpt, "--resume", ckpt, "--epochs", "1", "--seed", "1"}));
  REQUIRE(resumed.code == 0);
  const auto log2 = slurp(ckpt + ".log");
  CHECK(std::count(log2.begin(), log2.end(), '\n') == 4);
  CHECK(log2.find("\n3,") != std::string::npos);

  const auto record = (fs::path(ds) / "synth_3_0.json").string();
  REQUIRE(fs::exists(record));
  const auto gen = (dir / "gen.mid").string();
  const auto generated = invoke({"generate", "--data", record, "--checkpoint", ckpt, "--out", gen, "--key", "D:major",
                                 "--primer", "D Bm", "--use-ground-truth-expressive"});
  REQUIRE(generated.code == 0);
  std::istringstream chords(slurp(dir / "gen.txt"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(chords, l);) lines.push_back(l);
  REQUIRE(lines.size() == 8);
  CHECK(lines[0] == "D:maj");
  CHECK(lines[1] == "B:min");
  CHECK_FALSE(midi::parse(midi::read_file(gen)).notes.empty());

  const auto again = (dir / "gen2.mid").string();
  REQUIRE(invoke({"generate", "--data", record, "--checkpoint", ckpt, "--out", again, "--key", "D:major", "--primer",
                  "D Bm", "--use-ground-truth-expressive"})
              .code == 0);
  CHECK(slurp(gen) == slurp(again));

  CHECK(invoke({"generate", "--data", record, "--checkpoint", ckpt, "--out", gen, "--primer",
                "C C C C C C C C C"}).code == 1);

  write_text(dir / "song.txt", "C\nAm\nF\nG7\nN\n");
  const auto rendered = (dir / "r.mid").string();
  REQUIRE(invoke({"render", "--data", record, "--chords", (dir / "song.txt").string(), "--out", rendered}).code == 0);
  CHECK(midi::parse(midi::read_file(rendered)).notes.size() > 4);

  const auto evaluated = invoke(with_tiny({"evaluate", "--data", ds, "--checkpoint", ckpt, "--seed", "1", "--out",
                                           (dir / "eval").string()}));
  REQUIRE(evaluated.code == 0);
  CHECK(evaluated.out.find("hits@1 ") != std::string::npos);
  CHECK(evaluated.out.find("emotion_match_rate ") != std::string::npos);
  CHECK(fs::exists(dir / "eval" / "confusion_quality.csv"));
  fs::remove_all(dir);
}

TEST_CASE("extract builds records from raw inputs") {
  const auto dir = temp_dir("extract");
  const auto inputs = dir / "inputs";
  auto make = [&](const std::string& id, bool with_emotion) {
    const auto d = inputs / id;
    fs::create_directories(d / "frames");
    write_text(d / "chords.txt", "D:maj\nB:min\nG:maj\nA:maj\n");
    write_text(d / "notes.csv", "onset,duration,pitch,velocity\n0.0,0.5,62,80\n0.5,0.5,66,80\n1.2,0.4,71,90\n");
    write_text(d / "rms.txt", "3276.7\n32767\n0\n16383.5\n");
    write_text(d / "scenes.txt", "0\n0\n1\n1\n");
    if (with_emotion)
      write_text(d / "emotion.csv", "0.6,0.1,0.1,0.1,0.05,0.05\n0,0,0,1,0,0\n0,0,0,1,0,0\n0,0,0,0,1,0\n");
    write_text(d / "semantic.csv", "0.1,0.2\n0.3,0.4\n0.5,0.6\n0.7,0.8\n");
    for (int t = 0; t < 4; ++t) {
      features::RgbFrame f{2, 2, std::vector<std::uint8_t>(12, static_cast<std::uint8_t>(40 * t))};
      features::write_ppm(f, d / "frames" / ("f" + std::to_string(t) + ".ppm"));
    }
  };
  make("clip_a", true);
  make("clip_b", false);
  const auto out = (dir / "ds").string();
  const auto r = invoke({"extract", "--data", inputs.string(), "--out", out});
  REQUIRE(r.code == 0);
  const auto ds = data::load_dataset(out);
  REQUIRE(ds.records.size() == 1);
  const auto& rec = ds.records[0];
  CHECK(rec.id == "clip_a");
  CHECK(music::format_key(rec.key) == "C:major");
  CHECK(music::format_chord(rec.chords[0]) == "C:maj");
  CHECK(music::format_chord(rec.chords[1]) == "A:min");
  CHECK(rec.note_density == std::vector<int>{2, 1, 0, 0});
  CHECK(rec.loudness[0] == doctest::Approx(0.1));
  CHECK(rec.loudness[2] == 0.0);
  CHECK(rec.scene_offset == std::vector<int>{0, 1, 0, 1});
  CHECK(rec.d_sem() == 2);

  fs::remove_all(inputs / "clip_a");
  CHECK(invoke({"extract", "--data", inputs.string(), "--out", (dir / "ds2").string()}).code == 1);
  fs::remove_all(dir);
}
