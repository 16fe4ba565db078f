#include <doctest.h>

#include <filesystem>
#include <random>

#include "v2m/amt.hpp"
#include "v2m/checkpoint.hpp"
#include "v2m/error.hpp"

using namespace v2m;
using namespace v2m::amt;
using v2m::nn::Matrix;

namespace {

ModelConfig tiny(bool relative = true) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_dec = 2;
  c.d_ff = 32;
  c.d_sem = 4;
  c.max_len = 8;
  c.max_rel_dist = 8;
  c.dropout = 0.0;
  c.relative = relative;
  return c;
}

VideoInput random_video(const ModelConfig& c, std::size_t t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VideoInput v{Matrix(t, static_cast<std::size_t>(c.video_dim())), std::vector<std::uint8_t>(t, 1)};
  for (auto& x : v.features.storage()) x = u(rng);
  return v;
}

const music::Key kC{music::PitchClass(0), music::Mode::kMajor};

std::size_t closed_form_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff, v = c.vocab_size, vd = c.video_dim();
  const std::size_t attn = 4 * (d * d + d), ln = 2 * d, ff = d * f + f + f * d + d;
  const std::size_t rel = c.relative ? c.n_heads * (2 * c.max_rel_dist - 1) * c.d_head() : 0;
  const std::size_t embed = kQualityRows * d + kRootRows * d + (d + 1) * d + d + vd * d + d;
  const std::size_t enc = c.n_layers_enc * (2 * ln + attn + ff) + ln;
  const std::size_t dec = c.n_layers_dec * (3 * ln + 2 * attn + rel + ff) + ln;
  return embed + enc + dec + d * v + v;
}

}  // namespace

TEST_CASE("embedding rows") {
  CHECK(quality_row(music::kSilenceId) == music::kNumQualities);
  CHECK(quality_row(music::kPadId) == music::kNumQualities + 1);
  CHECK(quality_row(music::kSosId) == music::kNumQualities + 2);
  CHECK(root_row(music::kSilenceId) == 12);
  const int c_maj = music::tokenize(music::ChordLabel{music::Chord{music::PitchClass(0), music::Quality::kMaj}});
  CHECK(quality_row(c_maj) == 0);
  CHECK(root_row(c_maj) == 0);
  const int d_min = music::tokenize(music::ChordLabel{music::Chord{music::PitchClass(2), music::Quality::kMin}});
  CHECK(root_row(d_min) == 2);
}

TEST_CASE("parameter count matches the closed form") {
  for (bool relative : {true, false}) {
    const auto c = tiny(relative);
    AmtModel m(c, 1);
    CHECK(m.parameter_count() == closed_form_count(c));
  }
  ModelConfig big;
  big.d_sem = 512;
  CHECK(closed_form_count(big) > 40'000'000);
}

TEST_CASE("invalid configurations are rejected") {
  auto c = tiny();
  c.n_heads = 3;
  CHECK_THROWS(c.validate());
  c = tiny();
  c.dropout = 1.0;
  CHECK_THROWS(c.validate());
  c = tiny();
  c.d_model = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("logits shape and causality") {
  const auto c = tiny();
  AmtModel m(c, 3);
  const auto video = random_video(c, 6, 11);
  std::vector<int> tokens = {music::kSosId, 3, 40, music::kSilenceId, 77, 12};
  const Matrix base = m.logits(tokens, kC, video);
  CHECK(base.rows() == 6);
  CHECK(base.cols() == static_cast<std::size_t>(music::kVocabSize));
  CHECK(nn::all_finite(base));

  for (std::size_t k = 1; k < tokens.size(); ++k) {
    auto changed = tokens;
    changed[k] = changed[k] == 100 ? 101 : 100;
    const Matrix other = m.logits(changed, kC, video);
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t j = 0; j < base.cols(); ++j) CHECK(other(t, j) == base(t, j));
    double moved = 0.0;
    for (std::size_t j = 0; j < base.cols(); ++j) moved = std::max(moved, std::abs(other(k, j) - base(k, j)));
    CHECK(moved > 0.0);
  }
}

TEST_CASE("padded video steps do not influence the output") {
  const auto c = tiny();
  AmtModel m(c, 4);
  auto video = random_video(c, 6, 12);
  video.mask = {1, 1, 1, 1, 0, 0};
  const std::vector<int> tokens = {music::kSosId, 3, 4, 5};
  const Matrix base = m.logits(tokens, kC, video);
  for (std::size_t j = 0; j < video.features.cols(); ++j) {
    video.features(4, j) = 100.0;
    video.features(5, j) = -7.0;
  }
  CHECK(m.logits(tokens, kC, video) == base);
}

TEST_CASE("attention rows sum to one") {
  const auto c = tiny();
  AmtModel m(c, 5);
  AttentionTrace trace;
  m.logits({music::kSosId, 3, 4, 5, 6}, kC, random_video(c, 5, 13), &trace);
  CHECK(trace.encoder_self.size() == static_cast<std::size_t>(c.n_layers_enc * c.n_heads));
  CHECK(trace.decoder_self.size() == static_cast<std::size_t>(c.n_layers_dec * c.n_heads));
  CHECK(trace.decoder_cross.size() == static_cast<std::size_t>(c.n_layers_dec * c.n_heads));
  for (const auto* group : {&trace.encoder_self, &trace.decoder_self, &trace.decoder_cross})
    for (const auto& w : *group)
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) s += w(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
  for (const auto& w : trace.decoder_self)
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = i + 1; j < w.cols(); ++j) CHECK(w(i, j) == 0.0);
}

TEST_CASE("zero relative embeddings reduce to plain causal attention") {
  const auto c = tiny();
  AmtModel rel(c, 6);
  nn::ParamStore plain_params;
  for (std::size_t i = 0; i < rel.params().size(); ++i) {
    auto& p = rel.params()[i];
    if (p.name.find(".rel") != std::string::npos) {
      p.value.fill(0.0);
      continue;
    }
    plain_params.add(p.name, p.value, p.trainable);
  }
  AmtModel plain(tiny(false), std::move(plain_params));
  const auto video = random_video(c, 7, 14);
  const std::vector<int> tokens = {music::kSosId, 9, 9, 30, music::kSilenceId, 50, 51};
  CHECK(nn::max_abs_diff(rel.logits(tokens, kC, video), plain.logits(tokens, kC, video)) < 1e-12);
}

TEST_CASE("generation keeps the primer and obeys repeat limits") {
  const auto c = tiny();
  AmtModel m(c, 7);
  const auto video = random_video(c, 8, 15);
  const std::vector<music::ChordLabel> primer = music::parse_primer("Am F");
  const auto out = m.generate(video, kC, primer);
  REQUIRE(out.size() == 8);
  CHECK(out[0] == primer[0]);
  CHECK(out[1] == primer[1]);
  CHECK(m.generate(video, kC, primer) == out);

  std::vector<int> ids;
  for (const auto& l : out) ids.push_back(music::tokenize(l));
  for (int id : ids) {
    CHECK(id != music::kPadId);
    CHECK(id != music::kSosId);
  }
  for (std::size_t t = 2; t < ids.size(); ++t) CHECK_FALSE((ids[t] == ids[t - 1] && ids[t] == ids[t - 2]));

  CHECK(m.generate(video, kC, {}).size() == 8);
  CHECK_THROWS_AS(m.generate(video, kC, std::vector<music::ChordLabel>(8, primer[0])), RangeError);
}

TEST_CASE("select_next_token") {
  std::vector<double> logits(music::kVocabSize, 0.0);
  logits[music::kPadId] = 10.0;
  logits[music::kSosId] = 9.0;
  logits[20] = 5.0;
  logits[21] = 4.0;
  GenerationConstraints gc;
  CHECK(select_next_token(logits, {}, gc) == 20);
  CHECK(select_next_token(logits, {20}, gc) == 20);
  CHECK(select_next_token(logits, {20, 20}, gc) == 21);
  CHECK(select_next_token(logits, {21, 20, 20}, gc) == 21);

  logits[music::kSilenceId] = 6.0;
  gc.max_repeat_silence = 1;
  CHECK(select_next_token(logits, {music::kSilenceId}, gc) == 20);

  // Ties go to the lower id.
  std::vector<double> flat(music::kVocabSize, 1.0);
  CHECK(select_next_token(flat, {}, GenerationConstraints{}) == music::kSilenceId);

  gc.max_repeat_chord = 0;
  CHECK_THROWS(gc.validate());
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto c = tiny();
  AmtModel m(c, 8);
  m.set_input_normalization(std::vector<double>(c.video_dim(), 0.3), std::vector<double>(c.video_dim(), 2.0));
  const auto dir = std::filesystem::temp_directory_path() / "v2m_test_amt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ckpt";
  ckpt::save_model(path, m, {{"epoch", 3}});
  auto loaded = ckpt::load_model(path);
  CHECK(loaded.model.config() == c);
  CHECK(loaded.meta["epoch"] == 3);
  REQUIRE(loaded.model.params().size() == m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    CHECK(loaded.model.params()[i].name == m.params()[i].name);
    CHECK(loaded.model.params()[i].value == m.params()[i].value);
    CHECK(loaded.model.params()[i].trainable == m.params()[i].trainable);
  }
  const auto video = random_video(c, 5, 16);
  CHECK(loaded.model.logits({music::kSosId, 4, 5}, kC, video) == m.logits({music::kSosId, 4, 5}, kC, video));

  // Truncated and foreign files are rejected.
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  CHECK_THROWS(ckpt::load_model(path));
  std::filesystem::remove_all(dir);
}

TEST_CASE("adopting mismatched parameters throws") {
  AmtModel m(tiny(), 9);
  nn::ParamStore ps;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& p = m.params()[i];
    ps.add(p.name, p.name == "head.b" ? Matrix(1, 3) : p.value, p.trainable);
  }
  CHECK_THROWS_AS(AmtModel(tiny(), std::move(ps)), SchemaError);
}
