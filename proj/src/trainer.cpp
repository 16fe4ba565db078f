#include "v2m/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "v2m/error.hpp"

namespace v2m::train {

TeacherForcedExample prepare_example(const data::FeatureRecord& r, int t_max, const EmotionChordTable& table) {
  const auto padded = data::clip_or_pad(r, t_max);
  const auto n = static_cast<std::size_t>(padded.length);
  if (n == 0) throw SchemaError("record '" + r.id + "' is empty");
  TeacherForcedExample ex;
  ex.id = r.id;
  ex.key = r.key;
  auto full = amt::video_input(padded);
  ex.video.features = nn::Matrix(n, full.features.cols());
  std::copy_n(full.features.data(), ex.video.features.size(), ex.video.features.data());
  ex.video.mask.assign(n, 1);
  ex.targets.assign(padded.chord_tokens.begin(), padded.chord_tokens.begin() + static_cast<std::ptrdiff_t>(n));
  ex.decoder_input.push_back(music::kSosId);
  ex.decoder_input.insert(ex.decoder_input.end(), ex.targets.begin(), ex.targets.end() - 1);
  ex.mask.assign(n, 1);
  ex.emotion = emotion_targets(std::span(padded.emotion).first(n), ex.mask, table);
  return ex;
}

void write_log_header(std::ostream& out) {
  out << "epoch,chord_loss,emotion_loss,total_loss,val_hits@1,val_hits@3,val_hits@5,wall_seconds\n";
}

void write_log_line(std::ostream& out, const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.4f,%.4f,%.4f,%.3f\n", e.epoch, e.chord_loss, e.emotion_loss,
                e.total_loss, e.val_hits1, e.val_hits3, e.val_hits5, e.wall_seconds);
  out << buf;
}

LossBreakdown accumulate_gradients(amt::AmtModel& model, const TeacherForcedExample& ex, const LossWeights& w,
                                   double grad_scale, std::mt19937_64* dropout_rng) {
  nn::Graph g(true);
  amt::ForwardOptions opts;
  opts.training = dropout_rng != nullptr;
  opts.rng = dropout_rng;
  nn::Var logits = model.forward(g, ex.decoder_input, ex.key, ex.video, opts);
  nn::Var chord = nn::cross_entropy(logits, ex.targets, ex.mask);
  nn::Var emo = nn::multi_hot_bce(logits, ex.emotion.targets, ex.emotion.active);
  nn::Var total = total_loss(chord, emo, w);
  if (grad_scale != 1.0) total = nn::scale(total, grad_scale);
  LossBreakdown out{chord.value()(0, 0), emo.value()(0, 0), 0.0};
  out.total = total_loss(out.chord, out.emotion, w);
  if (!std::isfinite(out.total))
    throw DivergenceError("non-finite loss on '" + ex.id + "' (chord " + std::to_string(out.chord) + ", emotion " +
                          std::to_string(out.emotion) + ")");
  g.backward(total);
  return out;
}

TrainResult train(amt::AmtModel& model, Adam& adam, const std::vector<data::FeatureRecord>& train_set,
                  const std::vector<data::FeatureRecord>& val_set, const TrainOptions& opts) {
  if (train_set.empty()) throw Error("training set is empty");
  if (opts.batch_size < 1) throw RangeError("batch_size must be >= 1");
  opts.weights.validate();
  const auto table = EmotionChordTable::standard();
  std::vector<TeacherForcedExample> examples;
  for (const auto& r : train_set) examples.push_back(prepare_example(r, opts.t_max, table));

  std::mt19937_64 dropout_rng(opts.seed);
  std::vector<std::size_t> order(examples.size());
  TrainResult result;
  for (int epoch = opts.first_epoch; epoch < opts.first_epoch + opts.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(opts.seed * 1000003ULL + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);

    LossBreakdown sum;
    for (std::size_t b = 0; b < order.size(); b += opts.batch_size) {
      const std::size_t end = std::min(order.size(), b + opts.batch_size);
      model.params().zero_grad();
      const double scale = 1.0 / static_cast<double>(end - b);
      for (std::size_t i = b; i < end; ++i) {
        const auto l = accumulate_gradients(model, examples[order[i]], opts.weights, scale,
                                            model.config().dropout > 0.0 ? &dropout_rng : nullptr);
        sum.chord += l.chord;
        sum.emotion += l.emotion;
        sum.total += l.total;
      }
      adam.step(model.params(), scheduled_lr(opts.optimizer, adam.steps() + 1, model.config().d_model));
    }
    const double n = static_cast<double>(examples.size());
    EpochLog e;
    e.epoch = epoch;
    e.chord_loss = sum.chord / n;
    e.emotion_loss = sum.emotion / n;
    e.total_loss = sum.total / n;
    if (!val_set.empty()) {
      const auto s = teacher_forced_scores(model, val_set, opts.t_max);
      e.val_hits1 = s.hits1;
      e.val_hits3 = s.hits3;
      e.val_hits5 = s.hits5;
    }
    e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(e);
    if (opts.on_epoch) opts.on_epoch(e);
  }
  return result;
}

TeacherForcedScores teacher_forced_scores(amt::AmtModel& model, const std::vector<data::FeatureRecord>& records,
                                          int t_max) {
  const auto table = EmotionChordTable::standard();
  TeacherForcedScores s;
  long steps = 0;
  double h1 = 0, h3 = 0, h5 = 0, chord = 0, emo = 0;
  long emo_steps = 0;
  for (const auto& r : records) {
    const auto ex = prepare_example(r, t_max, table);
    const auto logits = model.logits(ex.decoder_input, ex.key, ex.video);
    const auto n = static_cast<double>(ex.targets.size());
    h1 += hits_at_k(logits, ex.targets, 1) * n;
    h3 += hits_at_k(logits, ex.targets, 3) * n;
    h5 += hits_at_k(logits, ex.targets, 5) * n;
    chord += chord_loss(logits, ex.targets, ex.mask) * n;
    long active = 0;
    for (auto a : ex.emotion.active) active += a;
    if (active) emo += emotion_loss(logits, ex.emotion.targets, ex.emotion.active) * static_cast<double>(active);
    emo_steps += active;
    steps += static_cast<long>(ex.targets.size());
  }
  if (steps) {
    s.hits1 = h1 / steps;
    s.hits3 = h3 / steps;
    s.hits5 = h5 / steps;
    s.chord_loss = chord / steps;
  }
  if (emo_steps) s.emotion_loss = emo / static_cast<double>(emo_steps);
  return s;
}

MatchCount emotion_match(const std::vector<music::ChordLabel>& generated, std::span<const features::EmotionProbs> emotions,
                         const EmotionChordTable& table) {
  MatchCount m;
  for (std::size_t t = 0; t < generated.size() && t < emotions.size(); ++t) {
    const auto e = features::top_emotion(emotions[t]);
    const auto* c = std::get_if<music::Chord>(&generated[t]);
    if (e == features::Emotion::kNeutral || !c) continue;
    ++m.considered;
    if (table.contains(e, c->quality)) ++m.matched;
  }
  return m;
}

EvalReport evaluate(amt::AmtModel& model, const std::vector<data::FeatureRecord>& records, int t_max,
                    const amt::GenerationConstraints& constraints) {
  const auto table = EmotionChordTable::standard();
  EvalReport rep;
  rep.teacher_forced = teacher_forced_scores(model, records, t_max);
  std::vector<int> all_pred, all_target;
  std::vector<features::EmotionProbs> all_emotion;
  MatchCount match;
  double fr_emo = 0.0;
  long fr_steps = 0;
  for (const auto& r : records) {
    const auto ex = prepare_example(r, t_max, table);
    auto gen = model.generate(ex.video, ex.key, {}, constraints);
    std::vector<int> tokens;
    for (const auto& c : gen) tokens.push_back(music::tokenize(c));
    // Free-running: the decoder consumes its own output.
    std::vector<int> input{music::kSosId};
    input.insert(input.end(), tokens.begin(), tokens.end() - 1);
    const auto logits = model.logits(input, ex.key, ex.video);
    long active = 0;
    for (auto a : ex.emotion.active) active += a;
    if (active) fr_emo += emotion_loss(logits, ex.emotion.targets, ex.emotion.active) * static_cast<double>(active);
    fr_steps += active;

    const auto n = ex.targets.size();
    const auto emotions = std::span(r.emotion).first(n);
    const auto m = emotion_match(gen, emotions, table);
    match.matched += m.matched;
    match.considered += m.considered;
    all_pred.insert(all_pred.end(), tokens.begin(), tokens.end());
    all_target.insert(all_target.end(), ex.targets.begin(), ex.targets.end());
    all_emotion.insert(all_emotion.end(), emotions.begin(), emotions.end());
    rep.generated.push_back(std::move(gen));
  }
  if (fr_steps) rep.free_running_emotion_loss = fr_emo / static_cast<double>(fr_steps);
  rep.emotion_match_steps = match.considered;
  rep.emotion_match_rate = match.considered ? static_cast<double>(match.matched) / match.considered : 0.0;
  rep.confusion = confusion_matrices(all_pred, all_target, all_emotion, table);
  return rep;
}

}  // namespace v2m::train
