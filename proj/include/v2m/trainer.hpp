#pragma once

// Teacher-forced training of the chord transformer and its evaluation suite.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include "v2m/amt.hpp"
#include "v2m/dataset.hpp"
#include "v2m/losses.hpp"
#include "v2m/metrics.hpp"
#include "v2m/optimizer.hpp"

namespace v2m::train {

// One record prepared for teacher forcing, trimmed to its real length.
struct TeacherForcedExample {
  std::string id;
  music::Key key;
  amt::VideoInput video;
  std::vector<int> decoder_input;  // SOS, c_0 .. c_{T-2}
  std::vector<int> targets;        // c_0 .. c_{T-1}
  std::vector<std::uint8_t> mask;
  EmotionTargets emotion;
};

TeacherForcedExample prepare_example(const data::FeatureRecord& r, int t_max, const EmotionChordTable& table);

struct EpochLog {
  int epoch = 0;
  double chord_loss = 0.0;
  double emotion_loss = 0.0;
  double total_loss = 0.0;
  double val_hits1 = 0.0;
  double val_hits3 = 0.0;
  double val_hits5 = 0.0;
  double wall_seconds = 0.0;
};

// "epoch,chord_loss,emotion_loss,total_loss,val_hits@1,val_hits@3,val_hits@5,wall_seconds"
void write_log_header(std::ostream& out);
void write_log_line(std::ostream& out, const EpochLog& e);

struct TrainOptions {
  int epochs = 10;
  std::uint64_t seed = 0;
  LossWeights weights;
  OptimizerSpec optimizer;
  int batch_size = 1;
  int t_max = data::kDefaultTmax;
  int first_epoch = 1;  // resumed runs continue the numbering
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

// Trains in place. Throws DivergenceError on a non-finite loss.
TrainResult train(amt::AmtModel& model, Adam& adam, const std::vector<data::FeatureRecord>& train_set,
                  const std::vector<data::FeatureRecord>& val_set, const TrainOptions& opts);

struct LossBreakdown {
  double chord = 0.0;
  double emotion = 0.0;
  double total = 0.0;
};

// Gradient of the total loss for one example accumulated into the params;
// returns the loss values.
LossBreakdown accumulate_gradients(amt::AmtModel& model, const TeacherForcedExample& ex, const LossWeights& w,
                                   double grad_scale = 1.0, std::mt19937_64* dropout_rng = nullptr);

struct TeacherForcedScores {
  double hits1 = 0.0, hits3 = 0.0, hits5 = 0.0;
  double chord_loss = 0.0;
  double emotion_loss = 0.0;
};

TeacherForcedScores teacher_forced_scores(amt::AmtModel& model, const std::vector<data::FeatureRecord>& records,
                                          int t_max);

struct EvalReport {
  TeacherForcedScores teacher_forced;
  double free_running_emotion_loss = 0.0;
  // Share of generated non-neutral, non-silent steps whose quality is in the
  // video emotion's row.
  double emotion_match_rate = 0.0;
  long emotion_match_steps = 0;
  std::optional<ConfusionMatrices> confusion;
  std::vector<std::vector<music::ChordLabel>> generated;
};

EvalReport evaluate(amt::AmtModel& model, const std::vector<data::FeatureRecord>& records, int t_max,
                    const amt::GenerationConstraints& constraints = {});

// Uses the video's own emotion series; counts steps where the generated quality
// belongs to the top emotion's row.
struct MatchCount {
  long matched = 0;
  long considered = 0;
};
MatchCount emotion_match(const std::vector<music::ChordLabel>& generated, std::span<const features::EmotionProbs> emotions,
                         const EmotionChordTable& table);

}  // namespace v2m::train
