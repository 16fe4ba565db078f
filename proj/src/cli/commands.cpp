#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "v2m/arpeggio.hpp"
#include "v2m/checkpoint.hpp"
#include "v2m/cli.hpp"
#include "v2m/dataset.hpp"
#include "v2m/error.hpp"
#include "v2m/log.hpp"
#include "v2m/midi.hpp"
#include "v2m/trainer.hpp"

namespace fs = std::filesystem;

namespace v2m::cli {

namespace {

std::vector<data::FeatureRecord> pick(const data::Dataset& ds, const std::vector<std::string>& ids) {
  std::vector<data::FeatureRecord> out;
  for (const auto& id : ids) out.push_back(ds.by_id(id));
  return out;
}

data::Split split_of(const data::Dataset& ds, std::uint64_t seed) {
  data::SplitSpec spec;
  spec.shuffle_seed = seed;
  return data::split_dataset(ds.manifest.ids, spec);
}

void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) throw Error(std::string(command) + " needs --" + flag);
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

int cmd_synth(const RunConfig& c, std::ostream& out) {
  require(c.out, "out", "synth");
  if (c.n <= 0) throw Error("synth needs --n > 0");
  data::SynthOptions opts;
  opts.length = c.length;
  opts.d_sem = c.d_sem;
  const auto records = data::synthesize_dataset(c.n, c.seed, opts);
  data::save_dataset(records, c.out);
  out << "wrote " << records.size() << " records to " << c.out << "\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  require(c.data, "data", "train");
  require(c.out, "out", "train");
  const auto ds = data::load_dataset(c.data);
  const auto split = split_of(ds, c.seed);
  const auto train_set = pick(ds, split.train);
  const auto val_set = pick(ds, split.val);
  if (train_set.empty()) throw Error("training split is empty");

  train::TrainOptions opts;
  opts.epochs = c.epochs;
  opts.seed = c.seed;
  opts.weights = c.loss_weights();
  opts.optimizer = c.optimizer_spec();
  opts.batch_size = c.batch_size;
  opts.t_max = c.tmax;

  std::optional<amt::AmtModel> model;
  train::Adam adam(opts.optimizer);
  const fs::path log_path = c.out + ".log";
  bool append = false;
  if (!c.resume.empty()) {
    auto loaded = ckpt::load_model(c.resume);
    if (loaded.model.config().d_sem != ds.manifest.d_sem)
      throw SchemaError("checkpoint d_sem " + std::to_string(loaded.model.config().d_sem) + " != dataset d_sem " +
                        std::to_string(ds.manifest.d_sem));
    adam.load_state(loaded.optimizer_state);
    opts.first_epoch = loaded.meta.value("epoch", 0) + 1;
    model.emplace(std::move(loaded.model));
    append = fs::exists(log_path);
  } else {
    model.emplace(c.model_config(ds.manifest.d_sem), c.seed);
    std::vector<amt::VideoInput> inputs;
    for (const auto& r : train_set) inputs.push_back(amt::video_input(data::clip_or_pad(r, c.tmax)));
    model->fit_input_normalization(inputs);
  }

  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot write " + log_path.string());
  if (!append) train::write_log_header(log);
  train::write_log_header(out);
  opts.on_epoch = [&](const train::EpochLog& e) {
    train::write_log_line(log, e);
    log.flush();
    train::write_log_line(out, e);
  };
  const auto result = train::train(*model, adam, train_set, val_set, opts);
  const int last = opts.first_epoch + opts.epochs - 1;
  nlohmann::json meta = {{"epoch", last}, {"seed", c.seed}, {"lambda", c.lambda}};
  const auto state = adam.state();
  ckpt::save_model(c.out, *model, meta, &state);
  out << "saved " << c.out << " after epoch " << last << "\n";
  return 0;
}

int cmd_train_regressor(const RunConfig& c, std::ostream& out) {
  require(c.data, "data", "train-regressor");
  require(c.out, "out", "train-regressor");
  const auto ds = data::load_dataset(c.data);
  const auto split = split_of(ds, c.seed);
  const auto train_set = pick(ds, split.train);
  const auto val_set = pick(ds, split.val);
  post::Regressor model(c.regressor_config(ds.manifest.d_sem), c.seed);
  post::RegressorTrainOptions opts;
  opts.epochs = c.regressor_epochs;
  opts.lr = c.regressor_lr;
  opts.seed = c.seed;
  opts.t_max = c.tmax;
  const fs::path log_path = c.out + ".log";
  std::ofstream log(log_path);
  if (!log) throw Error("cannot write " + log_path.string());
  const std::string header = "epoch,train_loss,val_rmse_density,val_rmse_loudness\n";
  log << header;
  out << header;
  opts.on_epoch = [&](int epoch, double loss, double rd, double rl) {
    const std::string line =
        std::to_string(epoch) + "," + fixed(loss, 6) + "," + fixed(rd, 6) + "," + fixed(rl, 6) + "\n";
    log << line;
    out << line;
  };
  post::train_regressor(model, train_set, val_set, opts);
  if (!val_set.empty()) {
    const auto base = post::constant_baseline(train_set, val_set, c.tmax);
    out << "constant-mean baseline: density " << fixed(base.rmse_density, 6) << ", loudness "
        << fixed(base.rmse_loudness, 6) << "\n";
  }
  post::save_regressor(c.out, model);
  out << "saved " << c.out << "\n";
  return 0;
}

namespace {

struct Expressive {
  std::vector<double> density;
  std::vector<double> loudness;
};

Expressive expressive_for(const RunConfig& c, const data::FeatureRecord& r, std::size_t steps, bool use_truth) {
  Expressive e;
  if (use_truth) {
    for (std::size_t t = 0; t < steps; ++t) {
      e.density.push_back(static_cast<double>(r.note_density[t]));
      e.loudness.push_back(r.loudness[t]);
    }
    return e;
  }
  require(c.regressor, "regressor", "expressive rendering without --use-ground-truth-expressive");
  auto reg = post::load_regressor(c.regressor);
  if (reg.config().d_sem != r.d_sem())
    throw SchemaError("regressor d_sem " + std::to_string(reg.config().d_sem) + " != record d_sem " +
                      std::to_string(r.d_sem()));
  const auto p = reg.predict(amt::video_input(data::clip_or_pad(r, static_cast<int>(steps))));
  return {p.density, p.loudness};
}

std::vector<std::uint8_t> render_chords(const std::vector<music::ChordLabel>& chords, const Expressive& e) {
  std::vector<int> levels;
  for (double d : e.density) levels.push_back(post::density_to_level(d));
  auto notes = post::arpeggiate(chords, levels);
  post::apply_velocity(notes, e.loudness);
  return midi::render(notes);
}

void write_chord_text(const fs::path& path, const std::vector<music::ChordLabel>& chords) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  for (const auto& ch : chords) f << music::format_chord(ch) << "\n";
}

}  // namespace

int cmd_generate(const RunConfig& c, std::ostream& out) {
  require(c.data, "data", "generate");
  require(c.checkpoint, "checkpoint", "generate");
  require(c.out, "out", "generate");
  const auto record = data::load_record(c.data);
  auto loaded = ckpt::load_model(c.checkpoint);
  auto& model = loaded.model;
  if (model.config().d_sem != record.d_sem())
    throw SchemaError("checkpoint d_sem " + std::to_string(model.config().d_sem) + " != features d_sem " +
                      std::to_string(record.d_sem()));
  const music::Key target = c.key.empty() ? record.key : music::parse_key(c.key);
  // The model works in the reference keys; primer and output move through the shift.
  const int shift = music::normalization_shift(target);
  const music::Key reference{target.tonic + shift, target.mode};
  std::vector<music::ChordLabel> primer;
  for (const auto& ch : music::parse_primer(c.primer)) primer.push_back(music::transpose_chord(ch, shift));

  const int steps = std::min(record.length(), model.config().max_len);
  const auto video = amt::video_input(data::clip_or_pad(record, steps));
  if (static_cast<int>(primer.size()) > steps)
    throw RangeError("primer has " + std::to_string(primer.size()) + " chords but the video lasts " +
                     std::to_string(steps) + " s");
  auto generated = model.generate(video, reference, primer);
  for (auto& ch : generated) ch = music::transpose_chord(ch, -shift);

  const auto expressive = expressive_for(c, record, generated.size(), c.use_ground_truth_expressive);
  const auto bytes = render_chords(generated, expressive);
  midi::write_file(c.out, bytes);
  fs::path chord_path = c.out;
  chord_path.replace_extension(".txt");
  write_chord_text(chord_path, generated);
  out << "key " << music::format_key(target) << ", " << generated.size() << " chords\n";
  out << "wrote " << c.out << " and " << chord_path.string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  require(c.data, "data", "evaluate");
  require(c.checkpoint, "checkpoint", "evaluate");
  const auto ds = data::load_dataset(c.data);
  const auto test_set = pick(ds, split_of(ds, c.seed).test);
  if (test_set.empty()) throw Error("test split is empty");
  auto loaded = ckpt::load_model(c.checkpoint);
  const auto rep = train::evaluate(loaded.model, test_set, c.tmax);
  out << "records " << test_set.size() << "\n";
  out << "hits@1 " << fixed(rep.teacher_forced.hits1, 4) << "\n";
  out << "hits@3 " << fixed(rep.teacher_forced.hits3, 4) << "\n";
  out << "hits@5 " << fixed(rep.teacher_forced.hits5, 4) << "\n";
  out << "chord_loss " << fixed(rep.teacher_forced.chord_loss, 6) << "\n";
  out << "emotion_loss_teacher_forced " << fixed(rep.teacher_forced.emotion_loss, 6) << "\n";
  out << "emotion_loss_free_running " << fixed(rep.free_running_emotion_loss, 6) << "\n";
  out << "emotion_match_rate " << fixed(rep.emotion_match_rate, 4) << " over " << rep.emotion_match_steps
      << " steps\n";
  if (!c.out.empty() && rep.confusion) {
    fs::create_directories(c.out);
    const std::pair<const char*, const train::CountMatrix*> files[] = {
        {"confusion_chord.csv", &rep.confusion->chord},
        {"confusion_root.csv", &rep.confusion->root},
        {"confusion_quality.csv", &rep.confusion->quality},
    };
    for (const auto& [name, m] : files) {
      std::ofstream f(fs::path(c.out) / name);
      if (!f) throw Error("cannot write " + (fs::path(c.out) / name).string());
      m->write_csv(f);
    }
    out << "wrote confusion matrices to " << c.out << "\n";
  }
  return 0;
}

int cmd_render(const RunConfig& c, std::ostream& out) {
  require(c.data, "data", "render");
  require(c.out, "out", "render");
  const auto record = data::load_record(c.data);
  std::vector<music::ChordLabel> chords = record.chords;
  if (!c.chords.empty()) {
    std::ifstream f(c.chords);
    if (!f) throw Error("cannot open " + c.chords);
    chords.clear();
    for (std::string line; std::getline(f, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) chords.push_back(music::parse_compact_chord(line));
    }
  }
  if (chords.size() > static_cast<std::size_t>(record.length()))
    throw SchemaError("chord file has " + std::to_string(chords.size()) + " lines but the record lasts " +
                      std::to_string(record.length()) + " s");
  const bool truth = c.use_ground_truth_expressive || c.regressor.empty();
  const auto bytes = render_chords(chords, expressive_for(c, record, chords.size(), truth));
  midi::write_file(c.out, bytes);
  out << "wrote " << c.out << " (" << chords.size() << " s)\n";
  return 0;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Video-conditioned chord generation and MIDI rendering"};
  app.require_subcommand(1);
  std::string config_path;
  std::map<std::string, std::string> flags;
  std::map<std::string, std::string> raw;
  bool gt = false;

  using Command = int (*)(const RunConfig&, std::ostream&);
  const std::pair<const char*, Command> commands[] = {
      {"extract", cmd_extract},   {"synth", cmd_synth},       {"train", cmd_train},
      {"train-regressor", cmd_train_regressor},               {"generate", cmd_generate},
      {"evaluate", cmd_evaluate}, {"render", cmd_render},
  };
  const char* descriptions[] = {
      "compute feature records from raw per-second inputs", "write a synthetic dataset",
      "train the chord transformer",                        "train the density/loudness regressor",
      "generate chords for a feature record and render MIDI", "score a checkpoint on the test split",
      "render a record's (or a chord file's) chords to MIDI",
  };
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    auto* sub = app.add_subcommand(commands[i].first, descriptions[i]);
    sub->add_option("--config", config_path, "JSON config file");
    for (const auto& key : config_keys()) {
      if (key == "use_ground_truth_expressive") continue;
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      sub->add_option(flag, raw[key]);
    }
    sub->add_flag("--use-ground-truth-expressive", gt, "use the record's density and loudness");
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      for (const auto& key : config_keys()) {
        if (key == "use_ground_truth_expressive") continue;
        std::string flag = "--" + key;
        std::replace(flag.begin(), flag.end(), '_', '-');
        if (subs[i]->get_option(flag)->count() > 0) flags[key] = raw[key];
      }
      if (gt) flags["use_ground_truth_expressive"] = "true";
      const auto env = process_environment();
      std::optional<fs::path> cfg;
      if (!config_path.empty()) {
        cfg = config_path;
      } else if (auto it = env.find("V2M_CONFIG"); it != env.end()) {
        cfg = it->second;
      }
      const auto config = resolve_config(flags, env, cfg);
      return commands[i].second(config, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace v2m::cli
