#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <variant>

#include <json.hpp>

#include "v2m/cli.hpp"
#include "v2m/error.hpp"

extern char** environ;

namespace v2m::cli {

namespace {

using Member = std::variant<std::string RunConfig::*, int RunConfig::*, double RunConfig::*, bool RunConfig::*,
                            std::uint64_t RunConfig::*>;

struct Field {
  const char* name;
  Member member;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"data", &RunConfig::data},
      {"out", &RunConfig::out},
      {"checkpoint", &RunConfig::checkpoint},
      {"regressor", &RunConfig::regressor},
      {"resume", &RunConfig::resume},
      {"chords", &RunConfig::chords},
      {"key", &RunConfig::key},
      {"primer", &RunConfig::primer},
      {"seed", &RunConfig::seed},
      {"epochs", &RunConfig::epochs},
      {"lr", &RunConfig::lr},
      {"lambda", &RunConfig::lambda},
      {"heads", &RunConfig::heads},
      {"layers", &RunConfig::layers},
      {"d_model", &RunConfig::d_model},
      {"d_ff", &RunConfig::d_ff},
      {"dropout", &RunConfig::dropout},
      {"warmup_steps", &RunConfig::warmup_steps},
      {"batch_size", &RunConfig::batch_size},
      {"tmax", &RunConfig::tmax},
      {"use_ground_truth_expressive", &RunConfig::use_ground_truth_expressive},
      {"n", &RunConfig::n},
      {"length", &RunConfig::length},
      {"d_sem", &RunConfig::d_sem},
      {"regressor_kind", &RunConfig::regressor_kind},
      {"regressor_hidden", &RunConfig::regressor_hidden},
      {"regressor_layers", &RunConfig::regressor_layers},
      {"regressor_fc_hidden", &RunConfig::regressor_fc_hidden},
      {"regressor_epochs", &RunConfig::regressor_epochs},
      {"regressor_lr", &RunConfig::regressor_lr},
  };
  return f;
}

// Variables read elsewhere in the library.
constexpr const char* kReservedEnv[] = {"V2M_SIMD", "V2M_KEY_PROFILES", "V2M_CONFIG"};

const Field* find_field(const std::string& name) {
  for (const auto& f : fields())
    if (name == f.name) return &f;
  return nullptr;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty())
    throw ParseError("config '" + key + "': cannot parse '" + text + "' as a number");
  return v;
}

void set_from_string(RunConfig& c, const Field& f, const std::string& text) {
  const std::string key = f.name;
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          c.*member = text;
        } else if constexpr (std::is_same_v<T, bool>) {
          std::string t = text;
          std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return std::tolower(ch); });
          if (t == "1" || t == "true" || t == "yes" || t == "on")
            c.*member = true;
          else if (t == "0" || t == "false" || t == "no" || t == "off")
            c.*member = false;
          else
            throw ParseError("config '" + key + "': expected a boolean, got '" + text + "'");
        } else {
          c.*member = parse_number<T>(key, text);
        }
      },
      f.member);
}

void set_from_json(RunConfig& c, const Field& f, const nlohmann::json& v) {
  const std::string key = f.name;
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          if (!v.is_string()) throw SchemaError("config '" + key + "' must be a string");
          c.*member = v.get<std::string>();
        } else if constexpr (std::is_same_v<T, bool>) {
          if (!v.is_boolean()) throw SchemaError("config '" + key + "' must be a boolean");
          c.*member = v.get<bool>();
        } else if constexpr (std::is_floating_point_v<T>) {
          if (!v.is_number()) throw SchemaError("config '" + key + "' must be a number");
          c.*member = v.get<T>();
        } else {
          if (!v.is_number_integer()) throw SchemaError("config '" + key + "' must be an integer");
          if (std::is_unsigned_v<T> && v.is_number_integer() && v.get<long long>() < 0 && !v.is_number_unsigned())
            throw SchemaError("config '" + key + "' must be non-negative");
          c.*member = v.get<T>();
        }
      },
      f.member);
}

std::string env_name(const std::string& key) {
  std::string s = "V2M_" + key;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::toupper(ch); });
  return s;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.name);
  return out;
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    std::string_view kv(*e);
    const auto eq = kv.find('=');
    if (kv.starts_with("V2M_") && eq != std::string_view::npos)
      out.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return out;
}

RunConfig resolve_config(const std::map<std::string, std::string>& flags, const std::map<std::string, std::string>& env,
                         const std::optional<std::filesystem::path>& config_file) {
  RunConfig c;
  if (config_file) {
    std::ifstream in(*config_file);
    if (!in) throw Error("cannot open config file " + config_file->string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("config file " + config_file->string() + ": " + e.what());
    }
    if (!j.is_object()) throw SchemaError("config file must hold a JSON object");
    for (const auto& [k, v] : j.items()) {
      const auto* f = find_field(k);
      if (!f) throw SchemaError("unknown config key '" + k + "' in " + config_file->string());
      set_from_json(c, *f, v);
    }
  }
  for (const auto& [name, value] : env) {
    if (std::find(std::begin(kReservedEnv), std::end(kReservedEnv), name) != std::end(kReservedEnv)) continue;
    const Field* match = nullptr;
    for (const auto& f : fields())
      if (env_name(f.name) == name) match = &f;
    if (!match) throw SchemaError("unknown environment override '" + name + "'");
    set_from_string(c, *match, value);
  }
  for (const auto& [k, v] : flags) {
    const auto* f = find_field(k);
    if (!f) throw SchemaError("unknown option '" + k + "'");
    set_from_string(c, *f, v);
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw RangeError("lambda must lie in [0, 1]");
  if (epochs < 0) throw RangeError("epochs must be >= 0");
  if (!(lr > 0.0)) throw RangeError("lr must be > 0");
  if (heads <= 0 || layers <= 0 || d_model <= 0 || d_ff <= 0) throw RangeError("model sizes must be > 0");
  if (d_model % heads != 0) throw RangeError("d_model must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw RangeError("dropout must lie in [0, 1)");
  if (warmup_steps <= 0) throw RangeError("warmup_steps must be > 0");
  if (batch_size <= 0) throw RangeError("batch_size must be > 0");
  if (tmax <= 0) throw RangeError("tmax must be > 0");
  if (n < 0) throw RangeError("n must be >= 0");
  if (length <= 0 || d_sem < 0) throw RangeError("length must be > 0 and d_sem >= 0");
  if (regressor_epochs < 0 || !(regressor_lr > 0.0)) throw RangeError("regressor epochs/lr out of range");
  post::parse_regressor_kind(regressor_kind);
  regressor_config(d_sem).validate();
}

amt::ModelConfig RunConfig::model_config(int d_sem_override) const {
  amt::ModelConfig m;
  m.d_model = d_model;
  m.n_heads = heads;
  m.n_layers_enc = layers;
  m.n_layers_dec = layers;
  m.d_ff = d_ff;
  m.d_sem = d_sem_override;
  m.max_len = tmax;
  m.max_rel_dist = tmax;
  m.dropout = dropout;
  m.validate();
  return m;
}

train::OptimizerSpec RunConfig::optimizer_spec() const {
  train::OptimizerSpec s;
  s.base_lr = lr;
  s.warmup_steps = warmup_steps;
  s.validate();
  return s;
}

train::LossWeights RunConfig::loss_weights() const {
  train::LossWeights w;
  w.lambda = lambda;
  w.validate();
  return w;
}

post::RegressorConfig RunConfig::regressor_config(int d_sem_override) const {
  post::RegressorConfig r;
  r.kind = post::parse_regressor_kind(regressor_kind);
  r.hidden = regressor_hidden;
  r.layers = regressor_layers;
  r.fc_hidden = regressor_fc_hidden;
  r.d_sem = d_sem_override;
  return r;
}

}  // namespace v2m::cli
