#include "v2m/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "v2m/error.hpp"

namespace v2m::ckpt {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'V', '2', 'M', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put_le(std::ostream& out, T v) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::istream& in) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw SchemaError("checkpoint truncated");
    v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

void write_tensor(std::ostream& out, const nn::Matrix& m) {
  for (double d : m.storage()) put_le(out, std::bit_cast<std::uint64_t>(d));
}

}  // namespace

void save(const std::filesystem::path& path, const std::string& kind, const json& config, const json& meta,
          const nn::ParamStore& tensors, const nn::ParamStore* extra) {
  json header;
  header["kind"] = kind;
  header["config"] = config;
  header["meta"] = meta.is_null() ? json::object() : meta;
  json dir = json::array();
  auto list = [&dir](const nn::ParamStore& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
      dir.push_back({{"name", s[i].name},
                     {"rows", s[i].value.rows()},
                     {"cols", s[i].value.cols()},
                     {"trainable", s[i].trainable}});
  };
  list(tensors);
  if (extra) list(*extra);
  header["tensors"] = std::move(dir);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kFormatVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) write_tensor(out, tensors[i].value);
  if (extra)
    for (std::size_t i = 0; i < extra->size(); ++i) write_tensor(out, (*extra)[i].value);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (magic != kMagic) throw SchemaError(path.string() + ": not a checkpoint file");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kFormatVersion)
    throw SchemaError(path.string() + ": unsupported format version " + std::to_string(version));
  const auto len = get_le<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) throw SchemaError(path.string() + ": truncated header");
  Checkpoint ck;
  json header;
  try {
    header = json::parse(text);
    ck.kind = header.at("kind").get<std::string>();
    ck.config = header.at("config");
    ck.meta = header.at("meta");
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      nn::Matrix m(rows, cols);
      for (double& d : m.storage()) d = std::bit_cast<double>(get_le<std::uint64_t>(in));
      ck.tensors.add(t.at("name").get<std::string>(), std::move(m), t.at("trainable").get<bool>());
    }
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": bad checkpoint header: " + e.what());
  }
  return ck;
}

json to_json(const amt::ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_heads", c.n_heads},   {"n_layers_enc", c.n_layers_enc},
          {"n_layers_dec", c.n_layers_dec}, {"d_ff", c.d_ff},     {"d_sem", c.d_sem},
          {"vocab_size", c.vocab_size}, {"max_len", c.max_len},   {"max_rel_dist", c.max_rel_dist},
          {"dropout", c.dropout},       {"relative", c.relative}};
}

amt::ModelConfig model_config_from_json(const json& j) {
  amt::ModelConfig c;
  try {
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_layers_enc = j.at("n_layers_enc").get<int>();
    c.n_layers_dec = j.at("n_layers_dec").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.d_sem = j.at("d_sem").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.max_rel_dist = j.at("max_rel_dist").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.relative = j.at("relative").get<bool>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

nn::ParamStore take_prefixed(nn::ParamStore& from, const std::string& prefix) {
  nn::ParamStore kept, taken;
  for (std::size_t i = 0; i < from.size(); ++i) {
    auto& prm = from[i];
    if (prm.name.rfind(prefix, 0) == 0)
      taken.add(prm.name.substr(prefix.size()), std::move(prm.value), prm.trainable);
    else
      kept.add(prm.name, std::move(prm.value), prm.trainable);
  }
  from = std::move(kept);
  return taken;
}

void save_model(const std::filesystem::path& path, const amt::AmtModel& model, const json& meta,
                const nn::ParamStore* optimizer_state) {
  nn::ParamStore prefixed;
  if (optimizer_state)
    for (std::size_t i = 0; i < optimizer_state->size(); ++i)
      prefixed.add("opt/" + (*optimizer_state)[i].name, (*optimizer_state)[i].value, false);
  save(path, "amt", to_json(model.config()), meta, model.params(), optimizer_state ? &prefixed : nullptr);
}

LoadedModel load_model(const std::filesystem::path& path) {
  auto ck = load(path);
  if (ck.kind != "amt") throw SchemaError(path.string() + ": checkpoint kind is '" + ck.kind + "', expected 'amt'");
  auto opt = take_prefixed(ck.tensors, "opt/");
  const auto config = model_config_from_json(ck.config);
  return LoadedModel{amt::AmtModel(config, std::move(ck.tensors)), ck.meta, std::move(opt)};
}

}  // namespace v2m::ckpt
