#include "spgim/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <zlib.h>

namespace spgim {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'G', 'I', 'M', 'C', 'K', 'P'};

template <class T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("corrupt checkpoint: truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t crc(const std::uint8_t* data, std::size_t size) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["kind"] = ckpt.kind;
  header["step"] = ckpt.step;
  header["config"] = ckpt.config_text;
  header["model"] = ckpt.model;
  header["metadata"] = ckpt.metadata;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& [name, t] : ckpt.tensors) list.push_back({{"name", name}, {"shape", t.shape()}});
  header["tensors"] = list;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put(out, Checkpoint::kVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : ckpt.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(double));
  }
  put(out, crc(out.data(), out.size()));
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 + 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw Error("corrupt checkpoint: bad magic");
  std::size_t tail = bytes.size() - 4;
  const auto stored = take<std::uint32_t>(bytes, tail);
  if (stored != crc(bytes.data(), bytes.size() - 4)) throw Error("corrupt checkpoint: checksum mismatch");

  std::size_t pos = 8;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != Checkpoint::kVersion)
    throw Error("checkpoint format version " + std::to_string(version) + " is not supported");
  const auto len = take<std::uint64_t>(bytes, pos);
  if (len > bytes.size() - pos - 4) throw Error("corrupt checkpoint: header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt checkpoint: header: ") + e.what());
  }
  pos += len;

  Checkpoint ckpt;
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.step = header.at("step").get<long>();
    ckpt.config_text = header.at("config").get<std::string>();
    ckpt.model = header.at("model");
    ckpt.metadata = header.at("metadata");
    for (const auto& entry : header.at("tensors")) {
      Shape shape = entry.at("shape").get<Shape>();
      for (int d : shape)
        if (d < 0) throw Error("corrupt checkpoint: negative dimension");
      Tensor t(shape);
      const std::size_t n = t.size() * sizeof(double);
      if (pos + n > bytes.size() - 4) throw Error("corrupt checkpoint: tensor payload truncated");
      std::memcpy(t.data(), bytes.data() + pos, n);
      pos += n;
      ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt checkpoint: header: ") + e.what());
  }
  if (pos != bytes.size() - 4) throw Error("corrupt checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw Error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

NamedTensors snapshot(const ParamStore& store) {
  NamedTensors out;
  for (const auto& [name, v] : store.entries()) out.emplace_back(name, v.value());
  return out;
}

void restore(ParamStore& store, const NamedTensors& tensors) {
  if (tensors.size() != store.entries().size())
    throw Error("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                std::to_string(store.entries().size()));
  for (const auto& [name, t] : tensors) {
    if (!store.contains(name)) throw Error("checkpoint tensor '" + name + "' does not belong to this model");
    Var v = store.get(name);
    if (v.shape() != t.shape())
      throw Error("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                  shape_str(v.shape()));
    v.mutable_value() = t;
  }
}

ParameterCount count_parameters(const NamedTensors& tensors) {
  ParameterCount c;
  for (const auto& [name, t] : tensors) {
    const auto dot = name.find('.');
    c.per_module[name.substr(0, dot)] += t.size();
    c.total += t.size();
  }
  return c;
}

ParameterCount count_parameters(const Checkpoint& ckpt) { return count_parameters(ckpt.tensors); }

std::string millions(std::size_t count) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << static_cast<double>(count) / 1e6;
  return os.str();
}

nlohmann::json to_json(const VisualBackboneConfig& c) {
  return {{"width_multiplier", c.width_multiplier},
          {"blocks", c.blocks},
          {"in_channels", c.in_channels},
          {"output_stride", c.output_stride}};
}

VisualBackboneConfig backbone_from_json(const nlohmann::json& j) {
  VisualBackboneConfig c;
  c.width_multiplier = j.at("width_multiplier").get<double>();
  c.blocks = j.at("blocks").get<std::array<int, 4>>();
  c.in_channels = j.at("in_channels").get<int>();
  c.output_stride = j.at("output_stride").get<int>();
  return c;
}

nlohmann::json to_json(const SpdConfig& c) {
  return {{"backbone", to_json(c.backbone)},
          {"aspp_rates", c.aspp.dilation_rates},
          {"aspp_channels", c.aspp.branch_channels},
          {"aspp_pool", c.aspp.global_pool_branch},
          {"mask_downsample", c.mask_downsample}};
}

SpdConfig spd_config_from_json(const nlohmann::json& j) {
  SpdConfig c;
  c.backbone = backbone_from_json(j.at("backbone"));
  c.aspp.dilation_rates = j.at("aspp_rates").get<std::vector<int>>();
  c.aspp.branch_channels = j.at("aspp_channels").get<int>();
  c.aspp.global_pool_branch = j.at("aspp_pool").get<bool>();
  c.mask_downsample = j.at("mask_downsample").get<int>();
  return c;
}

nlohmann::json to_json(const SpgmConfig& c) {
  return {{"backbone", to_json(c.backbone)},
          {"guidance_channels", c.guidance_channels},
          {"key_divisor", c.key_divisor},
          {"value_divisor", c.value_divisor},
          {"level_strides", c.level_strides},
          {"loss_weights", c.loss_weights},
          {"focal_eps", c.focal_eps},
          {"variant", to_string(c.variant)}};
}

SpgmConfig spgm_config_from_json(const nlohmann::json& j) {
  SpgmConfig c;
  c.backbone = backbone_from_json(j.at("backbone"));
  c.guidance_channels = j.at("guidance_channels").get<std::array<int, 3>>();
  c.key_divisor = j.at("key_divisor").get<int>();
  c.value_divisor = j.at("value_divisor").get<int>();
  c.level_strides = j.at("level_strides").get<std::array<int, 3>>();
  c.loss_weights = j.at("loss_weights").get<std::vector<double>>();
  c.focal_eps = j.at("focal_eps").get<double>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  return c;
}

nlohmann::json to_json(const CaptionerConfig& c, const Tokenizer& tokenizer) {
  return {{"backbone", to_json(c.backbone)},
          {"layers", c.decoder.layers},
          {"heads", c.decoder.heads},
          {"model_width", c.decoder.model_width},
          {"vocab_size", c.decoder.vocab_size},
          {"max_len", c.decoder.max_len},
          {"ffn_multiplier", c.decoder.ffn_multiplier},
          {"shared_decoder", c.shared_decoder},
          {"vocabulary", tokenizer.vocabulary()}};
}

Checkpoint make_checkpoint(const SpdNetwork& net, const std::string& config_text, long step) {
  Checkpoint c;
  c.kind = "spd";
  c.config_text = config_text;
  c.model = to_json(net.config());
  c.step = step;
  c.tensors = snapshot(net.params());
  return c;
}

Checkpoint make_checkpoint(const SpgmNetwork& net, const std::string& config_text, long step) {
  Checkpoint c;
  c.kind = "spgm";
  c.config_text = config_text;
  c.model = to_json(net.config());
  c.step = step;
  c.tensors = snapshot(net.params());
  return c;
}

Checkpoint make_checkpoint(const Captioner& model, const std::string& config_text, long step) {
  Checkpoint c;
  c.kind = "captioner";
  c.config_text = config_text;
  c.model = to_json(model.config(), model.tokenizer());
  c.step = step;
  c.metadata["trained_steps"] = model.trained_steps;
  c.tensors = snapshot(model.params());
  return c;
}

namespace {

void require_kind(const Checkpoint& ckpt, const std::string& kind) {
  if (ckpt.kind != kind) throw Error("expected a " + kind + " checkpoint, got '" + ckpt.kind + "'");
}

template <class F>
auto with_model_errors(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt checkpoint: model description: ") + e.what());
  }
}

}  // namespace

SpdNetwork load_spd(const Checkpoint& ckpt) {
  require_kind(ckpt, "spd");
  SpdNetwork net(with_model_errors([&] { return spd_config_from_json(ckpt.model); }), 0);
  restore(net.params(), ckpt.tensors);
  return net;
}

SpgmNetwork load_spgm(const Checkpoint& ckpt) {
  require_kind(ckpt, "spgm");
  SpgmNetwork net(with_model_errors([&] { return spgm_config_from_json(ckpt.model); }), 0);
  restore(net.params(), ckpt.tensors);
  return net;
}

Captioner load_captioner(const Checkpoint& ckpt) {
  require_kind(ckpt, "captioner");
  auto [cfg, tokenizer] = with_model_errors([&] {
    CaptionerConfig c;
    const auto& m = ckpt.model;
    c.backbone = backbone_from_json(m.at("backbone"));
    c.decoder.layers = m.at("layers").get<int>();
    c.decoder.heads = m.at("heads").get<int>();
    c.decoder.model_width = m.at("model_width").get<int>();
    c.decoder.vocab_size = m.at("vocab_size").get<int>();
    c.decoder.max_len = m.at("max_len").get<int>();
    c.decoder.ffn_multiplier = m.at("ffn_multiplier").get<int>();
    c.shared_decoder = m.at("shared_decoder").get<bool>();
    return std::make_pair(c, Tokenizer::from_vocabulary(m.at("vocabulary").get<std::vector<std::string>>()));
  });
  Captioner model(cfg, tokenizer, 0);
  restore(model.params(), ckpt.tensors);
  if (ckpt.metadata.contains("trained_steps")) model.trained_steps = ckpt.metadata["trained_steps"].get<long>();
  return model;
}

std::vector<std::string> pairing_mismatches(const Checkpoint& spd, const Checkpoint& spgm) {
  require_kind(spd, "spd");
  require_kind(spgm, "spgm");
  std::vector<std::string> diff;
  const auto sb = spd.model.at("backbone");
  const auto gb = spgm.model.at("backbone");
  for (const char* field : {"width_multiplier", "blocks", "output_stride"})
    if (sb.at(field) != gb.at(field)) diff.push_back(std::string("backbone.") + field);
  const auto spd_cfg = spd_config_from_json(spd.model);
  const auto ch = spd_cfg.backbone.stage_channels();
  const auto guid = spgm.model.at("guidance_channels").get<std::array<int, 3>>();
  if (guid != std::array<int, 3>{ch[1], ch[2], ch[3]}) diff.push_back("guidance_channels");
  return diff;
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes.data(), bytes.size());
}

}  // namespace spgim
