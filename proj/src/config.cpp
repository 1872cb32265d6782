#include "spgim/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "spgim/tensor.hpp"

namespace spgim {

std::string to_string(Branch b) {
  switch (b) {
    case Branch::kSpd: return "spd";
    case Branch::kSpgm: return "spgm";
    case Branch::kCaption: return "caption";
  }
  return "spd";
}

std::string to_string(OptimizerKind o) { return o == OptimizerKind::kAdam ? "adam" : "sgd"; }

Branch parse_branch(const std::string& s) {
  if (s == "spd") return Branch::kSpd;
  if (s == "spgm") return Branch::kSpgm;
  if (s == "caption") return Branch::kCaption;
  throw Error("unknown branch '" + s + "' (expected spd, spgm or caption)");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw Error("unknown optimizer '" + s + "' (expected adam or sgd)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Drops a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long d = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::vector<std::string> array_items(const std::string& key, const std::string& v) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw Error("config: '" + key + "' expects an [array]");
  std::vector<std::string> items;
  std::stringstream ss(v.substr(1, v.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <class T>
std::string fmt_array(const std::vector<T>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_floating_point_v<T>)
      s += fmt(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s + "]";
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

}  // namespace

KeyValueDoc KeyValueDoc::parse(const std::string& text) {
  KeyValueDoc doc;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config line " + std::to_string(number) + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw Error("config line " + std::to_string(number) + ": empty key or value");
    if (!doc.values_.emplace(key, value).second)
      throw Error("config line " + std::to_string(number) + ": duplicate key '" + key + "'");
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string KeyValueDoc::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error("config: missing key '" + key + "'");
  const std::string& v = it->second;
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

double KeyValueDoc::get_double(const std::string& key) const { return to_double(key, get_string(key)); }
long KeyValueDoc::get_long(const std::string& key) const { return to_long(key, get_string(key)); }

bool KeyValueDoc::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw Error("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<double> KeyValueDoc::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : array_items(key, get_string(key))) out.push_back(to_double(key, item));
  return out;
}

std::vector<long> KeyValueDoc::get_longs(const std::string& key) const {
  std::vector<long> out;
  for (const auto& item : array_items(key, get_string(key))) out.push_back(to_long(key, item));
  return out;
}

std::vector<std::string> KeyValueDoc::keys() const {
  std::vector<std::string> k;
  for (const auto& [key, v] : values_) k.push_back(key);
  return k;
}

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0)) throw Error("config: initial_lr must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 0) throw Error("config: milestones must be non-negative");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw Error("config: milestones must be strictly increasing");
  }
  if (!(decay_factor > 0.0 && decay_factor < 1.0)) throw Error("config: decay_factor must be in (0, 1)");
  if (schedule_unit != "epoch" && schedule_unit != "step") throw Error("config: schedule_unit is epoch or step");
  if (total < 1) throw Error("config: total must be positive");
  if (batch_size < 1) throw Error("config: batch_size must be positive");
  if (input_size < 32 || input_size % 32 != 0) throw Error("config: input_size must be a positive multiple of 32");
  if (branch == Branch::kSpgm && loss_weights.size() != 3) throw Error("config: spgm needs three loss_weights");
  for (double w : loss_weights)
    if (!(w >= 0.0)) throw Error("config: loss weights must be non-negative");
  if (!(width_multiplier > 0.0)) throw Error("config: width_multiplier must be positive");
  if (backbone_blocks.size() != 4) throw Error("config: backbone_blocks needs four stage depths");
  for (long b : backbone_blocks)
    if (b < 1) throw Error("config: backbone_blocks entries must be >= 1");
  if (variant != "full" && variant != "no_tst" && variant != "no_aft")
    throw Error("config: variant is full, no_tst or no_aft");
  if (branch == Branch::kCaption && warmup < 1) throw Error("config: caption warmup must be >= 1 step");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "branch = " << quoted(to_string(branch)) << "\n";
  os << "profile = " << quoted(profile) << "\n";
  os << "optimizer = " << quoted(to_string(optimizer)) << "\n";
  os << "initial_lr = " << fmt(initial_lr) << "\n";
  os << "milestones = " << fmt_array(milestones) << "\n";
  os << "decay_factor = " << fmt(decay_factor) << "\n";
  os << "schedule_unit = " << quoted(schedule_unit) << "\n";
  os << "total = " << total << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "input_size = " << input_size << "\n";
  os << "loss_weights = " << fmt_array(loss_weights) << "\n";
  os << "seed = " << seed << "\n";
  os << "momentum = " << fmt(momentum) << "\n";
  os << "weight_decay = " << fmt(weight_decay) << "\n";
  os << "beta1 = " << fmt(beta1) << "\n";
  os << "beta2 = " << fmt(beta2) << "\n";
  os << "decoder_lr = " << fmt(decoder_lr) << "\n";
  os << "warmup = " << warmup << "\n";
  os << "width_multiplier = " << fmt(width_multiplier) << "\n";
  os << "backbone_blocks = " << fmt_array(backbone_blocks) << "\n";
  os << "variant = " << quoted(variant) << "\n";
  return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  const auto doc = KeyValueDoc::parse(text);
  const Branch branch = doc.has("branch") ? parse_branch(doc.get_string("branch")) : Branch::kSpd;
  TrainConfig c = preset(branch, doc.has("profile") ? doc.get_string("profile") : "composition1k");
  static const std::vector<std::string> known = {
      "branch",   "profile", "optimizer",  "initial_lr", "milestones",       "decay_factor",    "schedule_unit",
      "total",    "batch_size", "input_size", "loss_weights", "seed",        "momentum",        "weight_decay",
      "beta1",    "beta2",   "decoder_lr", "warmup",     "width_multiplier", "backbone_blocks", "variant"};
  for (const auto& k : doc.keys())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw Error("config: unknown key '" + k + "'");
  if (doc.has("optimizer")) c.optimizer = parse_optimizer(doc.get_string("optimizer"));
  if (doc.has("initial_lr")) c.initial_lr = doc.get_double("initial_lr");
  if (doc.has("milestones")) c.milestones = doc.get_longs("milestones");
  if (doc.has("decay_factor")) c.decay_factor = doc.get_double("decay_factor");
  if (doc.has("schedule_unit")) c.schedule_unit = doc.get_string("schedule_unit");
  if (doc.has("total")) c.total = doc.get_long("total");
  if (doc.has("batch_size")) c.batch_size = static_cast<int>(doc.get_long("batch_size"));
  if (doc.has("input_size")) c.input_size = static_cast<int>(doc.get_long("input_size"));
  if (doc.has("loss_weights")) c.loss_weights = doc.get_doubles("loss_weights");
  if (doc.has("seed")) {
    const long s = doc.get_long("seed");
    if (s < 0) throw Error("config: seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  if (doc.has("momentum")) c.momentum = doc.get_double("momentum");
  if (doc.has("weight_decay")) c.weight_decay = doc.get_double("weight_decay");
  if (doc.has("beta1")) c.beta1 = doc.get_double("beta1");
  if (doc.has("beta2")) c.beta2 = doc.get_double("beta2");
  if (doc.has("decoder_lr")) c.decoder_lr = doc.get_double("decoder_lr");
  if (doc.has("warmup")) c.warmup = doc.get_long("warmup");
  if (doc.has("width_multiplier")) c.width_multiplier = doc.get_double("width_multiplier");
  if (doc.has("backbone_blocks")) c.backbone_blocks = doc.get_longs("backbone_blocks");
  if (doc.has("variant")) c.variant = doc.get_string("variant");
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::vector<std::string> TrainConfig::profile_names() {
  return {"composition1k", "distinction646", "human2k", "multiobject1k", "desk"};
}

TrainConfig TrainConfig::preset(Branch branch, const std::string& profile) {
  static const std::map<std::string, std::vector<long>> spd_milestones = {
      {"composition1k", {20, 40}}, {"distinction646", {30, 60}}, {"human2k", {60, 80}}, {"multiobject1k", {40, 60, 80}}};
  static const std::map<std::string, std::vector<long>> spgm_milestones = {{"composition1k", {20, 30, 40}},
                                                                           {"distinction646", {40, 60, 80}},
                                                                           {"human2k", {80, 100, 120}},
                                                                           {"multiobject1k", {60, 80, 100}}};
  const auto names = profile_names();
  if (std::find(names.begin(), names.end(), profile) == names.end())
    throw Error("unknown profile '" + profile + "'");

  TrainConfig c;
  c.branch = branch;
  c.profile = profile;
  switch (branch) {
    case Branch::kSpd:
      c.optimizer = OptimizerKind::kAdam;
      c.initial_lr = 1e-2;
      c.batch_size = 16;
      c.input_size = 512;
      c.loss_weights = {};
      break;
    case Branch::kSpgm:
      c.optimizer = OptimizerKind::kAdam;
      c.initial_lr = 5e-3;
      c.batch_size = 4;
      c.input_size = 512;
      c.loss_weights = {1.0, 2.0, 3.0};
      break;
    case Branch::kCaption:
      c.optimizer = OptimizerKind::kSgd;
      c.initial_lr = 0.2;
      c.decoder_lr = 1e-3;
      c.momentum = 0.9;
      c.weight_decay = 1e-4;
      c.batch_size = 16;
      c.input_size = 224;
      c.schedule_unit = "step";
      c.milestones = {};
      c.warmup = 1000;
      c.total = 100000;
      break;
  }
  if (branch != Branch::kCaption && profile != "desk") {
    c.milestones = (branch == Branch::kSpd ? spd_milestones : spgm_milestones).at(profile);
    c.total = c.milestones.back() + 10;
  }
  if (profile == "desk") {
    c.width_multiplier = 0.25;
    c.input_size = 64;
    c.schedule_unit = "step";
    c.batch_size = 4;
    switch (branch) {
      case Branch::kSpd:
        c.initial_lr = 2e-3;
        c.milestones = {200};
        c.total = 300;
        break;
      case Branch::kSpgm:
        c.initial_lr = 2e-3;
        c.milestones = {200};
        c.total = 300;
        break;
      case Branch::kCaption:
        c.initial_lr = 0.05;
        c.decoder_lr = 1e-3;
        c.warmup = 10;
        c.total = 200;
        break;
    }
  }
  c.validate();
  return c;
}

double lr_at(long step_or_epoch, const TrainConfig& cfg) {
  if (step_or_epoch < 0) throw Error("lr_at: negative " + cfg.schedule_unit + " " + std::to_string(step_or_epoch));
  double lr = cfg.initial_lr;
  for (long m : cfg.milestones)
    if (step_or_epoch >= m) lr *= cfg.decay_factor;
  return lr;
}

std::filesystem::path cache_dir() {
  if (const char* env = std::getenv("SPGIM_CACHE_DIR"); env && *env) return env;
  return std::filesystem::temp_directory_path() / "spgim-cache";
}

}  // namespace spgim
