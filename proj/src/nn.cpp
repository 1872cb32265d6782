#include "spgim/nn.hpp"

#include <algorithm>
#include <cmath>

namespace spgim {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw Error("duplicate parameter name: " + name);
  Var v(std::move(init), true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, v);
  return v;
}

Var ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::vector<Var> ParamStore::vars() const {
  std::vector<Var> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.value().size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::size_t ParamStore::load_matching(const std::vector<std::pair<std::string, Tensor>>& other,
                                      const std::string& prefix) {
  std::size_t copied = 0;
  for (const auto& [name, t] : other) {
    auto it = index_.find(prefix + name);
    if (it == index_.end()) continue;
    Var v = entries_[it->second].second;
    if (v.shape() != t.shape()) continue;
    v.mutable_value() = t;
    ++copied;
  }
  return copied;
}

int default_groups(int channels) {
  int g = std::min(32, std::max(1, channels / 2));
  while (channels % g != 0) --g;
  return g;
}

ops::ConvSpec same_padding(int kh, int kw, int dil_h, int dil_w, int stride) {
  ops::ConvSpec s;
  s.stride = stride;
  s.dil_h = dil_h;
  s.dil_w = dil_w;
  s.pad_h = dil_h * (kh - 1) / 2;
  s.pad_w = dil_w * (kw - 1) / 2;
  return s;
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int kh, int kw, ops::ConvSpec s,
               Rng& rng, bool with_bias)
    : spec(s) {
  Tensor w({out, in, kh, kw});
  const double stddev = std::sqrt(2.0 / (in * kh * kw));
  for (double& v : w.values()) v = rng.normal(0.0, stddev);
  weight = store.add(name + ".weight", std::move(w));
  if (with_bias) bias = store.add(name + ".bias", Tensor({out}));
}

GroupNorm::GroupNorm(ParamStore& store, const std::string& name, int channels, bool zero_gamma)
    : groups(default_groups(channels)) {
  gamma = store.add(name + ".gamma", Tensor({channels}, zero_gamma ? 0.0 : 1.0));
  beta = store.add(name + ".beta", Tensor({channels}));
}

ConvNormAct::ConvNormAct(ParamStore& store, const std::string& name, int in, int out, int kh, int kw,
                         ops::ConvSpec spec, Rng& rng, bool with_relu, bool zero_gamma)
    : conv(store, name + ".conv", in, out, kh, kw, spec, rng, false),
      norm(store, name + ".gn", out, zero_gamma),
      relu(with_relu) {}

Var ConvNormAct::operator()(const Var& x) const {
  Var y = norm(conv(x));
  return relu ? ops::relu(y) : y;
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool with_bias) {
  Tensor w({out, in});
  const double limit = std::sqrt(6.0 / (in + out));
  for (double& v : w.values()) v = rng.uniform(-limit, limit);
  weight = store.add(name + ".weight", std::move(w));
  if (with_bias) bias = store.add(name + ".bias", Tensor({out}));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int width) {
  gamma = store.add(name + ".gamma", Tensor({width}, 1.0));
  beta = store.add(name + ".beta", Tensor({width}));
}

}  // namespace spgim
