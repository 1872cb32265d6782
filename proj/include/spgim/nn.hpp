#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spgim/ops.hpp"
#include "spgim/rng.hpp"

namespace spgim {

/// Named, insertion-ordered set of trainable tensors. Names are dotted paths
/// ("backbone.stage2.block0.conv1.weight"); the first path component is the
/// submodule used for per-module parameter counts.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Var get(const std::string& name) const;
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<Var> vars() const;

  std::size_t scalar_count() const;
  void zero_grad();
  /// Overwrites the value of every parameter whose name appears in `other`
  /// (with `prefix` prepended) and has the same shape. Returns the number copied.
  std::size_t load_matching(const std::vector<std::pair<std::string, Tensor>>& other, const std::string& prefix = "");

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

int default_groups(int channels);

struct Conv2d {
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, int in, int out, int kh, int kw, ops::ConvSpec spec, Rng& rng,
         bool bias = true);
  Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias, spec); }

  Var weight;
  Var bias;
  ops::ConvSpec spec;
};

/// "same" padding spec for a kh x kw kernel at the given dilation.
ops::ConvSpec same_padding(int kh, int kw, int dil_h = 1, int dil_w = 1, int stride = 1);

struct GroupNorm {
  GroupNorm() = default;
  GroupNorm(ParamStore& store, const std::string& name, int channels, bool zero_gamma = false);
  Var operator()(const Var& x) const { return ops::group_norm(x, gamma, beta, groups); }

  Var gamma;
  Var beta;
  int groups = 1;
};

/// conv -> group norm -> optional relu
struct ConvNormAct {
  ConvNormAct() = default;
  ConvNormAct(ParamStore& store, const std::string& name, int in, int out, int kh, int kw, ops::ConvSpec spec,
              Rng& rng, bool relu = true, bool zero_gamma = false);
  Var operator()(const Var& x) const;

  Conv2d conv;
  GroupNorm norm;
  bool relu = true;
};

struct Linear {
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng, bool bias = true);
  Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }

  Var weight;
  Var bias;
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int width);
  Var operator()(const Var& x) const { return ops::layer_norm_rows(x, gamma, beta); }

  Var gamma;
  Var beta;
};

}  // namespace spgim
