#pragma once

#include <vector>

#include "spgim/autograd.hpp"

namespace spgim {

/// Parameters updated at a common learning rate.
struct ParamGroup {
  std::vector<Var> params;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// One update; `lrs` holds one learning rate per group.
  virtual void step(const std::vector<double>& lrs) = 0;
  void step(double lr) { step(std::vector<double>(groups_.size(), lr)); }
  void zero_grad();
  const std::vector<ParamGroup>& groups() const { return groups_; }

 protected:
  explicit Optimizer(std::vector<ParamGroup> groups) : groups_(std::move(groups)) {}
  std::vector<ParamGroup> groups_;
};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<ParamGroup> groups, double momentum, double weight_decay);
  using Optimizer::step;
  void step(const std::vector<double>& lrs) override;

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<Tensor>> velocity_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.0);
  using Optimizer::step;
  void step(const std::vector<double>& lrs) override;

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long step_count_ = 0;
  std::vector<std::vector<Tensor>> m_, v_;
};

/// Linear warmup from max_lr/warmup to max_lr, then cosine decay to zero at
/// total_steps.
double warmup_cosine_lr(long step, long warmup_steps, long total_steps, double max_lr);

}  // namespace spgim
