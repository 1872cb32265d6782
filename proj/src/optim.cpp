#include "spgim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace spgim {

namespace {

std::vector<std::vector<Tensor>> zero_state(const std::vector<ParamGroup>& groups) {
  std::vector<std::vector<Tensor>> state;
  for (const auto& g : groups) {
    std::vector<Tensor> s;
    for (const Var& p : g.params) s.emplace_back(p.shape());
    state.push_back(std::move(s));
  }
  return state;
}

void check_lrs(const std::vector<double>& lrs, std::size_t groups) {
  if (lrs.size() != groups) throw Error("optimizer: expected one learning rate per parameter group");
}

}  // namespace

void Optimizer::zero_grad() {
  for (auto& g : groups_)
    for (Var& p : g.params) p.zero_grad();
}

Sgd::Sgd(std::vector<ParamGroup> groups, double momentum, double weight_decay)
    : Optimizer(std::move(groups)), momentum_(momentum), weight_decay_(weight_decay), velocity_(zero_state(groups_)) {}

void Sgd::step(const std::vector<double>& lrs) {
  check_lrs(lrs, groups_.size());
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Var& p = groups_[gi].params[pi];
      if (p.grad().empty()) continue;
      Tensor& w = p.mutable_value();
      Tensor& vel = velocity_[gi][pi];
      const Tensor& g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = g[i] + weight_decay_ * w[i];
        vel[i] = momentum_ * vel[i] + d;
        w[i] -= lrs[gi] * vel[i];
      }
    }
  }
}

Adam::Adam(std::vector<ParamGroup> groups, double beta1, double beta2, double eps, double weight_decay)
    : Optimizer(std::move(groups)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay),
      m_(zero_state(groups_)),
      v_(zero_state(groups_)) {}

void Adam::step(const std::vector<double>& lrs) {
  check_lrs(lrs, groups_.size());
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Var& p = groups_[gi].params[pi];
      if (p.grad().empty()) continue;
      Tensor& w = p.mutable_value();
      Tensor& m = m_[gi][pi];
      Tensor& v = v_[gi][pi];
      const Tensor& g = p.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = g[i] + weight_decay_ * w[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * d;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * d * d;
        w[i] -= lrs[gi] * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }
}

double warmup_cosine_lr(long step, long warmup_steps, long total_steps, double max_lr) {
  if (step < 0) throw Error("learning-rate schedule: negative step");
  if (warmup_steps <= 0) throw Error("learning-rate schedule: warmup must be positive");
  if (step < warmup_steps) return max_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps + 1);
  if (step >= total_steps) return 0.0;
  const double span = static_cast<double>(std::max<long>(1, total_steps - warmup_steps));
  const double t = static_cast<double>(step - warmup_steps) / span;
  return 0.5 * max_lr * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace spgim
