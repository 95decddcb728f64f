#pragma once

// Parameter update rules, l2 groups and learning-rate schedules.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "relprobe/autodiff.hpp"

namespace relprobe {

enum class OptimizerKind { Sgd, Adagrad, Adadelta, Adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind kind);

// Adds lambda * p to the gradient of every parameter whose name matches the
// shell-style glob `pattern`. Bias parameters (names ending in "bias") are
// never regularized.
struct L2Group {
  std::string pattern;
  double lambda = 0.0;
  friend bool operator==(const L2Group&, const L2Group&) = default;
};

bool glob_match(std::string_view pattern, std::string_view name);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 0.1;
  std::vector<L2Group> l2;
  double eps = 1e-8;
  double rho = 0.95;  // adadelta
  double beta1 = 0.9;
  double beta2 = 0.999;
  friend bool operator==(const OptimizerSpec&, const OptimizerSpec&) = default;
};

template <typename Real>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec) : spec_(std::move(spec)) {}

  // One update of every trainable parameter from its accumulated gradient.
  // Gradients are left in place; zero them before the next accumulation.
  void step(ad::ParamStore<Real>& params, double lr);

  const OptimizerSpec& spec() const { return spec_; }
  long steps() const { return t_; }

 private:
  struct State {
    std::vector<double> a;  // adagrad sum, adadelta E[g^2], adam m
    std::vector<double> b;  // adadelta E[dx^2], adam v
  };

  double l2_for(const std::string& name) const;

  OptimizerSpec spec_;
  std::map<std::string, State> state_;
  long t_ = 0;
};

enum class SchedulePolicy { Constant, Plateau, EpochDecay };

struct ScheduleSpec {
  SchedulePolicy policy = SchedulePolicy::Constant;
  double factor = 0.9;
  int patience = 2;         // plateau
  double min_delta = 1e-4;  // plateau, absolute F1
  int start_epoch = 15;     // epoch_decay, 1-based
  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

// "constant", "plateau" or "epoch_decay".
SchedulePolicy parse_schedule(std::string_view name);
std::string_view schedule_name(SchedulePolicy policy);

// Stateful scheduler fed once per finished epoch.
class LrScheduler {
 public:
  LrScheduler(ScheduleSpec spec, double initial_lr) : spec_(spec), lr_(initial_lr) {}

  double lr() const { return lr_; }
  // `epoch` is 1-based; returns the rate for the next epoch.
  double after_epoch(int epoch, double val_f1);

 private:
  ScheduleSpec spec_;
  double lr_;
  bool have_best_ = false;
  double best_ = 0.0;
  int stale_ = 0;
};

// Learning rate in effect after each epoch of `val_f1` history.
std::vector<double> schedule_lr(const ScheduleSpec& spec, double initial_lr, const std::vector<double>& val_f1);

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace relprobe
