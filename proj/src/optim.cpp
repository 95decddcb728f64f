#include "relprobe/optim.hpp"

#include <fnmatch.h>

#include <cmath>

#include "relprobe/error.hpp"

namespace relprobe {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adagrad") return OptimizerKind::Adagrad;
  if (name == "adadelta") return OptimizerKind::Adadelta;
  if (name == "adam") return OptimizerKind::Adam;
  throw Error("unknown optimizer: " + std::string(name));
}

std::string_view optimizer_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::Adagrad: return "adagrad";
    case OptimizerKind::Adadelta: return "adadelta";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

bool glob_match(std::string_view pattern, std::string_view name) {
  return fnmatch(std::string(pattern).c_str(), std::string(name).c_str(), 0) == 0;
}

template <typename Real>
double Optimizer<Real>::l2_for(const std::string& name) const {
  if (name.ends_with("bias")) return 0.0;
  double lambda = 0.0;
  for (const auto& g : spec_.l2) {
    if (glob_match(g.pattern, name)) lambda += g.lambda;
  }
  return lambda;
}

template <typename Real>
void Optimizer<Real>::step(ad::ParamStore<Real>& params, double lr) {
  ++t_;
  for (auto& p : params) {
    if (!p.trainable) continue;
    const double lambda = l2_for(p.name);
    State& st = state_[p.name];
    const size_t n = p.size();
    if (st.a.size() != n) {
      st.a.assign(n, 0.0);
      st.b.assign(n, 0.0);
    }
    for (size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(p.grad[i]) + lambda * static_cast<double>(p.data[i]);
      double delta = 0.0;
      switch (spec_.kind) {
        case OptimizerKind::Sgd:
          delta = -lr * g;
          break;
        case OptimizerKind::Adagrad:
          st.a[i] += g * g;
          delta = -lr * g / std::sqrt(st.a[i] + spec_.eps);
          break;
        case OptimizerKind::Adadelta: {
          st.a[i] = spec_.rho * st.a[i] + (1 - spec_.rho) * g * g;
          const double dx = -std::sqrt(st.b[i] + spec_.eps) / std::sqrt(st.a[i] + spec_.eps) * g;
          st.b[i] = spec_.rho * st.b[i] + (1 - spec_.rho) * dx * dx;
          delta = lr * dx;
          break;
        }
        case OptimizerKind::Adam: {
          st.a[i] = spec_.beta1 * st.a[i] + (1 - spec_.beta1) * g;
          st.b[i] = spec_.beta2 * st.b[i] + (1 - spec_.beta2) * g * g;
          const double mhat = st.a[i] / (1 - std::pow(spec_.beta1, static_cast<double>(t_)));
          const double vhat = st.b[i] / (1 - std::pow(spec_.beta2, static_cast<double>(t_)));
          delta = -lr * mhat / (std::sqrt(vhat) + spec_.eps);
          break;
        }
      }
      p.data[i] = static_cast<Real>(static_cast<double>(p.data[i]) + delta);
    }
  }
}

SchedulePolicy parse_schedule(std::string_view name) {
  if (name == "constant" || name == "none") return SchedulePolicy::Constant;
  if (name == "plateau") return SchedulePolicy::Plateau;
  if (name == "epoch_decay" || name == "epoch-decay") return SchedulePolicy::EpochDecay;
  throw Error("unknown schedule: " + std::string(name));
}

std::string_view schedule_name(SchedulePolicy policy) {
  switch (policy) {
    case SchedulePolicy::Constant: return "constant";
    case SchedulePolicy::Plateau: return "plateau";
    case SchedulePolicy::EpochDecay: return "epoch_decay";
  }
  return "?";
}

double LrScheduler::after_epoch(int epoch, double val_f1) {
  switch (spec_.policy) {
    case SchedulePolicy::Constant:
      break;
    case SchedulePolicy::Plateau:
      if (!have_best_ || val_f1 > best_ + spec_.min_delta) {
        have_best_ = true;
        best_ = val_f1;
        stale_ = 0;
      } else if (++stale_ >= spec_.patience) {
        lr_ *= spec_.factor;
        stale_ = 0;
      }
      break;
    case SchedulePolicy::EpochDecay:
      // the rate used in epoch e is lr0 * factor^(e - start + 1) once e >= start
      if (epoch + 1 >= spec_.start_epoch) lr_ *= spec_.factor;
      break;
  }
  return lr_;
}

std::vector<double> schedule_lr(const ScheduleSpec& spec, double initial_lr, const std::vector<double>& val_f1) {
  LrScheduler sched(spec, initial_lr);
  std::vector<double> out;
  out.reserve(val_f1.size());
  for (size_t i = 0; i < val_f1.size(); ++i) out.push_back(sched.after_epoch(static_cast<int>(i) + 1, val_f1[i]));
  return out;
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace relprobe
