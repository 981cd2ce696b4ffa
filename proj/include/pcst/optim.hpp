#pragma once

#include "pcst/nn.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace pcst::nn {

/// Adam with bias correction. Moments are kept per parameter name so the
/// optimiser state survives a reload of the store.
template <typename T>
class Adam {
 public:
  explicit Adam(ParameterStore<T>& store, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : store_(store), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (const auto& [name, p] : store_.by_name()) {
      if (p->grad.size() == 0) continue;
      auto& st = state_[name];
      if (st.m.size() == 0) {
        st.m = Matrix<T>::Zero(p->value.rows(), p->value.cols());
        st.v = Matrix<T>::Zero(p->value.rows(), p->value.cols());
      }
      st.m = T(beta1_) * st.m + T(1 - beta1_) * p->grad;
      st.v = T(beta2_) * st.v + T(1 - beta2_) * p->grad.cwiseProduct(p->grad);
      const T a = T(lr_ / c1);
      p->value.array() -= a * st.m.array() / ((st.v.array() / T(c2)).sqrt() + T(eps_));
    }
  }

 private:
  struct Moments {
    Matrix<T> m, v;
  };
  ParameterStore<T>& store_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Rescales all gradients so their global L2 norm is at most max_norm;
/// returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm) {
  double sq = 0;
  for (const auto& [name, p] : store.by_name()) sq += double(p->grad.squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = T(max_norm / norm);
    for (const auto& [name, p] : store.by_name()) p->grad *= s;
  }
  return norm;
}

/// Halves the learning rate when the smoothed loss stops improving, at
/// most `max_reductions` times.
class PlateauSchedule {
 public:
  PlateauSchedule(int patience, int max_reductions = 2, double factor = 0.5, double smoothing = 0.9)
      : patience_(patience), max_reductions_(max_reductions), factor_(factor), smoothing_(smoothing) {}

  /// Feeds one loss value; returns the multiplier to apply (1 or factor).
  double observe(double loss) {
    ema_ = seen_ ? smoothing_ * ema_ + (1 - smoothing_) * loss : loss;
    seen_ = true;
    if (ema_ < best_ - 1e-6 * std::abs(best_)) {
      best_ = ema_;
      since_ = 0;
      return 1.0;
    }
    if (++since_ >= patience_ && reductions_ < max_reductions_) {
      ++reductions_;
      since_ = 0;
      best_ = ema_;
      return factor_;
    }
    return 1.0;
  }

  int reductions() const { return reductions_; }

 private:
  int patience_, max_reductions_;
  double factor_, smoothing_;
  double ema_ = 0, best_ = std::numeric_limits<double>::infinity();
  bool seen_ = false;
  int since_ = 0, reductions_ = 0;
};

}  // namespace pcst::nn
