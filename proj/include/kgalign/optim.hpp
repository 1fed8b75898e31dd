#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "kgalign/autodiff.hpp"

namespace kgalign {

struct AdamConfig {
  double learning_rate = 1e-4;
  double warmup_ratio = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Linear warmup from 0 over warmup_ratio * total_steps, then constant.
inline double warmup_learning_rate(const AdamConfig& cfg, std::size_t step,
                                   std::size_t total_steps) {
  if (total_steps == 0) throw std::invalid_argument("adam: total_steps must be > 0");
  const double warmup = cfg.warmup_ratio * double(total_steps);
  if (warmup <= 0.0 || double(step) >= warmup) return cfg.learning_rate;
  return cfg.learning_rate * double(step) / warmup;
}

template <class T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value().shape(), T(0));
      v_.emplace_back(p->value().shape(), T(0));
    }
  }

  // Applies one update from the accumulated gradients. Step numbering starts
  // at 0, so the first update under a nonzero warmup has learning rate 0.
  void step(std::size_t total_steps) {
    const double lr = warmup_learning_rate(cfg_, step_, total_steps);
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k]->value();
      const auto& g = params_[k]->grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = T(mi);
        v[i] = T(vi);
        if (lr == 0.0) continue;
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        w[i] = T(double(w[i]) - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::size_t steps_taken() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t step_ = 0;
};

}  // namespace kgalign
