#pragma once

// Adam with decoupled weight decay, global-norm gradient clipping, and a
// piecewise-linear warmup/decay learning-rate schedule.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "msum/model.hpp"
#include "msum/tensor.hpp"

namespace msum {

// Linear ramp 0 -> peak over [0, warmup_steps], then linear decay to 0 at
// total_steps. Continuous, peaks exactly at the warmup boundary.
inline double lr_at_step(long step, long warmup_steps, long total_steps,
                         double peak) {
  if (total_steps <= 0) return 0.0;
  if (warmup_steps > 0 && step <= warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return 0.0;
  return peak * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

// Scales gradients so the global norm is at most max_norm; returns the
// pre-clip norm. max_norm <= 0 disables clipping.
inline double clip_global_norm(const NamedParams& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [n, p] : params) {
    p->ensure_grad();
    sq += p->grad.squaredNorm();
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double s = max_norm / norm;
    for (const auto& [n, p] : params) p->grad *= s;
  }
  return norm;
}

class AdamOptimizer {
 public:
  struct Settings {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
  };

  explicit AdamOptimizer(NamedParams params)
      : AdamOptimizer(std::move(params), Settings()) {}

  AdamOptimizer(NamedParams params, Settings s)
      : params_(std::move(params)), s_(s) {
    for (const auto& [n, p] : params_) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }

  const NamedParams& params() const { return params_; }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(s_.beta1, t_);
    const double bc2 = 1.0 - std::pow(s_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].second;
      p->ensure_grad();
      m_[i] = s_.beta1 * m_[i] + (1.0 - s_.beta1) * p->grad;
      v_[i] = s_.beta2 * v_[i].array().matrix() +
              (1.0 - s_.beta2) * p->grad.cwiseProduct(p->grad);
      Mat mhat = m_[i] / bc1;
      Mat vhat = v_[i] / bc2;
      p->value.array() -=
          lr * (mhat.array() / (vhat.array().sqrt() + s_.eps) +
                s_.weight_decay * p->value.array());
    }
  }

  void zero_grads() {
    for (const auto& [n, p] : params_) p->zero_grad();
  }

 private:
  NamedParams params_;
  Settings s_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

}  // namespace msum
