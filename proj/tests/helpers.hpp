#pragma once

// Shared test utilities: finite-difference gradient checking against the
// tape, and small random-matrix generators.

#include <functional>
#include <random>
#include <vector>

#include "msum/model.hpp"
#include "msum/tensor.hpp"

namespace msum::test {

inline Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng,
                 double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

// Central-difference check of d(scalar loss)/d(params). build must construct
// the loss from the given tape using the parameter nodes (which persist
// across calls). Returns the max relative error over all entries.
inline double fd_gradient_check(
    const std::function<NodePtr(Tape&)>& build,
    const std::vector<std::pair<std::string, NodePtr>>& params,
    double step = 1e-5) {
  for (auto& [n, p] : params) p->zero_grad();
  {
    Tape tape;
    auto loss = build(tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& [name, p] : params) {
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        double saved = p->value(i, j);
        p->value(i, j) = saved + step;
        double up;
        {
          Tape t;
          up = build(t)->value(0, 0);
        }
        p->value(i, j) = saved - step;
        double down;
        {
          Tape t;
          down = build(t)->value(0, 0);
        }
        p->value(i, j) = saved;
        double fd = (up - down) / (2.0 * step);
        worst = std::max(worst, rel_err(fd, p->grad(i, j)));
      }
  }
  return worst;
}

}  // namespace msum::test
