#pragma once

// Reverse-mode autodiff over dense double matrices. A Tape records one
// forward pass; backward() replays the recorded ops in reverse. Parameter
// nodes outlive the tape and accumulate gradients across calls until
// zero_grad().

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace msum {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat value;
  Mat grad;
  bool requires_grad = true;

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad = Mat::Zero(value.rows(), value.cols()); }
};

using NodePtr = std::shared_ptr<Node>;

inline NodePtr make_param(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->zero_grad();
  n->requires_grad = true;
  return n;
}

inline NodePtr make_const(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = false;
  return n;
}

class Tape {
 public:
  NodePtr constant(Mat v) { return make_const(std::move(v)); }

  NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "add");
    auto out = fresh(a->value + b->value, a->requires_grad || b->requires_grad);
    record(out, [a, b, out] {
      if (a->requires_grad) { a->ensure_grad(); a->grad += out->grad; }
      if (b->requires_grad) { b->ensure_grad(); b->grad += out->grad; }
    });
    return out;
  }

  NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "sub");
    auto out = fresh(a->value - b->value, a->requires_grad || b->requires_grad);
    record(out, [a, b, out] {
      if (a->requires_grad) { a->ensure_grad(); a->grad += out->grad; }
      if (b->requires_grad) { b->ensure_grad(); b->grad -= out->grad; }
    });
    return out;
  }

  NodePtr scale(const NodePtr& a, double s) {
    auto out = fresh(a->value * s, a->requires_grad);
    record(out, [a, out, s] {
      if (a->requires_grad) { a->ensure_grad(); a->grad += s * out->grad; }
    });
    return out;
  }

  NodePtr cmul(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "cmul");
    auto out = fresh(a->value.cwiseProduct(b->value),
                     a->requires_grad || b->requires_grad);
    record(out, [a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += out->grad.cwiseProduct(b->value);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad += out->grad.cwiseProduct(a->value);
      }
    });
    return out;
  }

  NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    if (a->value.cols() != b->value.rows())
      throw std::invalid_argument("matmul: inner dimensions disagree");
    auto out = fresh(a->value * b->value, a->requires_grad || b->requires_grad);
    record(out, [a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += out->grad * b->value.transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad += a->value.transpose() * out->grad;
      }
    });
    return out;
  }

  // a * b^T
  NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
    if (a->value.cols() != b->value.cols())
      throw std::invalid_argument("matmul_nt: inner dimensions disagree");
    auto out = fresh(a->value * b->value.transpose(),
                     a->requires_grad || b->requires_grad);
    record(out, [a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += out->grad * b->value;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad += out->grad.transpose() * a->value;
      }
    });
    return out;
  }

  // Broadcast a 1 x n row vector over every row of a.
  NodePtr add_rowvec(const NodePtr& a, const NodePtr& r) {
    if (r->value.rows() != 1 || r->value.cols() != a->value.cols())
      throw std::invalid_argument("add_rowvec: shape mismatch");
    Mat v = a->value;
    v.rowwise() += r->value.row(0);
    auto out = fresh(std::move(v), a->requires_grad || r->requires_grad);
    record(out, [a, r, out] {
      if (a->requires_grad) { a->ensure_grad(); a->grad += out->grad; }
      if (r->requires_grad) {
        r->ensure_grad();
        r->grad.row(0) += out->grad.colwise().sum();
      }
    });
    return out;
  }

  NodePtr concat_cols(const NodePtr& a, const NodePtr& b) {
    if (a->value.rows() != b->value.rows())
      throw std::invalid_argument("concat_cols: row counts disagree");
    Mat v(a->value.rows(), a->value.cols() + b->value.cols());
    v << a->value, b->value;
    auto out = fresh(std::move(v), a->requires_grad || b->requires_grad);
    const auto ac = a->value.cols();
    const auto bc = b->value.cols();
    record(out, [a, b, out, ac, bc] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += out->grad.leftCols(ac);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad += out->grad.rightCols(bc);
      }
    });
    return out;
  }

  NodePtr cols(const NodePtr& a, Eigen::Index start, Eigen::Index n) {
    if (start < 0 || start + n > a->value.cols())
      throw std::out_of_range("cols: slice out of range");
    auto out = fresh(a->value.middleCols(start, n), a->requires_grad);
    record(out, [a, out, start, n] {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad.middleCols(start, n) += out->grad;
      }
    });
    return out;
  }

  NodePtr concat_rows(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    Eigen::Index rows = 0;
    bool rg = false;
    for (const auto& p : parts) {
      rows += p->value.rows();
      rg = rg || p->requires_grad;
    }
    Mat v(rows, parts.front()->value.cols());
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      v.middleRows(at, p->value.rows()) = p->value;
      at += p->value.rows();
    }
    auto out = fresh(std::move(v), rg);
    record(out, [parts, out] {
      Eigen::Index at = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) {
          p->ensure_grad();
          p->grad += out->grad.middleRows(at, p->value.rows());
        }
        at += p->value.rows();
      }
    });
    return out;
  }

  // Gather rows of a table by index; backward scatter-adds.
  NodePtr gather_rows(const NodePtr& table, const std::vector<int>& ids) {
    Mat v(static_cast<Eigen::Index>(ids.size()), table->value.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= table->value.rows())
        throw std::out_of_range("gather_rows: index out of range");
      v.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
    }
    auto out = fresh(std::move(v), table->requires_grad);
    record(out, [table, out, ids] {
      if (!table->requires_grad) return;
      table->ensure_grad();
      for (size_t i = 0; i < ids.size(); ++i)
        table->grad.row(ids[i]) += out->grad.row(static_cast<Eigen::Index>(i));
    });
    return out;
  }

  // Elementwise mean of same-shape nodes.
  NodePtr mean_nodes(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw std::invalid_argument("mean_nodes: no parts");
    Mat v = Mat::Zero(parts.front()->value.rows(), parts.front()->value.cols());
    bool rg = false;
    for (const auto& p : parts) {
      v += p->value;
      rg = rg || p->requires_grad;
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    v *= inv;
    auto out = fresh(std::move(v), rg);
    record(out, [parts, out, inv] {
      for (const auto& p : parts) {
        if (!p->requires_grad) continue;
        p->ensure_grad();
        p->grad += inv * out->grad;
      }
    });
    return out;
  }

  NodePtr relu(const NodePtr& a) {
    auto out = fresh(a->value.cwiseMax(0.0), a->requires_grad);
    record(out, [a, out] {
      if (!a->requires_grad) return;
      a->ensure_grad();
      a->grad += out->grad.cwiseProduct(
          (a->value.array() > 0.0).cast<double>().matrix());
    });
    return out;
  }

  NodePtr tanh_(const NodePtr& a) {
    Mat t = a->value.array().tanh().matrix();
    auto out = fresh(t, a->requires_grad);
    record(out, [a, out, t] {
      if (!a->requires_grad) return;
      a->ensure_grad();
      a->grad += out->grad.cwiseProduct(
          (1.0 - t.array().square()).matrix());
    });
    return out;
  }

  NodePtr gelu(const NodePtr& a) {
    const double inv_sqrt2 = 0.7071067811865475244;
    Mat phi = a->value.unaryExpr(
        [inv_sqrt2](double x) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)); });
    auto out = fresh(a->value.cwiseProduct(phi), a->requires_grad);
    record(out, [a, out, phi] {
      if (!a->requires_grad) return;
      a->ensure_grad();
      const double c = 0.3989422804014326779;  // 1/sqrt(2*pi)
      Mat pdf = (c * (-0.5 * a->value.array().square()).exp()).matrix();
      a->grad += out->grad.cwiseProduct(
          phi + a->value.cwiseProduct(pdf));
    });
    return out;
  }

  // Row-wise softmax with an optional additive mask (use -inf to exclude).
  NodePtr softmax_rows(const NodePtr& a, const Mat* mask = nullptr) {
    Mat z = a->value;
    if (mask) {
      if (mask->rows() != z.rows() || mask->cols() != z.cols())
        throw std::invalid_argument("softmax_rows: mask shape mismatch");
      z += *mask;
    }
    Mat s(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      double m = z.row(i).maxCoeff();
      Eigen::ArrayXd e = (z.row(i).array() - m).exp();
      s.row(i) = (e / e.sum()).matrix();
    }
    auto out = fresh(s, a->requires_grad);
    record(out, [a, out, s] {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (Eigen::Index i = 0; i < s.rows(); ++i) {
        double dot = out->grad.row(i).dot(s.row(i));
        a->grad.row(i) +=
            (s.row(i).array() * (out->grad.row(i).array() - dot)).matrix();
      }
    });
    return out;
  }

  NodePtr log_softmax_rows(const NodePtr& a) {
    Mat z(a->value.rows(), a->value.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      double m = a->value.row(i).maxCoeff();
      double lse = m + std::log((a->value.row(i).array() - m).exp().sum());
      z.row(i) = (a->value.row(i).array() - lse).matrix();
    }
    auto out = fresh(z, a->requires_grad);
    record(out, [a, out, z] {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double gsum = out->grad.row(i).sum();
        a->grad.row(i) += (out->grad.row(i).array() -
                           gsum * z.row(i).array().exp()).matrix();
      }
    });
    return out;
  }

  // Per-row layer normalization with learned 1 x n gain and bias.
  NodePtr layer_norm(const NodePtr& a, const NodePtr& gain, const NodePtr& bias,
                     double eps = 1e-5) {
    const Eigen::Index n = a->value.cols();
    if (gain->value.cols() != n || bias->value.cols() != n)
      throw std::invalid_argument("layer_norm: gain/bias width mismatch");
    Mat xhat(a->value.rows(), n);
    Eigen::VectorXd inv_std(a->value.rows());
    for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
      double mu = a->value.row(i).mean();
      double var = (a->value.row(i).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + eps);
      inv_std(i) = is;
      xhat.row(i) = ((a->value.row(i).array() - mu) * is).matrix();
    }
    Mat v = xhat;
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      v.row(i) = v.row(i).cwiseProduct(gain->value.row(0)) + bias->value.row(0);
    auto out = fresh(std::move(v),
                     a->requires_grad || gain->requires_grad ||
                         bias->requires_grad);
    record(out, [a, gain, bias, out, xhat, inv_std, n] {
      if (gain->requires_grad) {
        gain->ensure_grad();
        gain->grad.row(0) += out->grad.cwiseProduct(xhat).colwise().sum();
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        bias->grad.row(0) += out->grad.colwise().sum();
      }
      if (a->requires_grad) {
        a->ensure_grad();
        const double dn = static_cast<double>(n);
        for (Eigen::Index i = 0; i < a->value.rows(); ++i) {
          Eigen::RowVectorXd dxhat =
              out->grad.row(i).cwiseProduct(gain->value.row(0));
          double s1 = dxhat.sum();
          double s2 = dxhat.dot(xhat.row(i));
          a->grad.row(i) +=
              (inv_std(i) / dn) *
              (dn * dxhat.array() - s1 - xhat.row(i).array() * s2).matrix();
        }
      }
    });
    return out;
  }

  // im2col over a (h*w x channels) feature map. index_map has one entry per
  // (output position, kernel offset); -1 marks zero padding.
  NodePtr im2col(const NodePtr& a, const std::vector<int>& index_map,
                 Eigen::Index out_positions, Eigen::Index kernel_size) {
    const Eigen::Index c = a->value.cols();
    if (static_cast<Eigen::Index>(index_map.size()) !=
        out_positions * kernel_size)
      throw std::invalid_argument("im2col: index map size mismatch");
    Mat v = Mat::Zero(out_positions, kernel_size * c);
    for (Eigen::Index p = 0; p < out_positions; ++p)
      for (Eigen::Index k = 0; k < kernel_size; ++k) {
        int src = index_map[static_cast<size_t>(p * kernel_size + k)];
        if (src >= 0) v.block(p, k * c, 1, c) = a->value.row(src);
      }
    auto out = fresh(std::move(v), a->requires_grad);
    record(out, [a, out, index_map, out_positions, kernel_size, c] {
      if (!a->requires_grad) return;
      a->ensure_grad();
      for (Eigen::Index p = 0; p < out_positions; ++p)
        for (Eigen::Index k = 0; k < kernel_size; ++k) {
          int src = index_map[static_cast<size_t>(p * kernel_size + k)];
          if (src >= 0) a->grad.row(src) += out->grad.block(p, k * c, 1, c);
        }
    });
    return out;
  }

  // Mean over unpadded positions of -[(1-eps) log p(gold) + eps/V sum_v log p(v)].
  // log_probs is (len x vocab); targets gives the gold id per row.
  NodePtr smoothed_nll(const NodePtr& log_probs, const std::vector<int>& targets,
                       double eps) {
    const Eigen::Index len = log_probs->value.rows();
    const Eigen::Index vocab = log_probs->value.cols();
    if (static_cast<Eigen::Index>(targets.size()) != len)
      throw std::invalid_argument("smoothed_nll: target length mismatch");
    double loss = 0.0;
    for (Eigen::Index t = 0; t < len; ++t) {
      loss -= (1.0 - eps) * log_probs->value(t, targets[static_cast<size_t>(t)]);
      loss -= (eps / static_cast<double>(vocab)) * log_probs->value.row(t).sum();
    }
    loss /= static_cast<double>(len);
    auto out = fresh(Mat::Constant(1, 1, loss), log_probs->requires_grad);
    record(out, [log_probs, out, targets, eps, len, vocab] {
      if (!log_probs->requires_grad) return;
      log_probs->ensure_grad();
      const double g = out->grad(0, 0) / static_cast<double>(len);
      const double u = eps / static_cast<double>(vocab);
      for (Eigen::Index t = 0; t < len; ++t) {
        log_probs->grad.row(t).array() -= g * u;
        log_probs->grad(t, targets[static_cast<size_t>(t)]) -= g * (1.0 - eps);
      }
    });
    return out;
  }

  NodePtr sum_all(const NodePtr& a) {
    auto out = fresh(Mat::Constant(1, 1, a->value.sum()), a->requires_grad);
    record(out, [a, out] {
      if (!a->requires_grad) return;
      a->ensure_grad();
      a->grad.array() += out->grad(0, 0);
    });
    return out;
  }

  void backward(const NodePtr& root) {
    root->ensure_grad();
    if (root->value.size() == 1)
      root->grad(0, 0) = 1.0;
    else
      root->grad.setOnes();
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  size_t size() const { return ops_.size(); }

 private:
  static NodePtr fresh(Mat v, bool rg) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = rg;
    if (rg) n->zero_grad();
    return n;
  }

  static void check_same_shape(const NodePtr& a, const NodePtr& b,
                               const char* op) {
    if (a->value.rows() != b->value.rows() ||
        a->value.cols() != b->value.cols())
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }

  void record(const NodePtr& out, std::function<void()> op) {
    if (out->requires_grad) ops_.push_back(std::move(op));
  }

  std::vector<std::function<void()>> ops_;
};

}  // namespace msum
