#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape records every operation; Tape::backward replays the
// recorded closures in reverse creation order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pcst::ag {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// A named trainable tensor. The gradient buffer is owned here so that
/// several tapes (one per batch item) can accumulate into it.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<T>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<T>&)>;

  /// With record == false no backward closures are stored (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Matrix<T> value) { return emplace(std::move(value), false, {}); }

  Var<T> parameter(Parameter<T>& p) {
    if (!record_) return constant(p.value);
    return emplace(p.value, true, [&p](Tape&, const Matrix<T>& g) {
      if (p.grad.size() == 0) p.grad.setZero(p.value.rows(), p.value.cols());
      p.grad += g;
    });
  }

  /// Records a node computed from `inputs`. The closure runs only when at
  /// least one input requires a gradient.
  Var<T> push(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
    return push(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }

  Var<T> push(Matrix<T> value, const std::vector<Var<T>>& inputs, Backward fn) {
    bool needs = false;
    if (record_) {
      for (const auto& v : inputs) {
        if (v.tape() != this) throw std::invalid_argument("ag: variable belongs to another tape");
        needs = needs || nodes_[v.id()].requires_grad;
      }
    }
    return emplace(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  bool requires_grad(const Var<T>& v) const { return nodes_[v.id()].requires_grad; }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }

  Matrix<T>& grad(const Var<T>& v) {
    Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  template <typename Expr>
  void accumulate(const Var<T>& v, const Expr& g) {
    if (!requires_grad(v)) return;
    grad(v) += g;
  }

  /// Seeds d(root)/d(root) = seed (root must be 1x1) and propagates.
  void backward(const Var<T>& root, T seed = T(1)) {
    if (root.rows() != 1 || root.cols() != 1) {
      throw std::invalid_argument("ag: backward root must be a scalar");
    }
    if (!requires_grad(root)) return;
    grad(root)(0, 0) += seed;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    Backward backward;
    bool requires_grad = false;
  };

  Var<T> emplace(Matrix<T> value, bool needs, Backward fn) {
    nodes_.push_back(Node{std::move(value), Matrix<T>(), std::move(fn), needs});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool record_;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  return tape_->value(id_);
}

namespace detail {
template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("ag::") + op + ": shape mismatch");
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return x > T(30) ? x : std::log1p(std::exp(x));
}
}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape()->push(a.value() + b.value(), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape()->push(a.value() - b.value(), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(b.value()));
    t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return a.tape()->push(a.value() * s, {a},
                        [a, s](Tape<T>& t, const Matrix<T>& g) { t.accumulate(a, g * s); });
}

/// Adds a 1 x C row to every row of a.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("ag::add_row: shape");
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->push(std::move(out), {a, row}, [a, row](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.grad(row).row(0) += g.colwise().sum();
  });
}

/// Multiplies every row of a elementwise by a 1 x C row.
template <typename T>
Var<T> mul_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("ag::mul_row: shape");
  Matrix<T> out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r).array() *= row.value().row(0).array();
  return a.tape()->push(std::move(out), {a, row}, [a, row](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) {
      Matrix<T> ga = g;
      for (Eigen::Index r = 0; r < ga.rows(); ++r) ga.row(r).array() *= row.value().row(0).array();
      t.accumulate(a, ga);
    }
    if (t.requires_grad(row)) {
      t.grad(row).row(0) += g.cwiseProduct(a.value()).colwise().sum();
    }
  });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("ag::matmul: inner dimension mismatch");
  Matrix<T> out = a.value() * b.value();
  return a.tape()->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a).noalias() += g * b.value().transpose();
    if (t.requires_grad(b)) t.grad(b).noalias() += a.value().transpose() * g;
  });
}

/// x * W + b with b broadcast over rows.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_row(matmul(x, w), b);
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Matrix<T> out = a.value().cwiseMax(T(0));
  return a.tape()->push(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, (a.value().array() > T(0)).select(g, T(0)));
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T x) { return detail::stable_sigmoid(x); });
  return a.tape()->push(out, {a}, [a, s = out](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(s.cwiseProduct((T(1) - s.array()).matrix())));
  });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
  Matrix<T> out = a.value().array().tanh().matrix();
  return a.tape()->push(out, {a}, [a, out](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct((T(1) - out.array().square()).matrix()));
  });
}

template <typename T>
Var<T> softplus(const Var<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T x) { return detail::stable_softplus(x); });
  return a.tape()->push(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](T x) { return detail::stable_sigmoid(x); })));
  });
}

/// Natural logarithm.
template <typename T>
Var<T> log(const Var<T>& a) {
  Matrix<T> out = a.value().array().log().matrix();
  return a.tape()->push(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

/// max(a, floor); the gradient passes only where a >= floor.
template <typename T>
Var<T> lower_bound(const Var<T>& a, T floor) {
  Matrix<T> out = a.value().cwiseMax(floor);
  return a.tape()->push(std::move(out), {a}, [a, floor](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, (a.value().array() >= floor).select(g, T(0)));
  });
}

/// Sum of all entries, as a 1 x 1 matrix.
template <typename T>
Var<T> sum(const Var<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->push(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a).array() += g(0, 0);
  });
}

/// Row sums: N x C -> N x 1.
template <typename T>
Var<T> sum_cols(const Var<T>& a) {
  Matrix<T> out = a.value().rowwise().sum();
  return a.tape()->push(std::move(out), {a}, [a](Tape<T>& t, const Matrix<T>& g) {
    if (!t.requires_grad(a)) return;
    auto& ga = t.grad(a);
    for (Eigen::Index c = 0; c < ga.cols(); ++c) ga.col(c) += g.col(0);
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("ag::concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("ag::concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape()->push(std::move(out), parts, [parts](Tape<T>& t, const Matrix<T>& g) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("ag::slice_cols: range out of bounds");
  }
  Matrix<T> out = a.value().middleCols(start, count);
  return a.tape()->push(std::move(out), {a}, [a, start, count](Tape<T>& t, const Matrix<T>& g) {
    if (t.requires_grad(a)) t.grad(a).middleCols(start, count) += g;
  });
}

/// out[i] = a[index[i]]
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<int> index) {
  Matrix<T> out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) throw std::out_of_range("ag::gather_rows: index");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  return a.tape()->push(std::move(out), {a}, [a, index = std::move(index)](Tape<T>& t, const Matrix<T>& g) {
    if (!t.requires_grad(a)) return;
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < index.size(); ++i) ga.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

/// Stacks the rows of every part, in order.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("ag::concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("ag::concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape()->push(std::move(out), parts, [parts](Tape<T>& t, const Matrix<T>& g) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

/// Reshapes a matrix in row-major order (data is shared layout-wise).
template <typename T>
Var<T> reshape(const Var<T>& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("ag::reshape: size mismatch");
  Matrix<T> out = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  const Eigen::Index ar = a.rows();
  const Eigen::Index ac = a.cols();
  return a.tape()->push(std::move(out), {a}, [a, ar, ac](Tape<T>& t, const Matrix<T>& g) {
    t.accumulate(a, Eigen::Map<const Matrix<T>>(g.data(), ar, ac));
  });
}

/// Likelihood of a unit-width bin from the logits of its two CDF edges:
/// sigmoid(upper) - sigmoid(lower), evaluated on the side of the
/// distribution where the subtraction is numerically benign.
template <typename T>
Var<T> cdf_difference(const Var<T>& lower, const Var<T>& upper) {
  detail::require_same_shape(lower, upper, "cdf_difference");
  Matrix<T> out(lower.rows(), lower.cols());
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const T l = lower.value().data()[i];
    const T u = upper.value().data()[i];
    const T sign = (l + u) > T(0) ? T(-1) : T(1);
    out.data()[i] = std::abs(detail::stable_sigmoid(sign * u) - detail::stable_sigmoid(sign * l));
  }
  return lower.tape()->push(std::move(out), {lower, upper}, [lower, upper](Tape<T>& t, const Matrix<T>& g) {
    auto dsig = [](T x) {
      const T s = detail::stable_sigmoid(x);
      return s * (T(1) - s);
    };
    if (t.requires_grad(lower)) {
      Matrix<T> gl(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) gl.data()[i] = -g.data()[i] * dsig(lower.value().data()[i]);
      t.accumulate(lower, gl);
    }
    if (t.requires_grad(upper)) {
      Matrix<T> gu(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) gu.data()[i] = g.data()[i] * dsig(upper.value().data()[i]);
      t.accumulate(upper, gu);
    }
  });
}

/// Sum of binary cross-entropy terms between sigmoid(logits) and 0/1
/// targets. Probabilities are clamped to [eps, 1 - eps]; clamped entries
/// carry no gradient.
template <typename T>
Var<T> bce_with_logits_sum(const Var<T>& logits, const std::vector<std::uint8_t>& targets, T eps = T(1e-7)) {
  if (logits.cols() != 1 || static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw std::invalid_argument("ag::bce_with_logits_sum: length mismatch");
  }
  Matrix<T> out(1, 1);
  T total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T p = std::clamp(detail::stable_sigmoid(logits.value()(i, 0)), eps, T(1) - eps);
    total -= targets[static_cast<std::size_t>(i)] ? std::log(p) : std::log1p(-p);
  }
  out(0, 0) = total;
  return logits.tape()->push(std::move(out), {logits}, [logits, targets, eps](Tape<T>& t, const Matrix<T>& g) {
    if (!t.requires_grad(logits)) return;
    auto& gl = t.grad(logits);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      const T p = detail::stable_sigmoid(logits.value()(i, 0));
      if (p < eps || p > T(1) - eps) continue;
      gl(i, 0) += g(0, 0) * (p - T(targets[static_cast<std::size_t>(i)]));
    }
  });
}

/// Result of scaling a real sequence (consecutive pairs form complex
/// symbols) to unit average complex-symbol power.
template <typename T>
struct Normalized {
  Var<T> output;
  T scale = T(1);
  bool degenerate = false;
};

template <typename T>
Normalized<T> power_normalize(const Var<T>& x) {
  if (x.cols() != 1 || x.rows() % 2 != 0) {
    throw std::invalid_argument("ag::power_normalize: expects an even-length column");
  }
  const T n_symbols = T(x.rows() / 2);
  const T energy = x.value().squaredNorm();
  if (x.rows() == 0 || !(energy > T(0))) {
    return {x.tape()->push(x.value(), {x}, [x](Tape<T>& t, const Matrix<T>& g) { t.accumulate(x, g); }), T(1),
            x.rows() != 0};
  }
  const T s = std::sqrt(n_symbols / energy);
  Matrix<T> out = x.value() * s;
  Var<T> y = x.tape()->push(std::move(out), {x}, [x, s, energy](Tape<T>& t, const Matrix<T>& g) {
    // y = x * sqrt(n / |x|^2);  dy/dx = s (I - x x^T / |x|^2)
    const T proj = g.col(0).dot(x.value().col(0)) / energy;
    t.accumulate(x, (g - proj * x.value()) * s);
  });
  return {y, s, false};
}

/// Complex affine map on a real column whose consecutive pairs are complex
/// symbols: y_j = a_j * x_j + b_j with constant a, b.
template <typename T>
Var<T> complex_affine(const Var<T>& x, const std::vector<std::complex<T>>& a, const std::vector<std::complex<T>>& b) {
  if (x.cols() != 1 || static_cast<std::size_t>(x.rows()) != 2 * a.size() || a.size() != b.size()) {
    throw std::invalid_argument("ag::complex_affine: size mismatch");
  }
  Matrix<T> out(x.rows(), 1);
  for (std::size_t j = 0; j < a.size(); ++j) {
    const std::complex<T> v(x.value()(2 * j, 0), x.value()(2 * j + 1, 0));
    const std::complex<T> r = a[j] * v + b[j];
    out(2 * j, 0) = r.real();
    out(2 * j + 1, 0) = r.imag();
  }
  return x.tape()->push(std::move(out), {x}, [x, a](Tape<T>& t, const Matrix<T>& g) {
    if (!t.requires_grad(x)) return;
    auto& gx = t.grad(x);
    // Real Jacobian of multiplication by a = ar + i ai is [[ar, -ai], [ai, ar]].
    for (std::size_t j = 0; j < a.size(); ++j) {
      const T gr = g(2 * j, 0);
      const T gi = g(2 * j + 1, 0);
      gx(2 * j, 0) += a[j].real() * gr + a[j].imag() * gi;
      gx(2 * j + 1, 0) += -a[j].imag() * gr + a[j].real() * gi;
    }
  });
}

}  // namespace pcst::ag
