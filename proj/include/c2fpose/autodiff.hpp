#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "c2fpose/errors.hpp"
#include "c2fpose/pose.hpp"

namespace c2fpose::ad {

/// A named trainable tensor with its gradient and Adam moments.
template <typename S>
struct Param {
  std::string name;
  MatX<S> value;
  MatX<S> grad;
  MatX<S> m, v;  // Adam first/second moments

  // m/v stay empty until the optimizer first touches them, so inference-only
  // models never allocate them.
  Param(std::string n, MatX<S> val) : name(std::move(n)), value(std::move(val)) {
    grad = MatX<S>::Zero(value.rows(), value.cols());
  }
  Eigen::Index size() const { return value.size(); }
};

/// Ordered, name-addressable parameter registry. Registration order is the
/// canonical serialization order.
template <typename S>
class ParamStore {
 public:
  Param<S>& create(const std::string& name, MatX<S> value) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    params_.push_back(std::make_unique<Param<S>>(name, std::move(value)));
    by_name_[name] = params_.back().get();
    return *params_.back();
  }
  Param<S>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }
  Param<S>& at(const std::string& name) const {
    Param<S>* p = find(name);
    if (!p) throw ConfigError("unknown parameter: " + name);
    return *p;
  }
  const std::vector<std::unique_ptr<Param<S>>>& all() const { return params_; }
  std::size_t count() const { return params_.size(); }
  Eigen::Index scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }
  void zero_grads() {
    for (auto& p : params_) p->grad.setZero();
  }

 private:
  std::vector<std::unique_ptr<Param<S>>> params_;
  std::map<std::string, Param<S>*> by_name_;
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

/// RAII guard that disables graph recording; with recording off, ops keep no
/// parent links so intermediates free as soon as they leave scope.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
struct Node;

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

template <typename S>
struct Node {
  MatX<S> value;
  MatX<S> grad;  // empty until touched during backward
  std::vector<NodePtr<S>> parents;
  std::function<void(Node<S>&)> backprop;  // pushes this->grad into parents
  Param<S>* param = nullptr;               // set on leaves; grad sink
  std::uint64_t order = 0;                 // creation counter; parents < children

  MatX<S>& grad_buf() {
    if (grad.size() == 0) grad = MatX<S>::Zero(value.rows(), value.cols());
    return grad;
  }
  void accum(const MatX<S>& g) { grad_buf() += g; }
};

namespace detail {

inline std::uint64_t& node_counter() {
  thread_local std::uint64_t c = 0;
  return c;
}

template <typename S>
NodePtr<S> make_node(MatX<S> value) {
  auto n = std::make_shared<Node<S>>();
  n->value = std::move(value);
  n->order = ++node_counter();
  return n;
}

}  // namespace detail

template <typename S>
NodePtr<S> constant(MatX<S> value) {
  return detail::make_node<S>(std::move(value));
}

template <typename S>
NodePtr<S> scalar(S v) {
  MatX<S> m(1, 1);
  m(0, 0) = v;
  return detail::make_node<S>(std::move(m));
}

/// Leaf node over a parameter; backward accumulates into the Param's grad.
template <typename S>
NodePtr<S> leaf(Param<S>& p) {
  auto n = detail::make_node<S>(p.value);
  if (grad_mode()) {
    n->param = &p;
    n->backprop = [&p](Node<S>& self) { p.grad += self.grad_buf(); };
  }
  return n;
}

template <typename S>
NodePtr<S> add(const NodePtr<S>& a, const NodePtr<S>& b) {
  auto n = detail::make_node<S>(MatX<S>(a->value + b->value));
  if (grad_mode()) {
    n->parents = {a, b};
    n->backprop = [a, b](Node<S>& self) {
      a->accum(self.grad);
      b->accum(self.grad);
    };
  }
  return n;
}

template <typename S>
NodePtr<S> sub(const NodePtr<S>& a, const NodePtr<S>& b) {
  auto n = detail::make_node<S>(MatX<S>(a->value - b->value));
  if (grad_mode()) {
    n->parents = {a, b};
    n->backprop = [a, b](Node<S>& self) {
      a->accum(self.grad);
      b->grad_buf() -= self.grad;
    };
  }
  return n;
}

template <typename S>
NodePtr<S> neg(const NodePtr<S>& a) {
  auto n = detail::make_node<S>(MatX<S>(-a->value));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a](Node<S>& self) { a->grad_buf() -= self.grad; };
  }
  return n;
}

template <typename S>
NodePtr<S> scale(const NodePtr<S>& a, S c) {
  auto n = detail::make_node<S>(MatX<S>(a->value * c));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a, c](Node<S>& self) { a->grad_buf() += self.grad * c; };
  }
  return n;
}

/// Elementwise product (shapes must match).
template <typename S>
NodePtr<S> cmul(const NodePtr<S>& a, const NodePtr<S>& b) {
  auto n = detail::make_node<S>(MatX<S>(a->value.cwiseProduct(b->value)));
  if (grad_mode()) {
    n->parents = {a, b};
    n->backprop = [a, b](Node<S>& self) {
      a->grad_buf() += self.grad.cwiseProduct(b->value);
      b->grad_buf() += self.grad.cwiseProduct(a->value);
    };
  }
  return n;
}

template <typename S>
NodePtr<S> matmul(const NodePtr<S>& a, const NodePtr<S>& b) {
  auto n = detail::make_node<S>(MatX<S>(a->value * b->value));
  if (grad_mode()) {
    n->parents = {a, b};
    n->backprop = [a, b](Node<S>& self) {
      a->grad_buf().noalias() += self.grad * b->value.transpose();
      b->grad_buf().noalias() += a->value.transpose() * self.grad;
    };
  }
  return n;
}

template <typename S>
NodePtr<S> transpose(const NodePtr<S>& a) {
  auto n = detail::make_node<S>(MatX<S>(a->value.transpose()));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a](Node<S>& self) { a->grad_buf() += self.grad.transpose(); };
  }
  return n;
}

/// Adds a 1 x d row vector to every row of an n x d matrix.
template <typename S>
NodePtr<S> add_rowwise(const NodePtr<S>& a, const NodePtr<S>& row) {
  if (row->value.rows() != 1 || row->value.cols() != a->value.cols()) {
    throw ConfigError("add_rowwise: bias must be 1 x cols(a)");
  }
  MatX<S> out = a->value;
  out.rowwise() += row->value.row(0);
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a, row};
    n->backprop = [a, row](Node<S>& self) {
      a->accum(self.grad);
      row->grad_buf() += self.grad.colwise().sum();
    };
  }
  return n;
}

/// Sum of all entries -> 1 x 1.
template <typename S>
NodePtr<S> sum(const NodePtr<S>& a) {
  MatX<S> out(1, 1);
  out(0, 0) = a->value.sum();
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a](Node<S>& self) {
      a->grad_buf().array() += self.grad(0, 0);
    };
  }
  return n;
}

/// out[r] = a.row(rows[r]); rows[r] == -1 yields a zero row (padding).
template <typename S>
NodePtr<S> gather_rows(const NodePtr<S>& a, std::vector<int> rows) {
  MatX<S> out(static_cast<Eigen::Index>(rows.size()), a->value.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0) {
      out.row(r).setZero();
    } else {
      out.row(r) = a->value.row(rows[r]);
    }
  }
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a, rows = std::move(rows)](Node<S>& self) {
      MatX<S>& g = a->grad_buf();
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= 0) g.row(rows[r]) += self.grad.row(r);
      }
    };
  }
  return n;
}

/// Groups each run of `group` consecutive rows into one row (blocks side by
/// side): out(i, b*C + c) = in(i*group + b, c).
template <typename S>
NodePtr<S> group_rows(const NodePtr<S>& a, int group) {
  const Eigen::Index rows = a->value.rows();
  const Eigen::Index cols = a->value.cols();
  if (group < 1 || rows % group != 0) throw ConfigError("group_rows: rows % group != 0");
  MatX<S> out(rows / group, cols * group);
  for (Eigen::Index i = 0; i < rows / group; ++i) {
    for (int b = 0; b < group; ++b) {
      out.block(i, b * cols, 1, cols) = a->value.row(i * group + b);
    }
  }
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a, group, cols](Node<S>& self) {
      MatX<S>& g = a->grad_buf();
      for (Eigen::Index i = 0; i < self.grad.rows(); ++i) {
        for (int b = 0; b < group; ++b) {
          g.row(i * group + b) += self.grad.block(i, b * cols, 1, cols);
        }
      }
    };
  }
  return n;
}

template <typename S>
NodePtr<S> slice_cols(const NodePtr<S>& a, int start, int len) {
  if (start < 0 || len < 1 || start + len > a->value.cols()) {
    throw ConfigError("slice_cols: range out of bounds");
  }
  auto n = detail::make_node<S>(MatX<S>(a->value.middleCols(start, len)));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a, start, len](Node<S>& self) {
      a->grad_buf().middleCols(start, len) += self.grad;
    };
  }
  return n;
}

/// Horizontal concatenation (same row counts).
template <typename S>
NodePtr<S> hcat(const std::vector<NodePtr<S>>& parts) {
  if (parts.empty()) throw EmptyInputError("hcat: no parts");
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p->value.cols();
  MatX<S> out(parts[0]->value.rows(), cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p->value.cols()) = p->value;
    at += p->value.cols();
  }
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = parts;
    n->backprop = [parts](Node<S>& self) {
      Eigen::Index at = 0;
      for (const auto& p : parts) {
        p->grad_buf() += self.grad.middleCols(at, p->value.cols());
        at += p->value.cols();
      }
    };
  }
  return n;
}

template <typename S>
NodePtr<S> hcat(const NodePtr<S>& a, const NodePtr<S>& b) {
  return hcat<S>(std::vector<NodePtr<S>>{a, b});
}

/// Row-wise softmax (numerically shifted).
template <typename S>
NodePtr<S> softmax_rows(const NodePtr<S>& a) {
  MatX<S> out = a->value;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp();
    out.row(r) /= out.row(r).sum();
  }
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a](Node<S>& self) {
      MatX<S>& g = a->grad_buf();
      for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
        const S dot = self.grad.row(r).cwiseProduct(self.value.row(r)).sum();
        g.row(r) +=
            self.value.row(r).cwiseProduct((self.grad.row(r).array() - dot).matrix());
      }
    };
  }
  return n;
}

/// Row-wise log-softmax.
template <typename S>
NodePtr<S> log_softmax_rows(const NodePtr<S>& a) {
  MatX<S> out = a->value;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const S mx = out.row(r).maxCoeff();
    const S lse = mx + std::log((out.row(r).array() - mx).exp().sum());
    out.row(r).array() -= lse;
  }
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a](Node<S>& self) {
      MatX<S>& g = a->grad_buf();
      for (Eigen::Index r = 0; r < self.value.rows(); ++r) {
        const S gsum = self.grad.row(r).sum();
        g.row(r) += self.grad.row(r) - self.value.row(r).array().exp().matrix() * gsum;
      }
    };
  }
  return n;
}

/// Row-wise layer normalization with learned gain/bias (1 x d each).
template <typename S>
NodePtr<S> layer_norm(const NodePtr<S>& x, const NodePtr<S>& gamma, const NodePtr<S>& beta,
                      S eps = S(1e-5)) {
  const Eigen::Index d = x->value.cols();
  if (gamma->value.rows() != 1 || gamma->value.cols() != d || beta->value.rows() != 1 ||
      beta->value.cols() != d) {
    throw ConfigError("layer_norm: gamma/beta must be 1 x cols(x)");
  }
  MatX<S> xhat(x->value.rows(), d);
  VecX<S> inv_sigma(x->value.rows());
  for (Eigen::Index r = 0; r < x->value.rows(); ++r) {
    const S mu = x->value.row(r).mean();
    const S var = (x->value.row(r).array() - mu).square().mean();
    inv_sigma[r] = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (x->value.row(r).array() - mu) * inv_sigma[r];
  }
  MatX<S> out = xhat;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = out.row(r).cwiseProduct(gamma->value.row(0)) + beta->value.row(0);
  }
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {x, gamma, beta};
    n->backprop = [x, gamma, beta, xhat = std::move(xhat),
                   inv_sigma = std::move(inv_sigma)](Node<S>& self) {
      MatX<S>& gx = x->grad_buf();
      MatX<S>& gg = gamma->grad_buf();
      MatX<S>& gb = beta->grad_buf();
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const auto g = self.grad.row(r);
        gb.row(0) += g;
        gg.row(0) += g.cwiseProduct(xhat.row(r));
        const Eigen::Matrix<S, 1, Eigen::Dynamic> gh = g.cwiseProduct(gamma->value.row(0));
        const S m1 = gh.mean();
        const S m2 = gh.cwiseProduct(xhat.row(r)).mean();
        gx.row(r) +=
            ((gh.array() - m1) - xhat.row(r).array() * m2).matrix() * inv_sigma[r];
      }
    };
  }
  return n;
}

/// Exact GELU: x * Phi(x).
template <typename S>
NodePtr<S> gelu(const NodePtr<S>& a) {
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * S(M_PI));
  MatX<S> phi = a->value.unaryExpr(
      [inv_sqrt2](S v) { return S(0.5) * (S(1) + std::erf(v * inv_sqrt2)); });
  auto n = detail::make_node<S>(MatX<S>(a->value.cwiseProduct(phi)));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a, phi = std::move(phi), inv_sqrt2pi](Node<S>& self) {
      const MatX<S> pdf =
          ((-S(0.5) * a->value.array().square()).exp() * inv_sqrt2pi).matrix();
      a->grad_buf() +=
          self.grad.cwiseProduct(phi + a->value.cwiseProduct(pdf));
    };
  }
  return n;
}

template <typename S>
NodePtr<S> exp(const NodePtr<S>& a) {
  auto n = detail::make_node<S>(MatX<S>(a->value.array().exp().matrix()));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a](Node<S>& self) {
      a->grad_buf() += self.grad.cwiseProduct(self.value);
    };
  }
  return n;
}

/// Frobenius norm -> 1 x 1. Subgradient 0 at the origin.
template <typename S>
NodePtr<S> l2_norm(const NodePtr<S>& a) {
  MatX<S> out(1, 1);
  out(0, 0) = a->value.norm();
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a](Node<S>& self) {
      const S nv = self.value(0, 0);
      if (nv > S(0)) a->grad_buf() += (self.grad(0, 0) / nv) * a->value;
    };
  }
  return n;
}

/// Divide every entry of a by the 1 x 1 node s.
template <typename S>
NodePtr<S> div_scalar(const NodePtr<S>& a, const NodePtr<S>& s) {
  if (s->value.size() != 1) throw ConfigError("div_scalar: divisor must be 1 x 1");
  const S sv = s->value(0, 0);
  auto n = detail::make_node<S>(MatX<S>(a->value / sv));
  if (grad_mode()) {
    n->parents = {a, s};
    n->backprop = [a, s, sv](Node<S>& self) {
      a->grad_buf() += self.grad / sv;
      s->grad_buf()(0, 0) -= self.grad.cwiseProduct(self.value).sum() / sv;
    };
  }
  return n;
}

/// Single entry -> 1 x 1.
template <typename S>
NodePtr<S> pick(const NodePtr<S>& a, Eigen::Index r, Eigen::Index c) {
  if (r < 0 || c < 0 || r >= a->value.rows() || c >= a->value.cols()) {
    throw ConfigError("pick: index out of range");
  }
  MatX<S> out(1, 1);
  out(0, 0) = a->value(r, c);
  auto n = detail::make_node<S>(std::move(out));
  if (grad_mode()) {
    n->parents = {a};
    n->backprop = [a, r, c](Node<S>& self) { a->grad_buf()(r, c) += self.grad(0, 0); };
  }
  return n;
}

/// Reverse pass from a (typically 1 x 1) root seeded with ones. Visits the
/// reachable subgraph in reverse creation order, which is a valid reverse
/// topological order because parents are always created before children.
template <typename S>
void backward(const NodePtr<S>& root) {
  if (!grad_mode()) throw ConfigError("backward called with gradients disabled");
  std::vector<Node<S>*> reachable;
  std::unordered_set<Node<S>*> seen;
  std::vector<Node<S>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<S>* n = stack.back();
    stack.pop_back();
    reachable.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(reachable.begin(), reachable.end(),
            [](const Node<S>* a, const Node<S>* b) { return a->order > b->order; });
  root->grad_buf().setOnes();
  for (Node<S>* n : reachable) {
    if (n->backprop && n->grad.size() != 0) n->backprop(*n);
  }
}

}  // namespace c2fpose::ad
