#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "annodist/tensor.hpp"

namespace annodist::ad {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const Tensor& grad() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  double item() const { return value().item(); }
  Tape* tape() const { return tape_; }
  int index() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* tape, int idx) : tape_(tape), idx_(idx) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Reverse-mode tape over dense double tensors. Records are created in
// topological order; backward() visits each record exactly once in reverse.
// Gradients accumulate additively across backward() calls until zero_grad().
class Tape {
 public:
  // Leaf whose gradient is tracked.
  Var input(Tensor v) { return make(std::move(v), true); }

  // Leaf treated as a constant (backward of anything w.r.t. it is 0).
  Var constant(Tensor v) { return make(std::move(v), false); }

  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  std::size_t size() const { return nodes_.size(); }

  const Tensor& value(const Var& v) const { return nodes_[check(v)].value; }
  const Tensor& grad(const Var& v) const { return nodes_[check(v)].grad; }

  void zero_grad() {
    for (Node& n : nodes_)
      if (n.requires_grad) n.grad.fill(0.0);
  }

  // Seeds d(root)/d(root) = 1 and propagates to every reachable leaf. Leaf
  // gradients accumulate across calls; intermediate gradients are scratch
  // space and reset on every pass.
  void backward(const Var& root) {
    Node& r = nodes_[check(root)];
    if (!r.value.is_scalar()) throw std::invalid_argument("backward: root must be a scalar");
    if (!r.requires_grad) return;
    for (int i = root.idx_; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.pull) n.grad.fill(0.0);
    }
    r.grad[0] += 1.0;
    for (int i = root.idx_; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.pull) {
        cursor_ = i;
        n.pull(*this);
      }
    }
    cursor_ = -1;
  }

  // ---- primitives ----

  Var add(Var a, Var b) {
    shape_eq(a, b, "add");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return binary(std::move(out), a, b, [](Tape& t, int ai, int bi, const Node& o) {
      t.accumulate(ai, o.grad, +1.0);
      t.accumulate(bi, o.grad, +1.0);
    });
  }

  Var sub(Var a, Var b) {
    shape_eq(a, b, "sub");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return binary(std::move(out), a, b, [](Tape& t, int ai, int bi, const Node& o) {
      t.accumulate(ai, o.grad, +1.0);
      t.accumulate(bi, o.grad, -1.0);
    });
  }

  Var mul(Var a, Var b) {
    shape_eq(a, b, "mul");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return binary(std::move(out), a, b, [ai = a.idx_, bi = b.idx_](Tape& t, int, int, const Node& o) {
      if (t.wants(ai)) {
        Tensor& g = t.nodes_[ai].grad;
        const Tensor& bv = t.nodes_[bi].value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bv[i];
      }
      if (t.wants(bi)) {
        Tensor& g = t.nodes_[bi].grad;
        const Tensor& av = t.nodes_[ai].value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * av[i];
      }
    });
  }

  Var div(Var a, Var b) {
    shape_eq(a, b, "div");
    Tensor out = value(a);
    const Tensor& bv = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
    return binary(std::move(out), a, b, [ai = a.idx_, bi = b.idx_](Tape& t, int, int, const Node& o) {
      const Tensor& bv = t.nodes_[bi].value;
      if (t.wants(ai)) {
        Tensor& g = t.nodes_[ai].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / bv[i];
      }
      if (t.wants(bi)) {
        Tensor& g = t.nodes_[bi].grad;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i] * o.value[i] / bv[i];
      }
    });
  }

  Var add_scalar(Var a, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    return unary(std::move(out), a, [](Tape& t, int ai, const Node& o) {
      t.accumulate(ai, o.grad, +1.0);
    });
  }

  Var mul_scalar(Var a, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return unary(std::move(out), a, [c](Tape& t, int ai, const Node& o) {
      t.accumulate(ai, o.grad, c);
    });
  }

  Var neg(Var a) { return mul_scalar(a, -1.0); }

  // tensor + broadcast scalar
  Var add_bc(Var a, Var s) {
    scalar_only(s, "add_bc");
    Tensor out = value(a);
    const double sv = value(s).item();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sv;
    return binary(std::move(out), a, s, [](Tape& t, int ai, int si, const Node& o) {
      t.accumulate(ai, o.grad, +1.0);
      if (t.wants(si)) t.nodes_[si].grad[0] += o.grad.sum();
    });
  }

  // tensor * broadcast scalar
  Var mul_bc(Var a, Var s) {
    scalar_only(s, "mul_bc");
    Tensor out = value(a);
    const double sv = value(s).item();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
    return binary(std::move(out), a, s, [ai = a.idx_, si = s.idx_](Tape& t, int, int, const Node& o) {
      const double sv = t.nodes_[si].value.item();
      if (t.wants(ai)) t.accumulate(ai, o.grad, sv);
      if (t.wants(si)) {
        const Tensor& av = t.nodes_[ai].value;
        double acc = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) acc += o.grad[i] * av[i];
        t.nodes_[si].grad[0] += acc;
      }
    });
  }

  // tensor / broadcast scalar
  Var div_bc(Var a, Var s) {
    scalar_only(s, "div_bc");
    Tensor out = value(a);
    const double sv = value(s).item();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= sv;
    return binary(std::move(out), a, s, [ai = a.idx_, si = s.idx_](Tape& t, int, int, const Node& o) {
      const double sv = t.nodes_[si].value.item();
      if (t.wants(ai)) t.accumulate(ai, o.grad, 1.0 / sv);
      if (t.wants(si)) {
        double acc = 0.0;
        for (std::size_t i = 0; i < o.grad.size(); ++i) acc += o.grad[i] * o.value[i];
        t.nodes_[si].grad[0] -= acc / sv;
      }
    });
  }

  Var matmul(Var a, Var b) {
    Tensor out = annodist::matmul(value(a), value(b));
    return binary(std::move(out), a, b, [ai = a.idx_, bi = b.idx_](Tape& t, int, int, const Node& o) {
      if (t.wants(ai)) matmul_nt_into(o.grad, t.nodes_[bi].value, t.nodes_[ai].grad, true);
      if (t.wants(bi)) matmul_tn_into(t.nodes_[ai].value, o.grad, t.nodes_[bi].grad, true);
    });
  }

  Var transpose(Var a) {
    return unary(value(a).transposed(), a, [](Tape& t, int ai, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      const Tensor gt = o.grad.transposed();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gt[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
    return unary(std::move(out), a, [](Tape& t, int ai, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.value[i] * (1.0 - o.value[i]);
    });
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return unary(std::move(out), a, [ai = a.idx_](Tape& t, int, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      const Tensor& x = t.nodes_[ai].value;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) g[i] += o.grad[i];
    });
  }

  Var exp(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return unary(std::move(out), a, [](Tape& t, int ai, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.value[i];
    });
  }

  Var log(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return unary(std::move(out), a, [ai = a.idx_](Tape& t, int, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      const Tensor& x = t.nodes_[ai].value;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] / x[i];
    });
  }

  Var sqrt(Var a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
    return unary(std::move(out), a, [](Tape& t, int ai, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * 0.5 / o.value[i];
    });
  }

  Var sum(Var a) {
    Tensor out = Tensor::scalar(value(a).sum());
    return unary(std::move(out), a, [](Tape& t, int ai, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      const double gv = o.grad[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
  }

  Var mean(Var a) {
    const std::size_t n = value(a).size();
    Tensor out = Tensor::scalar(value(a).sum() / static_cast<double>(n));
    return unary(std::move(out), a, [n](Tape& t, int ai, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      const double gv = o.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
  }

  // Population variance: mean(x^2) - mean(x)^2.
  Var variance(Var a) {
    const Tensor& x = value(a);
    const std::size_t n = x.size();
    double m = x.sum() / static_cast<double>(n);
    double m2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) m2 += x[i] * x[i];
    m2 /= static_cast<double>(n);
    Tensor out = Tensor::scalar(m2 - m * m);
    return unary(std::move(out), a, [ai = a.idx_, n, m](Tape& t, int, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      const Tensor& x = t.nodes_[ai].value;
      const double c = 2.0 * o.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) g[i] += c * (x[i] - m);
    });
  }

  // Gradient passes through inside [lo, hi] (inclusive) and is zero outside.
  Var clamp(Var a, double lo, double hi) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = out[i] < lo ? lo : (out[i] > hi ? hi : out[i]);
    return unary(std::move(out), a, [ai = a.idx_, lo, hi](Tape& t, int, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      const Tensor& x = t.nodes_[ai].value;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] >= lo && x[i] <= hi) g[i] += o.grad[i];
    });
  }

  // Softmax over all entries (max-shifted for stability).
  Var softmax(Var a) {
    Tensor out = value(a);
    double mx = out[0];
    for (std::size_t i = 1; i < out.size(); ++i) mx = out[i] > mx ? out[i] : mx;
    double total = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::exp(out[i] - mx);
      total += out[i];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
    return unary(std::move(out), a, [](Tape& t, int ai, const Node& o) {
      Tensor& g = t.nodes_[ai].grad;
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += o.grad[i] * o.value[i];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.value[i] * (o.grad[i] - dot);
    });
  }

  // Stacks scalars / column vectors into one column vector.
  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int total = 0;
    bool needs_grad = false;
    for (const Var& p : parts) {
      if (value(p).cols() != 1) throw std::invalid_argument("concat_rows: parts must be columns");
      total += value(p).rows();
      needs_grad = needs_grad || nodes_[check(p)].requires_grad;
    }
    Tensor out(total, 1);
    std::vector<int> idx;
    std::vector<int> offset;
    idx.reserve(parts.size());
    int at = 0;
    for (const Var& p : parts) {
      const Tensor& pv = value(p);
      for (int r = 0; r < pv.rows(); ++r) out[at + r] = pv[r];
      idx.push_back(p.idx_);
      offset.push_back(at);
      at += pv.rows();
    }
    Node node;
    node.value = std::move(out);
    node.requires_grad = needs_grad;
    if (needs_grad) {
      node.grad = Tensor(total, 1);
      node.pull = [idx = std::move(idx), offset = std::move(offset)](Tape& t) {
        const Node& o = t.nodes_[t.cursor_];
        for (std::size_t p = 0; p < idx.size(); ++p) {
          if (!t.wants(idx[p])) continue;
          Tensor& g = t.nodes_[idx[p]].grad;
          for (std::size_t r = 0; r < g.size(); ++r) g[r] += o.grad[offset[p] + r];
        }
      };
    }
    return push(std::move(node));
  }

  Var concat_rows(std::initializer_list<Var> parts) {
    return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      const double e = std::exp(-x);
      return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Tape&)> pull;
  };

  friend class Var;

  int check(const Var& v) const {
    if (v.tape_ != this || v.idx_ < 0 || v.idx_ >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("Var does not belong to this tape");
    return v.idx_;
  }

  bool wants(int idx) const { return nodes_[idx].requires_grad; }

  void accumulate(int idx, const Tensor& g, double scale) {
    if (!wants(idx)) return;
    Tensor& dst = nodes_[idx].grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * g[i];
  }

  void shape_eq(const Var& a, const Var& b, const char* what) {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string("shape mismatch: ") + what);
  }

  void scalar_only(const Var& s, const char* what) {
    if (!value(s).is_scalar())
      throw std::invalid_argument(std::string(what) + ": broadcast operand must be scalar");
  }

  Var make(Tensor v, bool requires_grad) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad = Tensor(n.value.rows(), n.value.cols());
    return push(std::move(n));
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  template <typename F>
  Var unary(Tensor out, Var a, F&& pull) {
    check(a);
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.idx_].requires_grad;
    if (n.requires_grad) {
      n.grad = Tensor(n.value.rows(), n.value.cols());
      n.pull = [ai = a.idx_, f = std::forward<F>(pull)](Tape& t) {
        f(t, ai, t.nodes_[t.cursor_]);
      };
    }
    return push_with_cursor(std::move(n));
  }

  template <typename F>
  Var binary(Tensor out, Var a, Var b, F&& pull) {
    check(a);
    check(b);
    Node n;
    n.value = std::move(out);
    n.requires_grad = nodes_[a.idx_].requires_grad || nodes_[b.idx_].requires_grad;
    if (n.requires_grad) {
      n.grad = Tensor(n.value.rows(), n.value.cols());
      n.pull = [ai = a.idx_, bi = b.idx_, f = std::forward<F>(pull)](Tape& t) {
        f(t, ai, bi, t.nodes_[t.cursor_]);
      };
    }
    return push_with_cursor(std::move(n));
  }

  Var push_with_cursor(Node n) { return push(std::move(n)); }

  std::vector<Node> nodes_;
  // Index of the node whose pullback is currently running; set by backward().
  int cursor_ = -1;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline const Tensor& Var::grad() const { return tape_->grad(*this); }

}  // namespace annodist::ad
