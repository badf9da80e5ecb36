#pragma once

#include <algorithm>
#include <cassert>
#include <functional>
#include <vector>

#include "scribe/mat.hpp"

namespace scribe {

// Reverse-mode automatic differentiation over Mat values.
//
// A Tape owns the nodes of one forward computation. Operations append nodes
// in topological order, so a single reverse sweep over the node list
// propagates gradients. Nodes that cannot influence any differentiable leaf
// carry no backward closure and cost nothing during the sweep.
//
// Typical use:
//   Tape t;
//   Var w = t.leaf(weights, /*needs_grad=*/true);
//   Var loss = mean_all(mul(w, w));
//   t.backward(loss);
//   Mat g = t.grad(w);

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  int rows() const;
  int cols() const;
  const Mat& val() const;
  double scalar() const;
};

class Tape {
 public:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&)> back;
    bool needs_grad = false;
  };

  Var leaf(Mat v, bool needs_grad = false) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    if (needs_grad) n.grad = Mat(n.val.rows, n.val.cols);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var make(Mat v, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    if (needs_grad) {
      n.grad = Mat(n.val.rows, n.val.cols);
      n.back = std::move(back);
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat& val(Var v) const { return nodes_[v.id].val; }
  Mat& grad(Var v) { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  // Accumulate into a node's gradient if it participates in the sweep.
  void bump(int id, int r, int c, double g) {
    Node& n = nodes_[id];
    if (n.needs_grad) n.grad(r, c) += g;
  }

  void backward(Var loss) {
    assert(loss.tape == this);
    assert(nodes_[loss.id].val.size() == 1);
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].grad.a[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      if (nodes_[i].needs_grad && nodes_[i].back) nodes_[i].back(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

  std::vector<Node> nodes_;
};

inline int Var::rows() const { return tape->val(*this).rows; }
inline int Var::cols() const { return tape->val(*this).cols; }
inline const Mat& Var::val() const { return tape->val(*this); }
inline double Var::scalar() const {
  assert(val().size() == 1);
  return val().a[0];
}

namespace detail {
inline bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs)
    if (v.tape->needs_grad(v)) return true;
  return false;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Op construction helper: passes the output node id into the backward
// closure so gradients can be read off the node being processed.

class OpBuilder {
 public:
  explicit OpBuilder(Tape& t) : t_(t) {}

  // back(tape, output_grad)
  template <typename Back>
  Var emit(Mat out, bool ng, Back&& back) {
    Var v = t_.make(std::move(out), ng, nullptr);
    if (ng) {
      int self = v.id;
      t_.nodes_[self].back = [self, back](Tape& t) { back(t, t.nodes_[self].grad); };
    }
    return v;
  }

  // back(tape, output_grad, output_value) for ops whose derivative is
  // cheapest in terms of their own output (sigmoid, exp, softmax, ...).
  template <typename Back>
  Var emit_self(Mat out, bool ng, Back&& back) {
    Var v = t_.make(std::move(out), ng, nullptr);
    if (ng) {
      int self = v.id;
      t_.nodes_[self].back = [self, back](Tape& t) {
        back(t, t.nodes_[self].grad, t.nodes_[self].val);
      };
    }
    return v;
  }

 private:
  Tape& t_;
};

#define SCRIBE_OP_PREAMBLE(first) \
  Tape& t = *(first).tape;        \
  OpBuilder ob(t);

inline Var add(Var a, Var b) {
  SCRIBE_OP_PREAMBLE(a);
  assert(a.val().same_shape(b.val()));
  Mat out = a.val();
  out.add_inplace(b.val());
  int ai = a.id, bi = b.id;
  return ob.emit(std::move(out), detail::any_grad({a, b}),
                 [ai, bi](Tape& t, const Mat& g) {
                   if (t.nodes_[ai].needs_grad) t.nodes_[ai].grad.add_inplace(g);
                   if (t.nodes_[bi].needs_grad) t.nodes_[bi].grad.add_inplace(g);
                 });
}

inline Var sub(Var a, Var b) {
  SCRIBE_OP_PREAMBLE(a);
  assert(a.val().same_shape(b.val()));
  Mat out = a.val();
  out.add_inplace(b.val(), -1.0);
  int ai = a.id, bi = b.id;
  return ob.emit(std::move(out), detail::any_grad({a, b}),
                 [ai, bi](Tape& t, const Mat& g) {
                   if (t.nodes_[ai].needs_grad) t.nodes_[ai].grad.add_inplace(g);
                   if (t.nodes_[bi].needs_grad) t.nodes_[bi].grad.add_inplace(g, -1.0);
                 });
}

inline Var mul(Var a, Var b) {
  SCRIBE_OP_PREAMBLE(a);
  assert(a.val().same_shape(b.val()));
  Mat out = a.val();
  for (int i = 0; i < out.size(); ++i) out.a[i] *= b.val().a[i];
  int ai = a.id, bi = b.id;
  return ob.emit(std::move(out), detail::any_grad({a, b}),
                 [ai, bi](Tape& t, const Mat& g) {
                   if (t.nodes_[ai].needs_grad) {
                     Mat& ga = t.nodes_[ai].grad;
                     const Mat& bv = t.nodes_[bi].val;
                     for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * bv.a[i];
                   }
                   if (t.nodes_[bi].needs_grad) {
                     Mat& gb = t.nodes_[bi].grad;
                     const Mat& av = t.nodes_[ai].val;
                     for (int i = 0; i < g.size(); ++i) gb.a[i] += g.a[i] * av.a[i];
                   }
                 });
}

inline Var div(Var a, Var b) {
  SCRIBE_OP_PREAMBLE(a);
  assert(a.val().same_shape(b.val()));
  Mat out = a.val();
  for (int i = 0; i < out.size(); ++i) out.a[i] /= b.val().a[i];
  int ai = a.id, bi = b.id;
  return ob.emit(std::move(out), detail::any_grad({a, b}),
                 [ai, bi](Tape& t, const Mat& g) {
                   const Mat& av = t.nodes_[ai].val;
                   const Mat& bv = t.nodes_[bi].val;
                   if (t.nodes_[ai].needs_grad) {
                     Mat& ga = t.nodes_[ai].grad;
                     for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] / bv.a[i];
                   }
                   if (t.nodes_[bi].needs_grad) {
                     Mat& gb = t.nodes_[bi].grad;
                     for (int i = 0; i < g.size(); ++i)
                       gb.a[i] -= g.a[i] * av.a[i] / (bv.a[i] * bv.a[i]);
                   }
                 });
}

inline Var scale(Var a, double s) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  out.scale_inplace(s);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, s](Tape& t, const Mat& g) {
                   t.nodes_[ai].grad.add_inplace(g, s);
                 });
}

inline Var neg(Var a) { return scale(a, -1.0); }

// a * s where s is a 1x1 variable, broadcast over all of a.
inline Var mul_scalar(Var a, Var s) {
  SCRIBE_OP_PREAMBLE(a);
  assert(s.rows() == 1 && s.cols() == 1);
  double sv = s.val()(0, 0);
  Mat out = a.val();
  out.scale_inplace(sv);
  int ai = a.id, si = s.id;
  return ob.emit(std::move(out), detail::any_grad({a, s}),
                 [ai, si](Tape& t, const Mat& g) {
                   double sv = t.nodes_[si].val(0, 0);
                   if (t.nodes_[ai].needs_grad)
                     t.nodes_[ai].grad.add_inplace(g, sv);
                   if (t.nodes_[si].needs_grad) {
                     const Mat& av = t.nodes_[ai].val;
                     double acc = 0.0;
                     for (int i = 0; i < g.size(); ++i) acc += g.a[i] * av.a[i];
                     t.nodes_[si].grad(0, 0) += acc;
                   }
                 });
}

// a + s where s is a 1x1 variable, broadcast over all of a.
inline Var add_scalar(Var a, Var s) {
  SCRIBE_OP_PREAMBLE(a);
  assert(s.rows() == 1 && s.cols() == 1);
  Mat out = a.val();
  double sv = s.val()(0, 0);
  for (int i = 0; i < out.size(); ++i) out.a[i] += sv;
  int ai = a.id, si = s.id;
  return ob.emit(std::move(out), detail::any_grad({a, s}),
                 [ai, si](Tape& t, const Mat& g) {
                   if (t.nodes_[ai].needs_grad) t.nodes_[ai].grad.add_inplace(g);
                   if (t.nodes_[si].needs_grad) {
                     double acc = 0.0;
                     for (int i = 0; i < g.size(); ++i) acc += g.a[i];
                     t.nodes_[si].grad(0, 0) += acc;
                   }
                 });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = matmul(a.val(), b.val());
  int ai = a.id, bi = b.id;
  return ob.emit(std::move(out), detail::any_grad({a, b}),
                 [ai, bi](Tape& t, const Mat& g) {
                   if (t.nodes_[ai].needs_grad)
                     t.nodes_[ai].grad.add_inplace(matmul(g, transposed(t.nodes_[bi].val)));
                   if (t.nodes_[bi].needs_grad)
                     t.nodes_[bi].grad.add_inplace(matmul(transposed(t.nodes_[ai].val), g));
                 });
}

inline Var transpose(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  int ai = a.id;
  return ob.emit(transposed(a.val()), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   t.nodes_[ai].grad.add_inplace(transposed(g));
                 });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Var reshape(Var a, int r, int c) {
  SCRIBE_OP_PREAMBLE(a);
  assert(r * c == a.val().size());
  Mat out = a.val();
  out.rows = r;
  out.cols = c;
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i];
                 });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  assert(!parts.empty());
  SCRIBE_OP_PREAMBLE(parts[0]);
  int rows = parts[0].rows();
  int cols = 0;
  bool ng = false;
  for (const Var& p : parts) {
    assert(p.rows() == rows);
    cols += p.cols();
    ng = ng || t.needs_grad(p);
  }
  Mat out(rows, cols);
  int off = 0;
  std::vector<int> ids;
  std::vector<int> offs;
  for (const Var& p : parts) {
    ids.push_back(p.id);
    offs.push_back(off);
    const Mat& pv = p.val();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < pv.cols; ++c) out(r, off + c) = pv(r, c);
    off += pv.cols;
  }
  return ob.emit(std::move(out), ng, [ids, offs](Tape& t, const Mat& g) {
    for (size_t k = 0; k < ids.size(); ++k) {
      Tape::Node& n = t.nodes_[ids[k]];
      if (!n.needs_grad) continue;
      for (int r = 0; r < n.val.rows; ++r)
        for (int c = 0; c < n.val.cols; ++c) n.grad(r, c) += g(r, offs[k] + c);
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  assert(!parts.empty());
  SCRIBE_OP_PREAMBLE(parts[0]);
  int cols = parts[0].cols();
  int rows = 0;
  bool ng = false;
  for (const Var& p : parts) {
    assert(p.cols() == cols);
    rows += p.rows();
    ng = ng || t.needs_grad(p);
  }
  Mat out(rows, cols);
  int off = 0;
  std::vector<int> ids, offs;
  for (const Var& p : parts) {
    ids.push_back(p.id);
    offs.push_back(off);
    const Mat& pv = p.val();
    for (int r = 0; r < pv.rows; ++r)
      for (int c = 0; c < cols; ++c) out(off + r, c) = pv(r, c);
    off += pv.rows;
  }
  return ob.emit(std::move(out), ng, [ids, offs](Tape& t, const Mat& g) {
    for (size_t k = 0; k < ids.size(); ++k) {
      Tape::Node& n = t.nodes_[ids[k]];
      if (!n.needs_grad) continue;
      for (int r = 0; r < n.val.rows; ++r)
        for (int c = 0; c < n.val.cols; ++c) n.grad(r, c) += g(offs[k] + r, c);
    }
  });
}

inline Var slice_cols(Var a, int c0, int n) {
  SCRIBE_OP_PREAMBLE(a);
  assert(c0 >= 0 && c0 + n <= a.cols());
  Mat out(a.rows(), n);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < n; ++c) out(r, c) = a.val()(r, c0 + c);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, c0](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int r = 0; r < g.rows; ++r)
                     for (int c = 0; c < g.cols; ++c) ga(r, c0 + c) += g(r, c);
                 });
}

inline Var slice_rows(Var a, int r0, int n) {
  SCRIBE_OP_PREAMBLE(a);
  assert(r0 >= 0 && r0 + n <= a.rows());
  Mat out(n, a.cols());
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < out.cols; ++c) out(r, c) = a.val()(r0 + r, c);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, r0](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int r = 0; r < g.rows; ++r)
                     for (int c = 0; c < g.cols; ++c) ga(r0 + r, c) += g(r, c);
                 });
}

inline Var row_of(Var a, int r) { return slice_rows(a, r, 1); }

// Embedding-style lookup; duplicate indices accumulate in the backward pass.
inline Var gather_rows(Var a, std::vector<int> idx) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out(static_cast<int>(idx.size()), a.cols());
  for (size_t k = 0; k < idx.size(); ++k) {
    assert(idx[k] >= 0 && idx[k] < a.rows());
    for (int c = 0; c < out.cols; ++c)
      out(static_cast<int>(k), c) = a.val()(idx[k], c);
  }
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, idx = std::move(idx)](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (size_t k = 0; k < idx.size(); ++k)
                     for (int c = 0; c < g.cols; ++c)
                       ga(idx[k], c) += g(static_cast<int>(k), c);
                 });
}

// Sliding windows of `w` consecutive rows, flattened per window.
// (L x d) -> (L-w+1 x w*d). Requires L >= w.
inline Var unfold_rows(Var a, int w) {
  SCRIBE_OP_PREAMBLE(a);
  int L = a.rows(), d = a.cols();
  assert(L >= w && w >= 1);
  Mat out(L - w + 1, w * d);
  for (int p = 0; p + w <= L; ++p)
    for (int k = 0; k < w; ++k)
      for (int c = 0; c < d; ++c) out(p, k * d + c) = a.val()(p + k, c);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, w, d](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int p = 0; p < g.rows; ++p)
                     for (int k = 0; k < w; ++k)
                       for (int c = 0; c < d; ++c)
                         ga(p + k, c) += g(p, k * d + c);
                 });
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var sigmoid(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = 1.0 / (1.0 + std::exp(-x));
  int ai = a.id;
  return ob.emit_self(std::move(out), t.needs_grad(a),
                      [ai](Tape& t, const Mat& g, const Mat& y) {
                        Mat& ga = t.nodes_[ai].grad;
                        for (int i = 0; i < g.size(); ++i)
                          ga.a[i] += g.a[i] * y.a[i] * (1.0 - y.a[i]);
                      });
}

inline Var tanh(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = std::tanh(x);
  int ai = a.id;
  return ob.emit_self(std::move(out), t.needs_grad(a),
                      [ai](Tape& t, const Mat& g, const Mat& y) {
                        Mat& ga = t.nodes_[ai].grad;
                        for (int i = 0; i < g.size(); ++i)
                          ga.a[i] += g.a[i] * (1.0 - y.a[i] * y.a[i]);
                      });
}

inline Var relu(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = std::max(0.0, x);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   const Mat& xv = t.nodes_[ai].val;
                   Mat& ga = t.nodes_[ai].grad;
                   for (int i = 0; i < g.size(); ++i)
                     if (xv.a[i] > 0.0) ga.a[i] += g.a[i];
                 });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = x > 0.0 ? x : slope * x;
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, slope](Tape& t, const Mat& g) {
                   const Mat& xv = t.nodes_[ai].val;
                   Mat& ga = t.nodes_[ai].grad;
                   for (int i = 0; i < g.size(); ++i)
                     ga.a[i] += g.a[i] * (xv.a[i] > 0.0 ? 1.0 : slope);
                 });
}

inline Var exp(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = std::exp(x);
  int ai = a.id;
  return ob.emit_self(std::move(out), t.needs_grad(a),
                      [ai](Tape& t, const Mat& g, const Mat& y) {
                        Mat& ga = t.nodes_[ai].grad;
                        for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] * y.a[i];
                      });
}

inline Var log(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = std::log(x);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   const Mat& xv = t.nodes_[ai].val;
                   Mat& ga = t.nodes_[ai].grad;
                   for (int i = 0; i < g.size(); ++i) ga.a[i] += g.a[i] / xv.a[i];
                 });
}

inline Var sqrt(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = std::sqrt(x);
  int ai = a.id;
  return ob.emit_self(std::move(out), t.needs_grad(a),
                      [ai](Tape& t, const Mat& g, const Mat& y) {
                        Mat& ga = t.nodes_[ai].grad;
                        for (int i = 0; i < g.size(); ++i)
                          ga.a[i] += g.a[i] * 0.5 / y.a[i];
                      });
}

// log(1 + exp(x)), computed without overflow.
inline Var softplus(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (auto& x : out.a) x = x > 30.0 ? x : std::log1p(std::exp(x));
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   const Mat& xv = t.nodes_[ai].val;
                   Mat& ga = t.nodes_[ai].grad;
                   for (int i = 0; i < g.size(); ++i)
                     ga.a[i] += g.a[i] / (1.0 + std::exp(-xv.a[i]));
                 });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family

inline Var softmax_rows(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (int r = 0; r < out.rows; ++r) {
    double mx = out(r, 0);
    for (int c = 1; c < out.cols; ++c) mx = std::max(mx, out(r, c));
    double sum = 0.0;
    for (int c = 0; c < out.cols; ++c) {
      out(r, c) = std::exp(out(r, c) - mx);
      sum += out(r, c);
    }
    for (int c = 0; c < out.cols; ++c) out(r, c) /= sum;
  }
  int ai = a.id;
  return ob.emit_self(std::move(out), t.needs_grad(a),
                      [ai](Tape& t, const Mat& g, const Mat& y) {
                        Mat& ga = t.nodes_[ai].grad;
                        for (int r = 0; r < y.rows; ++r) {
                          double dotgy = 0.0;
                          for (int c = 0; c < y.cols; ++c) dotgy += g(r, c) * y(r, c);
                          for (int c = 0; c < y.cols; ++c)
                            ga(r, c) += y(r, c) * (g(r, c) - dotgy);
                        }
                      });
}

inline Var log_softmax_rows(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out = a.val();
  for (int r = 0; r < out.rows; ++r) {
    double mx = out(r, 0);
    for (int c = 1; c < out.cols; ++c) mx = std::max(mx, out(r, c));
    double sum = 0.0;
    for (int c = 0; c < out.cols; ++c) sum += std::exp(out(r, c) - mx);
    double lse = mx + std::log(sum);
    for (int c = 0; c < out.cols; ++c) out(r, c) -= lse;
  }
  int ai = a.id;
  return ob.emit_self(std::move(out), t.needs_grad(a),
                      [ai](Tape& t, const Mat& g, const Mat& y) {
                        // y holds log-probabilities.
                        Mat& ga = t.nodes_[ai].grad;
                        for (int r = 0; r < y.rows; ++r) {
                          double gsum = 0.0;
                          for (int c = 0; c < y.cols; ++c) gsum += g(r, c);
                          for (int c = 0; c < y.cols; ++c)
                            ga(r, c) += g(r, c) - std::exp(y(r, c)) * gsum;
                        }
                      });
}

// ---------------------------------------------------------------------------
// Reductions and selections

inline Var sum_all(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  double s = 0.0;
  for (double x : a.val().a) s += x;
  Mat out(1, 1);
  out.a[0] = s;
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (auto& x : ga.a) x += g.a[0];
                 });
}

inline Var mean_all(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  double s = 0.0;
  for (double x : a.val().a) s += x;
  int n = a.val().size();
  Mat out(1, 1);
  out.a[0] = s / n;
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, n](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (auto& x : ga.a) x += g.a[0] / n;
                 });
}

// Sum over rows -> 1 x cols.
inline Var col_sum(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out(1, a.cols());
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out(0, c) += a.val()(r, c);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int r = 0; r < ga.rows; ++r)
                     for (int c = 0; c < ga.cols; ++c) ga(r, c) += g(0, c);
                 });
}

// Sum over cols -> rows x 1.
inline Var row_sum(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out(a.rows(), 1);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out(r, 0) += a.val()(r, c);
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int r = 0; r < ga.rows; ++r)
                     for (int c = 0; c < ga.cols; ++c) ga(r, c) += g(r, 0);
                 });
}

// out[r] = a(r, idx[r]); the usual companion of log_softmax for NLL losses.
inline Var pick(Var a, std::vector<int> idx) {
  SCRIBE_OP_PREAMBLE(a);
  assert(static_cast<int>(idx.size()) == a.rows());
  Mat out(a.rows(), 1);
  for (int r = 0; r < a.rows(); ++r) {
    assert(idx[r] >= 0 && idx[r] < a.cols());
    out(r, 0) = a.val()(r, idx[r]);
  }
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, idx = std::move(idx)](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int r = 0; r < g.rows; ++r) ga(r, idx[r]) += g(r, 0);
                 });
}

// Column-wise max over rows -> 1 x cols. Ties route the gradient to the
// first maximal row.
inline Var col_max(Var a) {
  SCRIBE_OP_PREAMBLE(a);
  Mat out(1, a.cols());
  std::vector<int> arg(static_cast<size_t>(a.cols()), 0);
  for (int c = 0; c < a.cols(); ++c) {
    double best = a.val()(0, c);
    for (int r = 1; r < a.rows(); ++r) {
      if (a.val()(r, c) > best) {
        best = a.val()(r, c);
        arg[c] = r;
      }
    }
    out(0, c) = best;
  }
  int ai = a.id;
  return ob.emit(std::move(out), t.needs_grad(a),
                 [ai, arg = std::move(arg)](Tape& t, const Mat& g) {
                   Mat& ga = t.nodes_[ai].grad;
                   for (int c = 0; c < g.cols; ++c) ga(arg[c], c) += g(0, c);
                 });
}

// ---------------------------------------------------------------------------
// Broadcasting and normalization

// Add a 1 x cols row vector to every row.
inline Var add_rowvec(Var a, Var rv) {
  SCRIBE_OP_PREAMBLE(a);
  assert(rv.rows() == 1 && rv.cols() == a.cols());
  Mat out = a.val();
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out(r, c) += rv.val()(0, c);
  int ai = a.id, bi = rv.id;
  return ob.emit(std::move(out), detail::any_grad({a, rv}),
                 [ai, bi](Tape& t, const Mat& g) {
                   if (t.nodes_[ai].needs_grad) t.nodes_[ai].grad.add_inplace(g);
                   if (t.nodes_[bi].needs_grad) {
                     Mat& gb = t.nodes_[bi].grad;
                     for (int r = 0; r < g.rows; ++r)
                       for (int c = 0; c < g.cols; ++c) gb(0, c) += g(r, c);
                   }
                 });
}

// Row-wise layer normalization with learnable gain/bias (both 1 x cols).
inline Var layer_norm_rows(Var a, Var gain, Var bias, double eps = 1e-5) {
  SCRIBE_OP_PREAMBLE(a);
  int R = a.rows(), C = a.cols();
  assert(gain.rows() == 1 && gain.cols() == C);
  assert(bias.rows() == 1 && bias.cols() == C);
  Mat xhat(R, C);
  std::vector<double> inv_std(static_cast<size_t>(R));
  const Mat& x = a.val();
  for (int r = 0; r < R; ++r) {
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += x(r, c);
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= C;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    for (int c = 0; c < C; ++c) xhat(r, c) = (x(r, c) - mu) * is;
  }
  Mat out(R, C);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      out(r, c) = xhat(r, c) * gain.val()(0, c) + bias.val()(0, c);
  int ai = a.id, gi = gain.id, bi = bias.id;
  return ob.emit(
      std::move(out), detail::any_grad({a, gain, bias}),
      [ai, gi, bi, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, const Mat& g) {
        int R = g.rows, C = g.cols;
        const Mat& gainv = t.nodes_[gi].val;
        if (t.nodes_[gi].needs_grad) {
          Mat& gg = t.nodes_[gi].grad;
          for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) gg(0, c) += g(r, c) * xhat(r, c);
        }
        if (t.nodes_[bi].needs_grad) {
          Mat& gb = t.nodes_[bi].grad;
          for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) gb(0, c) += g(r, c);
        }
        if (t.nodes_[ai].needs_grad) {
          Mat& ga = t.nodes_[ai].grad;
          for (int r = 0; r < R; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (int c = 0; c < C; ++c) {
              double gy = g(r, c) * gainv(0, c);
              m1 += gy;
              m2 += gy * xhat(r, c);
            }
            m1 /= C;
            m2 /= C;
            for (int c = 0; c < C; ++c) {
              double gy = g(r, c) * gainv(0, c);
              ga(r, c) += (gy - m1 - xhat(r, c) * m2) * inv_std[static_cast<size_t>(r)];
            }
          }
        }
      });
}

// Row-wise cosine similarity -> rows x 1. Rows where either side has
// (near-)zero norm contribute 0 with zero gradient.
inline Var cosine_rows(Var a, Var b) {
  SCRIBE_OP_PREAMBLE(a);
  assert(a.val().same_shape(b.val()));
  int R = a.rows(), C = a.cols();
  Mat out(R, 1);
  constexpr double kTiny = 1e-12;
  const Mat& av = a.val();
  const Mat& bv = b.val();
  for (int r = 0; r < R; ++r) {
    double na = 0.0, nb = 0.0, d = 0.0;
    for (int c = 0; c < C; ++c) {
      na += av(r, c) * av(r, c);
      nb += bv(r, c) * bv(r, c);
      d += av(r, c) * bv(r, c);
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    out(r, 0) = (na < kTiny || nb < kTiny) ? 0.0 : d / (na * nb);
  }
  int ai = a.id, bi = b.id;
  return ob.emit(std::move(out), detail::any_grad({a, b}),
                 [ai, bi](Tape& t, const Mat& g) {
                   const Mat& av = t.nodes_[ai].val;
                   const Mat& bv = t.nodes_[bi].val;
                   int R = av.rows, C = av.cols;
                   for (int r = 0; r < R; ++r) {
                     double na = 0.0, nb = 0.0, d = 0.0;
                     for (int c = 0; c < C; ++c) {
                       na += av(r, c) * av(r, c);
                       nb += bv(r, c) * bv(r, c);
                       d += av(r, c) * bv(r, c);
                     }
                     na = std::sqrt(na);
                     nb = std::sqrt(nb);
                     if (na < 1e-12 || nb < 1e-12) continue;
                     double cosv = d / (na * nb);
                     double gr = g(r, 0);
                     if (t.nodes_[ai].needs_grad) {
                       Mat& ga = t.nodes_[ai].grad;
                       for (int c = 0; c < C; ++c)
                         ga(r, c) += gr * (bv(r, c) / (na * nb) -
                                           cosv * av(r, c) / (na * na));
                     }
                     if (t.nodes_[bi].needs_grad) {
                       Mat& gb = t.nodes_[bi].grad;
                       for (int c = 0; c < C; ++c)
                         gb(r, c) += gr * (av(r, c) / (na * nb) -
                                           cosv * bv(r, c) / (nb * nb));
                     }
                   }
                 });
}

#undef SCRIBE_OP_PREAMBLE

}  // namespace scribe
