#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "hug/tensor.hpp"

namespace hug {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& val() const;
};

/// Define-by-run recording tape with reverse-mode differentiation. Nodes are
/// appended in execution order, so inputs always precede their consumers and
/// the backward sweep is a single reverse pass visiting each node once.
class Tape {
 public:
  // Accumulates input gradients given the adjoint and the node's own forward value.
  using BackFn = std::function<void(Tape&, const Tensor& gout, const Tensor& out)>;

  struct Node {
    Tensor value;
    BackFn backward;  // null for leaves
    const char* op;
  };

  int push(Tensor value, BackFn backward, const char* op) {
    if (!value.all_finite())
      throw std::runtime_error(std::string("tape: non-finite result from op '") +
                               op + "'");
    nodes_.push_back(Node{std::move(value), std::move(backward), op});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Var constant(Tensor t) { return Var{this, push(std::move(t), nullptr, "const")}; }

  Var param(Tensor t) {
    Var v = constant(std::move(t));
    nodes_[v.id].op = "param";
    param_ids_.push_back(v.id);
    return v;
  }

  const Tensor& value(int id) const { return nodes_.at(id).value; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<int>& param_ids() const { return param_ids_; }

  /// Reverse sweep from a scalar loss node. Returns one gradient per tape
  /// node (zeros where the loss does not depend on the node); callers usually
  /// index with param ids.
  std::vector<Tensor> backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
    const Tensor& lv = value(loss.id);
    if (lv.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  Tensor::shape_str(lv.shape));
    grads_.assign(nodes_.size(), Tensor{});
    grads_[loss.id] = Tensor::scalar(1.0);
    for (int i = loss.id; i >= 0; --i) {
      if (grads_[i].data.empty()) continue;  // unreachable from the loss
      if (nodes_[i].backward) nodes_[i].backward(*this, grads_[i], nodes_[i].value);
    }
    std::vector<Tensor> out(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      out[i] = grads_[i].data.empty() ? Tensor(nodes_[i].value.shape)
                                      : std::move(grads_[i]);
    grads_.clear();
    return out;
  }

  void accumulate(int id, const Tensor& g) {
    if (grads_[id].data.empty()) {
      grads_[id] = g;
      return;
    }
    for (std::size_t k = 0; k < g.data.size(); ++k) grads_[id].data[k] += g.data[k];
  }

 private:
  std::vector<Node> nodes_;
  std::vector<int> param_ids_;
  std::vector<Tensor> grads_;
};

inline const Tensor& Var::val() const { return tape->value(id); }

namespace ops {

inline void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape)
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
}

inline Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  check_same_shape(a.val(), b.val(), "add");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.val().data[i];
  int ai = a.id, bi = b.id;
  int id = a.tape->push(std::move(out),
                        [ai, bi](Tape& t, const Tensor& g, const Tensor&) {
                          t.accumulate(ai, g);
                          t.accumulate(bi, g);
                        },
                        "add");
  return Var{a.tape, id};
}

inline Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  check_same_shape(a.val(), b.val(), "sub");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.val().data[i];
  int ai = a.id, bi = b.id;
  int id = a.tape->push(std::move(out),
                        [ai, bi](Tape& t, const Tensor& g, const Tensor&) {
                          t.accumulate(ai, g);
                          Tensor ng = g;
                          for (auto& v : ng.data) v = -v;
                          t.accumulate(bi, ng);
                        },
                        "sub");
  return Var{a.tape, id};
}

inline Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  check_same_shape(a.val(), b.val(), "mul");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.val().data[i];
  int ai = a.id, bi = b.id;
  int id = a.tape->push(std::move(out),
                        [ai, bi](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(ai);
                          const Tensor& bv = t.value(bi);
                          Tensor ga = g, gb = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i) {
                            ga.data[i] *= bv.data[i];
                            gb.data[i] *= av.data[i];
                          }
                          t.accumulate(ai, ga);
                          t.accumulate(bi, gb);
                        },
                        "mul");
  return Var{a.tape, id};
}

inline Var div(Var a, Var b) {
  check_same_tape(a, b, "div");
  check_same_shape(a.val(), b.val(), "div");
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] /= b.val().data[i];
  int ai = a.id, bi = b.id;
  int id = a.tape->push(std::move(out),
                        [ai, bi](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(ai);
                          const Tensor& bv = t.value(bi);
                          Tensor ga = g, gb = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i) {
                            ga.data[i] /= bv.data[i];
                            gb.data[i] *= -av.data[i] / (bv.data[i] * bv.data[i]);
                          }
                          t.accumulate(ai, ga);
                          t.accumulate(bi, gb);
                        },
                        "div");
  return Var{a.tape, id};
}

inline Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    throw std::invalid_argument("matmul: incompatible shapes " +
                                Tensor::shape_str(av.shape) + " vs " +
                                Tensor::shape_str(bv.shape));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av.data[i * k + p];
      if (x == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += x * bv.data[p * n + j];
    }
  int ai = a.id, bi = b.id;
  int id = a.tape->push(
      std::move(out),
      [ai, bi, m, k, n](Tape& t, const Tensor& g, const Tensor&) {
        const Tensor& av2 = t.value(ai);
        const Tensor& bv2 = t.value(bi);
        Tensor ga({m, k}), gb({k, n});
        // ga = g @ b^T, gb = a^T @ g
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g.data[i * n + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) {
              ga.data[i * k + p] += gv * bv2.data[p * n + j];
              gb.data[p * n + j] += gv * av2.data[i * k + p];
            }
          }
        t.accumulate(ai, ga);
        t.accumulate(bi, gb);
      },
      "matmul");
  return Var{a.tape, id};
}

inline Var scalar_mul(Var a, double c) {
  Tensor out = a.val();
  for (auto& v : out.data) v *= c;
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai, c](Tape& t, const Tensor& g, const Tensor&) {
                          Tensor ga = g;
                          for (auto& v : ga.data) v *= c;
                          t.accumulate(ai, ga);
                        },
                        "scalar_mul");
  return Var{a.tape, id};
}

inline Var neg(Var a) { return scalar_mul(a, -1.0); }

/// Multiply a tensor by a 1-element tensor node (learnable scalar).
inline Var scale(Var a, Var s) {
  check_same_tape(a, s, "scale");
  if (s.val().size() != 1)
    throw std::invalid_argument("scale: scale factor must be scalar, got " +
                                Tensor::shape_str(s.val().shape));
  const double c = s.val().data[0];
  Tensor out = a.val();
  for (auto& v : out.data) v *= c;
  int ai = a.id, si = s.id;
  int id = a.tape->push(std::move(out),
                        [ai, si, c](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(ai);
                          Tensor ga = g;
                          double gs = 0.0;
                          for (std::size_t i = 0; i < g.data.size(); ++i) {
                            gs += g.data[i] * av.data[i];
                            ga.data[i] *= c;
                          }
                          t.accumulate(ai, ga);
                          t.accumulate(si, Tensor::scalar(gs));
                        },
                        "scale");
  return Var{a.tape, id};
}

inline Var exp(Var a) {
  Tensor out = a.val();
  for (auto& v : out.data) v = std::exp(v);
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai](Tape& t, const Tensor& g, const Tensor& out) {
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] *= out.data[i];
                          t.accumulate(ai, ga);
                        },
                        "exp");
  return Var{a.tape, id};
}

inline Var log(Var a) {
  Tensor out = a.val();
  for (auto& v : out.data) {
    if (v <= 0.0)
      throw std::invalid_argument("log: domain violation, input " + std::to_string(v) +
                                  " is not strictly positive");
    v = std::log(v);
  }
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(ai);
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] /= av.data[i];
                          t.accumulate(ai, ga);
                        },
                        "log");
  return Var{a.tape, id};
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Var sigmoid(Var a) {
  Tensor out = a.val();
  for (auto& v : out.data) v = sigmoid_scalar(v);
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai](Tape& t, const Tensor& g, const Tensor& out) {
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] *= out.data[i] * (1.0 - out.data[i]);
                          t.accumulate(ai, ga);
                        },
                        "sigmoid");
  return Var{a.tape, id};
}

inline Var softplus(Var a) {
  Tensor out = a.val();
  for (auto& v : out.data) v = softplus_scalar(v);
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(ai);
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] *= sigmoid_scalar(av.data[i]);
                          t.accumulate(ai, ga);
                        },
                        "softplus");
  return Var{a.tape, id};
}

inline Var tanh(Var a) {
  Tensor out = a.val();
  for (auto& v : out.data) v = std::tanh(v);
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai](Tape& t, const Tensor& g, const Tensor& out) {
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i)
                            ga.data[i] *= 1.0 - out.data[i] * out.data[i];
                          t.accumulate(ai, ga);
                        },
                        "tanh");
  return Var{a.tape, id};
}

inline Var row_softmax(Var a) {
  const Tensor& av = a.val();
  if (av.rank() != 2)
    throw std::invalid_argument("row_softmax: rank-2 input required, got " +
                                Tensor::shape_str(av.shape));
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = av.data[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av.data[i * n + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out.data[i * n + j] = std::exp(av.data[i * n + j] - mx);
      s += out.data[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] /= s;
  }
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai, m, n](Tape& t, const Tensor& g, const Tensor& y) {
                          Tensor ga({m, n});
                          for (std::size_t i = 0; i < m; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < n; ++j)
                              dot += g.data[i * n + j] * y.data[i * n + j];
                            for (std::size_t j = 0; j < n; ++j)
                              ga.data[i * n + j] =
                                  (g.data[i * n + j] - dot) * y.data[i * n + j];
                          }
                          t.accumulate(ai, ga);
                        },
                        "row_softmax");
  return Var{a.tape, id};
}

inline Var transpose(Var a) {
  const Tensor& av = a.val();
  if (av.rank() != 2)
    throw std::invalid_argument("transpose: rank-2 input required, got " +
                                Tensor::shape_str(av.shape));
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = av.data[i * n + j];
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai, m, n](Tape& t, const Tensor& g, const Tensor&) {
                          Tensor ga({m, n});
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j)
                              ga.data[i * n + j] = g.data[j * m + i];
                          t.accumulate(ai, ga);
                        },
                        "transpose");
  return Var{a.tape, id};
}

/// Concatenates rank-2 tensors along axis 0 (stacking rows) or axis 1.
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Tape* tape = parts[0].tape;
  const std::size_t fixed =
      axis == 0 ? parts[0].val().cols() : parts[0].val().rows();
  std::size_t total = 0;
  for (Var p : parts) {
    check_same_tape(parts[0], p, "concat");
    const Tensor& v = p.val();
    if (v.rank() != 2)
      throw std::invalid_argument("concat: rank-2 inputs required, got " +
                                  Tensor::shape_str(v.shape));
    const std::size_t f = axis == 0 ? v.cols() : v.rows();
    if (f != fixed)
      throw std::invalid_argument("concat: mismatched off-axis extent " +
                                  Tensor::shape_str(v.shape) + " vs " +
                                  Tensor::shape_str(parts[0].val().shape));
    total += axis == 0 ? v.rows() : v.cols();
  }
  const std::size_t m = axis == 0 ? total : fixed;
  const std::size_t n = axis == 0 ? fixed : total;
  Tensor out({m, n});
  std::vector<int> ids;
  std::vector<std::size_t> extents;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.val();
    ids.push_back(p.id);
    if (axis == 0) {
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + off * n);
      extents.push_back(v.rows());
      off += v.rows();
    } else {
      for (std::size_t i = 0; i < m; ++i)
        std::copy(v.data.begin() + i * v.cols(), v.data.begin() + (i + 1) * v.cols(),
                  out.data.begin() + i * n + off);
      extents.push_back(v.cols());
      off += v.cols();
    }
  }
  int id = tape->push(std::move(out),
                      [ids, extents, axis, m, n](Tape& t, const Tensor& g, const Tensor&) {
                        std::size_t off = 0;
                        for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                          const std::size_t e = extents[pi];
                          if (axis == 0) {
                            Tensor gp({e, n});
                            std::copy(g.data.begin() + off * n,
                                      g.data.begin() + (off + e) * n, gp.data.begin());
                            t.accumulate(ids[pi], gp);
                          } else {
                            Tensor gp({m, e});
                            for (std::size_t i = 0; i < m; ++i)
                              std::copy(g.data.begin() + i * n + off,
                                        g.data.begin() + i * n + off + e,
                                        gp.data.begin() + i * e);
                            t.accumulate(ids[pi], gp);
                          }
                          off += e;
                        }
                      },
                      "concat");
  return Var{tape, id};
}

/// Contiguous slice of rows (axis 0) or columns (axis 1) of a rank-2 tensor.
inline Var slice(Var a, int axis, std::size_t start, std::size_t len) {
  const Tensor& av = a.val();
  if (av.rank() != 2)
    throw std::invalid_argument("slice: rank-2 input required, got " +
                                Tensor::shape_str(av.shape));
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  const std::size_t extent = axis == 0 ? av.rows() : av.cols();
  if (start + len > extent)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") exceeds extent " +
                                std::to_string(extent));
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out(axis == 0 ? std::vector<std::size_t>{len, n}
                       : std::vector<std::size_t>{m, len});
  if (axis == 0) {
    std::copy(av.data.begin() + start * n, av.data.begin() + (start + len) * n,
              out.data.begin());
  } else {
    for (std::size_t i = 0; i < m; ++i)
      std::copy(av.data.begin() + i * n + start, av.data.begin() + i * n + start + len,
                out.data.begin() + i * len);
  }
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai, axis, start, len, m, n](Tape& t, const Tensor& g,
                                                     const Tensor&) {
                          Tensor ga({m, n});
                          if (axis == 0) {
                            std::copy(g.data.begin(), g.data.end(),
                                      ga.data.begin() + start * n);
                          } else {
                            for (std::size_t i = 0; i < m; ++i)
                              std::copy(g.data.begin() + i * len,
                                        g.data.begin() + (i + 1) * len,
                                        ga.data.begin() + i * n + start);
                          }
                          t.accumulate(ai, ga);
                        },
                        "slice");
  return Var{a.tape, id};
}

inline Var reshape(Var a, std::vector<std::size_t> shape) {
  const Tensor& av = a.val();
  if (Tensor::numel(shape) != av.size())
    throw std::invalid_argument("reshape: element count mismatch " +
                                Tensor::shape_str(av.shape) + " vs " +
                                Tensor::shape_str(shape));
  Tensor out(shape, av.data);
  int ai = a.id;
  std::vector<std::size_t> orig = av.shape;
  int id = a.tape->push(std::move(out),
                        [ai, orig](Tape& t, const Tensor& g, const Tensor&) {
                          t.accumulate(ai, Tensor(orig, g.data));
                        },
                        "reshape");
  return Var{a.tape, id};
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.val().data) s += v;
  int ai = a.id;
  int id = a.tape->push(Tensor::scalar(s),
                        [ai](Tape& t, const Tensor& g, const Tensor&) {
                          t.accumulate(ai, Tensor::full(t.value(ai).shape, g.data[0]));
                        },
                        "sum");
  return Var{a.tape, id};
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.val().size());
  double s = 0.0;
  for (double v : a.val().data) s += v;
  int ai = a.id;
  int id = a.tape->push(Tensor::scalar(s / n),
                        [ai, n](Tape& t, const Tensor& g, const Tensor&) {
                          t.accumulate(ai, Tensor::full(t.value(ai).shape, g.data[0] / n));
                        },
                        "mean");
  return Var{a.tape, id};
}

/// Sum of squared entries; covers both vector L2 and Frobenius norms.
inline Var sq_norm(Var a) {
  double s = 0.0;
  for (double v : a.val().data) s += v * v;
  int ai = a.id;
  int id = a.tape->push(Tensor::scalar(s),
                        [ai](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(ai);
                          Tensor ga(av.shape);
                          for (std::size_t i = 0; i < av.data.size(); ++i)
                            ga.data[i] = 2.0 * av.data[i] * g.data[0];
                          t.accumulate(ai, ga);
                        },
                        "sq_norm");
  return Var{a.tape, id};
}

/// Broadcast a 1-element node to an arbitrary shape.
inline Var broadcast(Var s, std::vector<std::size_t> shape) {
  if (s.val().size() != 1)
    throw std::invalid_argument("broadcast: source must be scalar, got " +
                                Tensor::shape_str(s.val().shape));
  Tensor out = Tensor::full(shape, s.val().data[0]);
  int si = s.id;
  int id = s.tape->push(std::move(out),
                        [si](Tape& t, const Tensor& g, const Tensor&) {
                          double acc = 0.0;
                          for (double v : g.data) acc += v;
                          t.accumulate(si, Tensor::scalar(acc));
                        },
                        "broadcast");
  return Var{s.tape, id};
}

/// Clamp with zero gradient outside [lo, hi].
inline Var clamp(Var a, double lo, double hi) {
  Tensor out = a.val();
  for (auto& v : out.data) v = std::min(hi, std::max(lo, v));
  int ai = a.id;
  int id = a.tape->push(std::move(out),
                        [ai, lo, hi](Tape& t, const Tensor& g, const Tensor&) {
                          const Tensor& av = t.value(ai);
                          Tensor ga = g;
                          for (std::size_t i = 0; i < g.data.size(); ++i)
                            if (av.data[i] < lo || av.data[i] > hi) ga.data[i] = 0.0;
                          t.accumulate(ai, ga);
                        },
                        "clamp");
  return Var{a.tape, id};
}

}  // namespace ops

/// Max relative error between analytic gradients and central finite
/// differences, over every coordinate of every parameter. `build` must
/// construct the same scalar function on any tape it is given.
inline double grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& build,
    const std::vector<Tensor>& params, double step, double denom_floor = 1e-8) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.param(p));
  Var loss = build(tape, vars);
  auto grads = tape.backward(loss);

  auto eval = [&](const std::vector<Tensor>& p) {
    Tape t;
    std::vector<Var> vs;
    vs.reserve(p.size());
    for (const auto& x : p) vs.push_back(t.param(x));
    double v = build(t, vs).val().item();
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite probe value");
    return v;
  };

  double max_err = 0.0;
  std::vector<Tensor> probe = params;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].data.size(); ++i) {
      const double orig = probe[pi].data[i];
      double fp, fm;
      try {
        probe[pi].data[i] = orig + step;
        fp = eval(probe);
        probe[pi].data[i] = orig - step;
        fm = eval(probe);
      } catch (const std::exception& e) {
        throw std::runtime_error("grad_check: param " + std::to_string(pi) + " coord " +
                                 std::to_string(i) + ": " + e.what());
      }
      probe[pi].data[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = grads[tape.param_ids()[pi]].data[i];
      const double err =
          std::abs(an - fd) / std::max(denom_floor, std::abs(an) + std::abs(fd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace hug
