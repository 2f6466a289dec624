#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "wordlearn/param_set.hpp"
#include "wordlearn/tensor.hpp"

namespace wordlearn {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamically recorded computation tape for reverse-mode gradients.
///
/// Every op appends a node holding its value and a closure that pushes the
/// output gradient back to its inputs. A tape built with record = false
/// keeps values only and serves as the inference path.
///
/// Parameter leaves reference external tensors (no copy) and carry an
/// optional RowMask. gradients() returns full-shape gradients with rows
/// outside the mask set to exactly zero; ops that consume a parameter
/// directly skip computing the masked-out rows.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad, const Tensor& out_value)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value) { return push(std::move(value), false, "constant"); }

  // Leaf whose gradient can be read back with grad(); used by tests.
  Var variable(Tensor value) { return push(std::move(value), record_, "variable"); }

  Var param(const std::string& name, const Tensor& value, const RowMask* mask = nullptr) {
    Node n;
    n.ext = &value;
    n.op = "param";
    n.param_name = name;
    n.is_param = true;
    n.mask = mask;
    n.requires_grad = record_ && !(mask && mask->is_none());
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_.at(v.id());
    return n.ext ? *n.ext : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

  // Row mask of a parameter leaf, or nullptr when all rows are wanted or the
  // node is not a parameter.
  const RowMask* row_mask(Var v) const {
    const Node& n = nodes_.at(v.id());
    return (n.is_param && n.mask && !n.mask->is_all()) ? n.mask : nullptr;
  }

  // Gradient accumulator of a node, zero-initialised on first use.
  Tensor& grad_accumulator(Var v) {
    Node& n = nodes_.at(v.id());
    if (!n.has_grad) {
      n.grad = Tensor(value(v).shape(), Real(0));
      n.has_grad = true;
    }
    return n.grad;
  }

  Var record(Tensor value, const std::vector<Var>& inputs, const char* op, Backward backward) {
    bool needs = false;
    if (record_)
      for (const Var& in : inputs) needs = needs || nodes_.at(in.id()).requires_grad;
    Var out = push(std::move(value), needs, op);
    if (needs) nodes_.back().backward = std::move(backward);
    return out;
  }

  /// Runs the backward pass from a scalar loss. Throws NumericalError when a
  /// non-finite gradient appears.
  void backward(Var loss) {
    if (!record_) throw UsageError("Tape::backward: tape was not recording");
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw UsageError("Tape::backward: loss is not a scalar, shape " + shape_string(lv.shape()));
    if (!std::isfinite(lv[0])) throw NumericalError("Tape::backward: loss is not finite");
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_accumulator(loss)[0] = Real(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      if (!n.grad.all_finite()) {
        throw NumericalError(std::string("Tape::backward: non-finite gradient at op '") + n.op + "'");
      }
      // The closure may add nodes' gradients but never appends nodes.
      Tensor g = std::move(n.grad);
      n.backward(*this, g, n.ext ? *n.ext : n.value);
      n.grad = std::move(g);
    }
  }

  // Gradient of a leaf after backward(); zeros if it received none.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (n.has_grad) return n.grad;
    return Tensor(value(v).shape(), Real(0));
  }

  /// backward(loss), then per-parameter gradients keyed by name. Rows outside
  /// a parameter's mask are exactly zero. Frozen parameters are omitted.
  GradMap gradients(Var loss) {
    backward(loss);
    GradMap out;
    for (const Node& n : nodes_) {
      if (!n.is_param || !n.requires_grad) continue;
      auto it = out.find(n.param_name);
      if (it == out.end()) it = out.emplace(n.param_name, Tensor(n.ext->shape(), Real(0))).first;
      if (!n.has_grad) continue;
      Tensor& g = it->second;
      if (n.mask && !n.mask->is_all()) {
        const std::size_t w = g.cols();
        for (std::size_t r : n.mask->selected())
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += n.grad[r * w + c];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
    }
    for (auto& [name, g] : out)
      if (!g.all_finite()) throw NumericalError("Tape::gradients: NaN in gradient of '" + name + "'");
    return out;
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* ext = nullptr;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_param = false;
    const RowMask* mask = nullptr;
    std::string param_name;
    const char* op = "";
    Backward backward;
  };

  Var push(Tensor value, bool requires_grad, const char* op) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  bool record_;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

namespace ops {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw UsageError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

}  // namespace detail

// a (n x k) * b (k x m)
inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) throw UsageError("matmul: inner dimensions differ");
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  return t.record(std::move(out), {a, b}, "matmul", [a, b](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(a)) tp.grad_accumulator(a).mat().noalias() += g.mat() * b.value().mat().transpose();
    if (tp.requires_grad(b)) tp.grad_accumulator(b).mat().noalias() += a.value().mat().transpose() * g.mat();
  });
}

// a (n x k) * b^T where b is (m x k). Weight matrices are stored output-major,
// so this is the affine-layer product.
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_matrix(av, "matmul_nt");
  detail::require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols()) throw UsageError("matmul_nt: inner dimensions differ");
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  out.mat().noalias() = av.mat() * bv.mat().transpose();
  return t.record(std::move(out), {a, b}, "matmul_nt", [a, b](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(a)) tp.grad_accumulator(a).mat().noalias() += g.mat() * b.value().mat();
    if (!tp.requires_grad(b)) return;
    Tensor& gb = tp.grad_accumulator(b);
    if (const RowMask* mask = tp.row_mask(b)) {
      const auto gm = g.mat();
      const auto am = a.value().mat();
      auto gbm = gb.mat();
      for (std::size_t r : mask->selected()) {
        const auto ri = static_cast<Eigen::Index>(r);
        gbm.row(ri).noalias() += gm.col(ri).transpose() * am;
      }
    } else {
      gb.mat().noalias() += g.mat().transpose() * a.value().mat();
    }
  });
}

inline Var add(Var a, Var b) {
  const Tensor& av = a.value();
  detail::require_same_shape(av, b.value(), "add");
  Tensor out = av;
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape()->record(std::move(out), {a, b}, "add", [a, b](Tape& tp, const Tensor& g, const Tensor&) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      Tensor& gv = tp.grad_accumulator(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  detail::require_same_shape(av, b.value(), "sub");
  Tensor out = av;
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape()->record(std::move(out), {a, b}, "sub", [a, b](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_accumulator(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_accumulator(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape()->record(std::move(out), {a, b}, "mul", [a, b](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_accumulator(a);
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad_accumulator(b);
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, Real s) {
  Tensor out = a.value();
  for (Real& v : out.values()) v *= s;
  return a.tape()->record(std::move(out), {a}, "scale", [a, s](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor& ga = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

// a (n x m) + v broadcast over rows; v has m elements.
inline Var add_rowvec(Var a, Var v) {
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  detail::require_matrix(av, "add_rowvec");
  if (vv.size() != av.cols()) throw UsageError("add_rowvec: bias length does not match columns");
  Tensor out = av;
  out.mat().rowwise() +=
      Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(vv.data(), static_cast<Eigen::Index>(vv.size()));
  return a.tape()->record(std::move(out), {a, v}, "add_rowvec", [a, v](Tape& tp, const Tensor& g, const Tensor&) {
    if (tp.requires_grad(a)) tp.grad_accumulator(a).mat() += g.mat();
    if (!tp.requires_grad(v)) return;
    Tensor& gv = tp.grad_accumulator(v);
    const std::size_t n = g.rows();
    const std::size_t m = g.cols();
    auto column_sum = [&](std::size_t j) {
      Real s = 0;
      for (std::size_t i = 0; i < n; ++i) s += g[i * m + j];
      return s;
    };
    if (const RowMask* mask = tp.row_mask(v)) {
      for (std::size_t j : mask->selected()) gv[j] += column_sum(j);
    } else {
      for (std::size_t j = 0; j < m; ++j) gv[j] += column_sum(j);
    }
  });
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (Real& v : out.values()) v = Real(1) / (Real(1) + std::exp(-v));
  return a.tape()->record(std::move(out), {a}, "sigmoid", [a](Tape& tp, const Tensor& g, const Tensor& y) {
    Tensor& ga = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (Real(1) - y[i]);
  });
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  for (Real& v : out.values()) v = std::tanh(v);
  return a.tape()->record(std::move(out), {a}, "tanh", [a](Tape& tp, const Tensor& g, const Tensor& y) {
    Tensor& ga = tp.grad_accumulator(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (Real(1) - y[i] * y[i]);
  });
}

// Columns [begin, begin + count) of a matrix.
inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  detail::require_matrix(av, "slice_cols");
  if (begin + count > av.cols()) throw UsageError("slice_cols: range out of bounds");
  Tensor out = Tensor::matrix(av.rows(), count);
  out.mat() = av.mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return a.tape()->record(std::move(out), {a}, "slice_cols", [a, begin, count](Tape& tp, const Tensor& g, const Tensor&) {
    tp.grad_accumulator(a).mat().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
        g.mat();
  });
}

// Rows of a table selected by index (embedding lookup). A vector table is
// read as a column, giving an (ids x 1) result.
inline Var gather_rows(Var table, std::vector<std::size_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t width = tv.cols();
  Tensor out = Tensor::matrix(ids.size(), width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw UsageError("gather_rows: index " + std::to_string(ids[i]) + " out of range " + std::to_string(tv.rows()));
    }
    std::copy_n(tv.data() + ids[i] * width, width, out.data() + i * width);
  }
  return table.tape()->record(
      std::move(out), {table}, "gather_rows", [table, ids = std::move(ids), width](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor& gt = tp.grad_accumulator(table);
        const RowMask* mask = tp.row_mask(table);
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (mask && !mask->contains(ids[i])) continue;
          Real* dst = gt.data() + ids[i] * width;
          const Real* src = g.data() + i * width;
          for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
        }
      });
}

// Vertical concatenation of matrices with equal column counts.
inline Var stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("stack_rows: no inputs");
  const std::size_t width = parts.front().value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != width) throw UsageError("stack_rows: column counts differ");
    rows += p.value().rows();
  }
  Tensor out = Tensor::matrix(rows, width);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    std::copy(pv.data(), pv.data() + pv.size(), out.data() + offset);
    offset += pv.size();
  }
  return parts.front().tape()->record(std::move(out), parts, "stack_rows", [parts](Tape& tp, const Tensor& g, const Tensor&) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      const std::size_t n = p.value().size();
      if (tp.requires_grad(p)) {
        Tensor& gp = tp.grad_accumulator(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

inline Var sum(Var a) {
  Real s = 0;
  for (Real v : a.value().values()) s += v;
  return a.tape()->record(Tensor::scalar(s), {a}, "sum", [a](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor& ga = tp.grad_accumulator(a);
    for (Real& v : ga.values()) v += g[0];
  });
}

/// Euclidean norm of the concatenation of the inputs. The subgradient at the
/// origin is taken to be zero.
inline Var l2_norm(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("l2_norm: no inputs");
  Real sq = 0;
  for (const Var& p : parts)
    for (Real v : p.value().values()) sq += v * v;
  return parts.front().tape()->record(
      Tensor::scalar(std::sqrt(sq)), parts, "l2_norm", [parts](Tape& tp, const Tensor& g, const Tensor& y) {
        if (y[0] == Real(0)) return;
        const Real k = g[0] / y[0];
        for (const Var& p : parts) {
          if (!tp.requires_grad(p)) continue;
          Tensor& gp = tp.grad_accumulator(p);
          const Tensor& pv = p.value();
          for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += k * pv[i];
        }
      });
}

enum class Reduction { mean, sum };

/// Softmax cross-entropy over the rows of an (n x V) logit matrix.
/// Rows with mask 0 contribute nothing; mean divides by the number of
/// unmasked rows. Throws when every row is masked.
inline Var softmax_cross_entropy(Var logits, const std::vector<std::size_t>& targets, const std::vector<Real>& mask,
                                 Reduction reduction = Reduction::mean) {
  const Tensor& lv = logits.value();
  detail::require_matrix(lv, "softmax_cross_entropy");
  const std::size_t n = lv.rows();
  const std::size_t v = lv.cols();
  if (targets.size() != n || mask.size() != n) throw UsageError("softmax_cross_entropy: targets/mask length mismatch");
  Real active = 0;
  for (Real m : mask) active += m;
  if (active <= 0) throw DataError("softmax_cross_entropy: every position is masked");
  const Real denom = reduction == Reduction::mean ? active : Real(1);

  auto probs = std::make_shared<Tensor>(Tensor::matrix(n, v));
  Real total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0) continue;
    if (targets[i] >= v) throw UsageError("softmax_cross_entropy: target index out of range");
    const Real* row = lv.data() + i * v;
    Real* p = probs->data() + i * v;
    Real mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    Real z = 0;
    for (std::size_t j = 0; j < v; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    const Real inv = Real(1) / z;
    for (std::size_t j = 0; j < v; ++j) p[j] *= inv;
    total += mask[i] * (mx + std::log(z) - row[targets[i]]);
  }
  if (!std::isfinite(total)) throw NumericalError("softmax_cross_entropy: non-finite loss");
  return logits.tape()->record(
      Tensor::scalar(total / denom), {logits}, "softmax_cross_entropy",
      [logits, targets, mask, probs, denom, v](Tape& tp, const Tensor& g, const Tensor&) {
        Tensor& gl = tp.grad_accumulator(logits);
        const Real k = g[0] / denom;
        for (std::size_t i = 0; i < targets.size(); ++i) {
          if (mask[i] == 0) continue;
          const Real w = k * mask[i];
          const Real* p = probs->data() + i * v;
          Real* d = gl.data() + i * v;
          for (std::size_t j = 0; j < v; ++j) d[j] += w * p[j];
          d[targets[i]] -= w;
        }
      });
}

}  // namespace ops
}  // namespace wordlearn
