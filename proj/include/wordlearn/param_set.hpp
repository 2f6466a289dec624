#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "wordlearn/tensor.hpp"

namespace wordlearn {

/// Row selector over a parameter tensor. A row is one embedding row of a
/// matrix or one element of a vector.
class RowMask {
 public:
  RowMask() = default;

  static RowMask all(std::size_t rows) { return RowMask(rows, true); }
  static RowMask none(std::size_t rows) { return RowMask(rows, false); }
  static RowMask only(std::size_t rows, const std::vector<std::size_t>& selected) {
    RowMask m(rows, false);
    for (std::size_t r : selected) m.set(r, true);
    return m;
  }
  static RowMask all_except(std::size_t rows, const std::vector<std::size_t>& excluded) {
    RowMask m(rows, true);
    for (std::size_t r : excluded) m.set(r, false);
    return m;
  }

  std::size_t rows() const { return flags_.size(); }
  std::size_t count() const { return count_; }
  bool is_all() const { return count_ == flags_.size(); }
  bool is_none() const { return count_ == 0; }
  bool contains(std::size_t r) const { return r < flags_.size() && flags_[r] != 0; }

  void set(std::size_t r, bool on) {
    if (r >= flags_.size()) {
      throw UsageError("RowMask: row " + std::to_string(r) + " out of range " + std::to_string(flags_.size()));
    }
    if (static_cast<bool>(flags_[r]) == on) return;
    flags_[r] = on ? 1 : 0;
    count_ = on ? count_ + 1 : count_ - 1;
  }

  std::vector<std::size_t> selected() const {
    std::vector<std::size_t> out;
    out.reserve(count_);
    for (std::size_t r = 0; r < flags_.size(); ++r)
      if (flags_[r]) out.push_back(r);
    return out;
  }

 private:
  RowMask(std::size_t rows, bool on) : flags_(rows, on ? 1 : 0), count_(on ? rows : 0) {}

  std::vector<unsigned char> flags_;
  std::size_t count_ = 0;
};

using GradMap = std::map<std::string, Tensor>;

/// Named parameters with per-parameter trainable row masks. A parameter
/// without a mask entry is fully trainable.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value) { params_[name] = std::move(value); }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& operator[](const std::string& name) { return get(name); }
  const Tensor& operator[](const std::string& name) const { return get(name); }

  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("ParamSet: unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("ParamSet: unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor>& tensors() const { return params_; }

  void set_mask(const std::string& name, RowMask mask) {
    const Tensor& t = get(name);
    if (mask.rows() != t.rows()) {
      throw UsageError("ParamSet: mask for '" + name + "' has " + std::to_string(mask.rows()) +
                       " rows, parameter has " + std::to_string(t.rows()));
    }
    masks_[name] = std::move(mask);
  }

  void clear_masks() { masks_.clear(); }

  void freeze_all() {
    for (const auto& [name, t] : params_) masks_[name] = RowMask::none(t.rows());
  }

  // Mask for a parameter; an absent entry means all rows trainable.
  RowMask mask(const std::string& name) const {
    auto it = masks_.find(name);
    if (it != masks_.end()) return it->second;
    return RowMask::all(get(name).rows());
  }

  const RowMask* mask_ptr(const std::string& name) const {
    auto it = masks_.find(name);
    return it == masks_.end() ? nullptr : &it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, RowMask> masks_;
};

inline Real global_norm(const GradMap& grads) {
  long double sq = 0;
  for (const auto& [name, g] : grads)
    for (Real v : g.values()) sq += static_cast<long double>(v) * v;
  return static_cast<Real>(std::sqrt(sq));
}

/// Scales every gradient by max_norm / g when the global l2 norm g exceeds
/// max_norm; otherwise returns the gradients unchanged.
inline GradMap clip_global_norm(GradMap grads, Real max_norm) {
  if (!(max_norm > 0)) throw UsageError("clip_global_norm: max_norm must be positive");
  const Real norm = global_norm(grads);
  if (norm <= max_norm) return grads;
  const Real scale = max_norm / norm;
  for (auto& [name, g] : grads)
    for (Real& v : g.values()) v *= scale;
  return grads;
}

/// p <- p - lr * g on trainable rows only. Frozen rows are not touched.
inline void sgd_step(ParamSet& params, const GradMap& grads, Real lr) {
  if (!(lr >= 0)) throw UsageError("sgd_step: learning rate must be non-negative");
  if (lr == 0) {
    for (const auto& [name, g] : grads)
      if (!params.get(name).same_shape(g)) throw UsageError("sgd_step: shape mismatch for '" + name + "'");
    return;
  }
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    if (!p.same_shape(g)) {
      throw UsageError("sgd_step: gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                       ", parameter has " + shape_string(p.shape()));
    }
    const RowMask* mask = params.mask_ptr(name);
    if (mask && mask->is_none()) continue;
    const std::size_t width = p.cols();
    if (!mask || mask->is_all()) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
      continue;
    }
    for (std::size_t r : mask->selected()) {
      Real* pr = p.data() + r * width;
      const Real* gr = g.data() + r * width;
      for (std::size_t c = 0; c < width; ++c) pr[c] -= lr * gr[c];
    }
  }
}

}  // namespace wordlearn
