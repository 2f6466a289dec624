#pragma once

#include "wordlearn/autodiff.hpp"
#include "wordlearn/rng.hpp"

namespace wordlearn {

inline void check_keep_probability(Real p_keep) {
  if (!(p_keep > 0) || p_keep > 1) throw UsageError("dropout: p_keep must lie in (0, 1]");
}

// Inverted-dropout mask: each entry is 1/p_keep with probability p_keep, else 0.
inline Tensor dropout_mask(const Shape& shape, Real p_keep, Rng& rng) {
  check_keep_probability(p_keep);
  Tensor mask(shape, Real(0));
  const Real kept = Real(1) / p_keep;
  for (Real& v : mask.values()) v = rng.bernoulli(p_keep) ? kept : Real(0);
  return mask;
}

/// Inverted dropout. Identity at inference or when p_keep == 1; in that case
/// the generator is not advanced.
inline Tensor dropout(const Tensor& x, Real p_keep, Rng& rng, bool training) {
  check_keep_probability(p_keep);
  if (!training || p_keep == Real(1)) return x;
  Tensor mask = dropout_mask(x.shape(), p_keep, rng);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] *= x[i];
  return mask;
}

namespace ops {

inline Var dropout(Var x, Real p_keep, Rng& rng, bool training) {
  check_keep_probability(p_keep);
  if (!training || p_keep == Real(1)) return x;
  Var mask = x.tape()->constant(dropout_mask(x.value().shape(), p_keep, rng));
  return mul(x, mask);
}

}  // namespace ops
}  // namespace wordlearn
