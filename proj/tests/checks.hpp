#pragma once

// Checks shared by the unit tests and the acceptance binary.

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "wordlearn/lm.hpp"

namespace wordlearn::testing {

struct GradCheckResult {
  std::size_t checked = 0;  // parameters with |g| above the floor
  std::size_t passed = 0;
  double worst = 0;

  double pass_fraction() const { return checked == 0 ? 0 : static_cast<double>(passed) / static_cast<double>(checked); }
};

// Whole-model analytic gradient of the mean cross-entropy against central
// differences of the same loss, over every scalar parameter. Steps much
// below 1e-4 let double round-off swamp the smaller gradients.
inline GradCheckResult whole_model_gradient_check(std::size_t hidden, std::size_t vocab, std::size_t steps,
                                                  std::size_t batch, std::uint64_t seed, double tol = 1e-4,
                                                  double floor = 1e-8, double step = 1e-4) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.hidden_size = hidden;
  cfg.num_layers = 2;
  cfg.unroll_steps = steps;
  cfg.p_keep = 1;
  cfg.init_range = 0.5;
  Rng rng(seed);
  ParamSet params = init_params(cfg, rng);
  TokenBlock in{steps, batch, {}}, target{steps, batch, {}};
  for (std::size_t i = 0; i < steps * batch; ++i) {
    in.ids.push_back(rng.below(vocab));
    target.ids.push_back(rng.below(vocab));
  }
  const std::vector<Real> mask(steps * batch, Real(1));
  // Forward-only evaluation of the same loss for the differences.
  auto loss_value = [&]() {
    Tape t(false);
    ModelVars v = bind(t, params, cfg);
    ForwardOutput o = forward(t, v, cfg, in, LstmState::zeros(cfg, batch), false);
    return static_cast<double>(ops::softmax_cross_entropy(o.logits, target.ids, mask).value().item());
  };

  Tape tape;
  ModelVars vars = bind(tape, params, cfg);
  ForwardOutput out = forward(tape, vars, cfg, in, LstmState::zeros(cfg, batch), true);
  Var loss = ops::softmax_cross_entropy(out.logits, target.ids, mask);
  GradMap grads = tape.gradients(loss);

  GradCheckResult r;
  for (const auto& name : parameter_order(cfg)) {
    Tensor& p = params[name];
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (std::abs(g[i]) <= floor) continue;
      const double fd = central_difference(loss_value, p[i], step);
      const double err = relative_error(g[i], fd);
      ++r.checked;
      if (err < tol) ++r.passed;
      r.worst = std::max(r.worst, err);
    }
  }
  return r;
}

// Softmax over all logits equal: ln V per position.
inline ParamSet uniform_model(const ModelConfig& cfg) {
  Rng rng(0);
  ParamSet p = init_params(cfg, rng);
  for (const char* name : {"softmax.w", "softmax.b"})
    for (Real& v : p[name].values()) v = 0;
  return p;
}

}  // namespace wordlearn::testing
