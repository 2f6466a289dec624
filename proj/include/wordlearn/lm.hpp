#pragma once

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "wordlearn/autodiff.hpp"
#include "wordlearn/corpus.hpp"
#include "wordlearn/dropout.hpp"
#include "wordlearn/param_set.hpp"
#include "wordlearn/rng.hpp"

namespace wordlearn {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden_size = 1500;
  std::size_t num_layers = 2;
  std::size_t unroll_steps = 35;
  Real p_keep = 0.35;
  Real init_range = 0.04;
  Real clip_norm = 10;

  void validate() const {
    if (vocab_size == 0 || hidden_size == 0 || num_layers == 0 || unroll_steps == 0) {
      throw UsageError("ModelConfig: sizes must be positive");
    }
    if (!(p_keep > 0) || p_keep > 1) throw UsageError("ModelConfig: p_keep must lie in (0, 1]");
    if (!(init_range > 0) || !(clip_norm > 0)) throw UsageError("ModelConfig: init_range and clip_norm must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"hidden_size", c.hidden_size}, {"num_layers", c.num_layers},
                     {"unroll_steps", c.unroll_steps}, {"p_keep", c.p_keep}, {"init_range", c.init_range},
                     {"clip_norm", c.clip_norm}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("hidden_size").get_to(c.hidden_size);
  j.at("num_layers").get_to(c.num_layers);
  j.at("unroll_steps").get_to(c.unroll_steps);
  j.at("p_keep").get_to(c.p_keep);
  j.at("init_range").get_to(c.init_range);
  j.at("clip_norm").get_to(c.clip_norm);
}

// Parameter names. LSTM weights are stored output-major: wx is (4H x in),
// wh is (4H x H), gate blocks in the order input, forget, cell, output.
namespace names {
inline const std::string embedding = "embedding";
inline const std::string softmax_w = "softmax.w";
inline const std::string softmax_b = "softmax.b";
inline std::string lstm_wx(std::size_t l) { return "lstm" + std::to_string(l) + ".wx"; }
inline std::string lstm_wh(std::size_t l) { return "lstm" + std::to_string(l) + ".wh"; }
inline std::string lstm_b(std::size_t l) { return "lstm" + std::to_string(l) + ".b"; }
}  // namespace names

// Parameter names in initialisation (and checkpoint payload) order.
inline std::vector<std::string> parameter_order(const ModelConfig& c) {
  std::vector<std::string> order{names::embedding};
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    order.push_back(names::lstm_wx(l));
    order.push_back(names::lstm_wh(l));
    order.push_back(names::lstm_b(l));
  }
  order.push_back(names::softmax_w);
  order.push_back(names::softmax_b);
  return order;
}

inline Shape parameter_shape(const ModelConfig& c, const std::string& name) {
  const std::size_t h = c.hidden_size;
  if (name == names::embedding || name == names::softmax_w) return {c.vocab_size, h};
  if (name == names::softmax_b) return {c.vocab_size};
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    if (name == names::lstm_wx(l) || name == names::lstm_wh(l)) return {4 * h, h};
    if (name == names::lstm_b(l)) return {4 * h};
  }
  throw UsageError("unknown model parameter '" + name + "'");
}

/// Every weight i.i.d. uniform on [-init_range, init_range], drawn in
/// parameter_order().
inline ParamSet init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ParamSet params;
  for (const auto& name : parameter_order(config)) {
    Tensor t(parameter_shape(config, name));
    for (Real& v : t.values()) v = static_cast<Real>(rng.uniform(-config.init_range, config.init_range));
    params.add(name, std::move(t));
  }
  return params;
}

inline void check_params(const ModelConfig& config, const ParamSet& params) {
  for (const auto& name : parameter_order(config)) {
    if (!params.has(name)) throw DataError("model parameters lack '" + name + "'");
    if (params[name].shape() != parameter_shape(config, name)) {
      throw DataError("parameter '" + name + "' has shape " + shape_string(params[name].shape()));
    }
  }
}

// ---------------------------------------------------------------------------
// Recurrent state

struct LstmState {
  std::vector<Tensor> h;  // per layer, batch x hidden
  std::vector<Tensor> c;

  static LstmState zeros(const ModelConfig& config, std::size_t batch) {
    LstmState s;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      s.h.push_back(Tensor::matrix(batch, config.hidden_size));
      s.c.push_back(Tensor::matrix(batch, config.hidden_size));
    }
    return s;
  }
};

struct LayerVars {
  Var wx, wh, b;
};

struct ModelVars {
  Var embedding;
  std::vector<LayerVars> layers;
  Var softmax_w;
  Var softmax_b;
};

/// Binds the parameters as tape leaves, honouring each parameter's mask.
inline ModelVars bind(Tape& tape, const ParamSet& params, const ModelConfig& config) {
  auto leaf = [&](const std::string& name) { return tape.param(name, params[name], params.mask_ptr(name)); };
  ModelVars v;
  v.embedding = leaf(names::embedding);
  for (std::size_t l = 0; l < config.num_layers; ++l)
    v.layers.push_back({leaf(names::lstm_wx(l)), leaf(names::lstm_wh(l)), leaf(names::lstm_b(l))});
  v.softmax_w = leaf(names::softmax_w);
  v.softmax_b = leaf(names::softmax_b);
  return v;
}

/// One LSTM step on a batch:
///   i, f, o = sigmoid(.), g = tanh(.) of x Wx^T + h Wh^T + b
///   c' = f * c + i * g,  h' = o * tanh(c')
inline std::pair<Var, Var> lstm_cell(Var x, Var h, Var c, const LayerVars& w) {
  const std::size_t hidden = h.value().cols();
  Var gates = ops::add_rowvec(ops::add(ops::matmul_nt(x, w.wx), ops::matmul_nt(h, w.wh)), w.b);
  Var i = ops::sigmoid(ops::slice_cols(gates, 0, hidden));
  Var f = ops::sigmoid(ops::slice_cols(gates, hidden, hidden));
  Var g = ops::tanh(ops::slice_cols(gates, 2 * hidden, hidden));
  Var o = ops::sigmoid(ops::slice_cols(gates, 3 * hidden, hidden));
  Var c_next = ops::add(ops::mul(f, c), ops::mul(i, g));
  Var h_next = ops::mul(o, ops::tanh(c_next));
  return {h_next, c_next};
}

struct ForwardOutput {
  Var logits;  // (steps * batch) x vocab, row t * batch + b
  Var top;     // (steps * batch) x hidden, input to the softmax layer
  LstmState state;
};

/// Unrolled forward pass:
///   embed -> dropout -> layer 1 -> dropout -> ... -> layer L -> dropout -> softmax affine.
/// Dropout touches only the non-recurrent connections; h and c flow between
/// steps undropped. `rng` is required when training with p_keep < 1.
inline ForwardOutput forward(Tape& tape, const ModelVars& vars, const ModelConfig& config, const TokenBlock& inputs,
                             const LstmState& state, bool training, Rng* rng = nullptr) {
  const bool drop = training && config.p_keep < Real(1);
  if (drop && rng == nullptr) throw UsageError("forward: training with dropout needs an Rng");
  for (std::size_t id : inputs.ids)
    if (id >= config.vocab_size) throw UsageError("forward: token index " + std::to_string(id) + " out of range");
  if (state.h.size() != config.num_layers) throw UsageError("forward: state has wrong layer count");

  std::vector<Var> h, c;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    if (state.h[l].rows() != inputs.batch) throw UsageError("forward: state batch does not match input batch");
    h.push_back(tape.constant(state.h[l]));
    c.push_back(tape.constant(state.c[l]));
  }

  std::vector<Var> tops;
  tops.reserve(inputs.steps);
  for (std::size_t t = 0; t < inputs.steps; ++t) {
    std::vector<std::size_t> ids(inputs.ids.begin() + static_cast<std::ptrdiff_t>(t * inputs.batch),
                                 inputs.ids.begin() + static_cast<std::ptrdiff_t>((t + 1) * inputs.batch));
    Var x = ops::gather_rows(vars.embedding, std::move(ids));
    if (drop) x = ops::dropout(x, config.p_keep, *rng, true);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      auto [hn, cn] = lstm_cell(x, h[l], c[l], vars.layers[l]);
      h[l] = hn;
      c[l] = cn;
      x = drop ? ops::dropout(hn, config.p_keep, *rng, true) : hn;
    }
    tops.push_back(x);
  }
  ForwardOutput out;
  out.top = tops.size() == 1 ? tops.front() : ops::stack_rows(tops);
  out.logits = ops::add_rowvec(ops::matmul_nt(out.top, vars.softmax_w), vars.softmax_b);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    out.state.h.push_back(h[l].value());
    out.state.c.push_back(c[l].value());
  }
  return out;
}

/// Inference forward pass on plain tensors. Logits have shape
/// {batch, steps, vocab}.
inline std::pair<Tensor, LstmState> forward_logits(const ParamSet& params, const ModelConfig& config,
                                                   const TokenBlock& inputs, const LstmState& state) {
  Tape tape(false);
  ModelVars vars = bind(tape, params, config);
  ForwardOutput out = forward(tape, vars, config, inputs, state, false);
  const Tensor& flat = out.logits.value();
  const std::size_t v = config.vocab_size;
  Tensor logits(Shape{inputs.batch, inputs.steps, v});
  for (std::size_t t = 0; t < inputs.steps; ++t)
    for (std::size_t b = 0; b < inputs.batch; ++b)
      std::copy_n(flat.data() + (t * inputs.batch + b) * v, v, logits.data() + (b * inputs.steps + t) * v);
  return {std::move(logits), std::move(out.state)};
}

/// Mean over unmasked positions of -log softmax(logits)[target]. Logits are
/// (positions x vocab).
inline Real cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets, const std::vector<Real>& mask) {
  Tape tape(false);
  Var l = tape.constant(logits);
  return ops::softmax_cross_entropy(l, targets, mask).value().item();
}

// ---------------------------------------------------------------------------
// Evaluation

enum class EvalMode { stream, sentence };

struct LossTotal {
  double sum = 0;  // summed negative log-likelihood, nats
  std::size_t count = 0;

  double mean() const { return sum / static_cast<double>(count); }
};

/// One prediction position seen by visit_positions.
struct Position {
  std::span<const Real> logits;  // vocab
  std::span<const Real> top;     // hidden, the softmax layer's input
  std::size_t target = 0;
  std::size_t sentence = 0;  // index of the sentence holding the input token
};

/// Runs the model in inference mode over an evaluation set and calls
/// `visit(const Position&)` for every prediction position, in order.
///
/// Stream mode concatenates the sentences and carries state across them
/// (batch 1, unroll_steps chunks, every position predicted). Sentence mode
/// restarts from a zero state for each sentence and predicts from its
/// second token on.
template <typename Visitor>
void visit_positions(const ParamSet& params, const ModelConfig& config, const std::vector<TokenIds>& sentences,
                     EvalMode mode, Visitor&& visit, std::size_t sentence_batch_size = 32) {
  if (sentences.empty()) throw UsageError("evaluation set is empty");
  const std::size_t v = config.vocab_size;
  const std::size_t hdim = config.hidden_size;

  if (mode == EvalMode::stream) {
    const TokenIds stream = concatenate(sentences);
    if (stream.size() < 2) throw DataError("evaluation stream has no prediction positions");
    std::vector<std::size_t> owner;
    owner.reserve(stream.size());
    for (std::size_t i = 0; i < sentences.size(); ++i) owner.insert(owner.end(), sentences[i].size(), i);
    LstmState state = LstmState::zeros(config, 1);
    for (std::size_t pos = 0; pos + 1 < stream.size(); pos += config.unroll_steps) {
      const std::size_t steps = std::min(config.unroll_steps, stream.size() - 1 - pos);
      TokenBlock in{steps, 1, TokenIds(stream.begin() + static_cast<std::ptrdiff_t>(pos),
                                       stream.begin() + static_cast<std::ptrdiff_t>(pos + steps))};
      Tape tape(false);
      ModelVars vars = bind(tape, params, config);
      ForwardOutput out = forward(tape, vars, config, in, state, false);
      const Tensor& logits = out.logits.value();
      const Tensor& top = out.top.value();
      for (std::size_t t = 0; t < steps; ++t) {
        visit(Position{{logits.data() + t * v, v}, {top.data() + t * hdim, hdim}, stream[pos + t + 1], owner[pos + t]});
      }
      state = std::move(out.state);
    }
    return;
  }

  for (std::size_t start = 0; start < sentences.size(); start += sentence_batch_size) {
    const std::size_t end = std::min(sentences.size(), start + sentence_batch_size);
    std::vector<TokenIds> chunk(sentences.begin() + static_cast<std::ptrdiff_t>(start),
                                sentences.begin() + static_cast<std::ptrdiff_t>(end));
    PaddedBatch pb = sentence_batch(chunk);
    Tape tape(false);
    ModelVars vars = bind(tape, params, config);
    ForwardOutput out = forward(tape, vars, config, pb.inputs, LstmState::zeros(config, pb.inputs.batch), false);
    const Tensor& logits = out.logits.value();
    const Tensor& top = out.top.value();
    const std::size_t batch = pb.inputs.batch;
    // Sentence-major order so positions come out sentence by sentence.
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < pb.lengths[b]; ++t) {
        const std::size_t row = t * batch + b;
        visit(Position{{logits.data() + row * v, v}, {top.data() + row * hdim, hdim}, pb.targets.ids[row], start + b});
      }
    }
  }
}

inline Real log_softmax_at(std::span<const Real> logits, std::size_t index) {
  Real mx = logits[0];
  for (Real x : logits) mx = std::max(mx, x);
  Real z = 0;
  for (Real x : logits) z += std::exp(x - mx);
  return logits[index] - mx - std::log(z);
}

/// Summed cross-entropy without dropout; see visit_positions for the modes.
inline LossTotal evaluate_loss(const ParamSet& params, const ModelConfig& config, const std::vector<TokenIds>& sentences,
                               EvalMode mode) {
  LossTotal total;
  visit_positions(params, config, sentences, mode, [&](const Position& p) {
    total.sum -= log_softmax_at(p.logits, p.target);
    ++total.count;
  });
  return total;
}

/// exp(mean cross-entropy) over the evaluation set.
inline Real perplexity(const ParamSet& params, const ModelConfig& config, const std::vector<TokenIds>& sentences,
                       EvalMode mode) {
  const LossTotal t = evaluate_loss(params, config, sentences, mode);
  if (t.count == 0) throw DataError("perplexity: no prediction positions");
  return static_cast<Real>(std::exp(t.mean()));
}

}  // namespace wordlearn
