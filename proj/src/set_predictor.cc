// Copyright 2026 The divemb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "divemb/set_predictor.h"

#include <cmath>
#include <string>

#include "divemb/error.h"

namespace divemb {

void SetPredictorConfig::Validate() const {
  if (num_slots < 1 || iterations < 1 || dim < 1 || attn_dim < 1 || mlp_hidden < 1) {
    throw ConfigError("set predictor: K, T, D, D_h and MLP width must be >= 1");
  }
  if (use_positional_encoding && dim % 2 != 0) {
    throw ConfigError("set predictor: positional encoding needs an even D");
  }
  if (!(ln_eps > 0.0) || !(attn_eps > 0.0)) {
    throw ConfigError("set predictor: eps values must be > 0");
  }
}

namespace {

Matrix Uniform(std::mt19937_64& rng, size_t rows, size_t cols, double bound) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = u(rng);
  return m;
}

double FanInBound(size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

struct BlockOutput {
  Var slots;
  Var attn;
  Var attn_hat;
};

// Inputs to the block that do not depend on the slots, computed once per
// sample since the blocks share weights.
struct LocalProjections {
  Var keys;
  Var values;
};

LocalProjections ProjectLocals(Tape& tape, const SetPredictorVars& p, Var local,
                               const SetPredictorConfig& cfg) {
  Var normed = LayerNorm(local, p.ln_in_gain, p.ln_in_bias, cfg.ln_eps);
  Var key_input = normed;
  if (cfg.use_positional_encoding) {
    key_input = Add(normed, tape.Constant(SinusoidalPositionalEncoding(local.rows(), cfg.dim)));
  }
  return {MatMul(key_input, p.w_k), MatMul(normed, p.w_v)};
}

BlockOutput RecordBlock(const SetPredictorVars& p, const LocalProjections& proj, Var slots,
                        const SetPredictorConfig& cfg, size_t iteration) {
  Var q = MatMul(LayerNorm(slots, p.ln_slot_gain, p.ln_slot_bias, cfg.ln_eps), p.w_q);
  Var logits = Scale(MatMulNT(proj.keys, q), 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim)));
  // Softmax over slots: every local position distributes unit mass.
  Var attn = Softmax(logits, Axis::kCols);
  Var attn_hat = NormalizeColumns(attn, cfg.attn_eps);
  Var update = MatMul(MatMul(Transpose(attn_hat), proj.values), p.w_o);
  Var pre = cfg.residual_update ? Add(update, slots) : update;
  Var hidden = AddRowBroadcast(
      MatMul(LayerNorm(pre, p.ln_mlp_gain, p.ln_mlp_bias, cfg.ln_eps), p.mlp_w1), p.mlp_b1);
  Var mlp = AddRowBroadcast(MatMul(Gelu(hidden, cfg.gelu), p.mlp_w2), p.mlp_b2);
  Var out = Add(mlp, pre);
  if (!out.value().all_finite()) {
    throw NumericError("set predictor: non-finite slots at iteration " +
                       std::to_string(iteration));
  }
  return {out, attn, attn_hat};
}

Matrix SlotNoise(const SetPredictorConfig& cfg, uint64_t sample_key) {
  std::mt19937_64 rng(sample_key * 0x9e3779b97f4a7c15ULL + 0x5157);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix noise(cfg.num_slots, cfg.dim);
  for (double& v : noise.values()) v = n(rng);
  return noise;
}

Var RecordInitialSlots(Tape& tape, const SetPredictorVars& p, const SetPredictorConfig& cfg,
                       uint64_t sample_key) {
  if (cfg.init_slots == SlotInit::kLearnable) return p.slots_init;
  Var sigma = RepeatRows(Exp(p.slot_log_sigma), cfg.num_slots);
  Var noise = tape.Constant(SlotNoise(cfg, sample_key));
  return Add(RepeatRows(p.slot_mu, cfg.num_slots), Mul(sigma, noise));
}

void CheckFeatures(const Matrix& local, const Matrix& global_feat, const SetPredictorConfig& cfg) {
  if (local.rows() < 1 || local.cols() != cfg.dim) {
    throw ShapeError("set predictor: local features must be N x " + std::to_string(cfg.dim) +
                     ", got " + ShapeString(local));
  }
  if (global_feat.rows() != 1 || global_feat.cols() != cfg.dim) {
    throw ShapeError("set predictor: global feature must be 1 x " + std::to_string(cfg.dim));
  }
}

template <class Bind>
SetPredictorVars BindWith(const SetPredictorParams& p, Bind bind) {
  SetPredictorVars v;
  const auto from = SetPredictorParams::Fields();
  const auto to = SetPredictorVars::Fields();
  for (size_t i = 0; i < from.size(); ++i) v.*(to[i].second) = bind(p.*(from[i].second));
  return v;
}

}  // namespace

SetPredictorParams InitSetPredictor(const SetPredictorConfig& cfg, std::mt19937_64& rng) {
  cfg.Validate();
  const size_t d = cfg.dim, dh = cfg.attn_dim, h = cfg.mlp_hidden, k = cfg.num_slots;
  SetPredictorParams p;
  p.slots_init = Uniform(rng, k, d, FanInBound(d));
  p.slot_mu = Uniform(rng, 1, d, FanInBound(d));
  p.slot_log_sigma = Matrix(1, d, std::log(FanInBound(d)));
  p.ln_in_gain = Matrix(1, d, 1.0);
  p.ln_in_bias = Matrix(1, d);
  p.ln_slot_gain = Matrix(1, d, 1.0);
  p.ln_slot_bias = Matrix(1, d);
  p.w_q = Uniform(rng, d, dh, FanInBound(d));
  p.w_k = Uniform(rng, d, dh, FanInBound(d));
  p.w_v = Uniform(rng, d, dh, FanInBound(d));
  p.w_o = Uniform(rng, dh, d, FanInBound(dh));
  p.ln_mlp_gain = Matrix(1, d, 1.0);
  p.ln_mlp_bias = Matrix(1, d);
  p.mlp_w1 = Uniform(rng, d, h, FanInBound(d));
  p.mlp_b1 = Matrix(1, h);
  p.mlp_w2 = Matrix(h, d);
  p.mlp_b2 = Matrix(1, d);
  p.ln_out_gain = Matrix(1, d, 1.0);
  p.ln_out_bias = Matrix(1, d);
  p.ln_global_gain = Matrix(1, d, 1.0);
  p.ln_global_bias = Matrix(1, d);
  return p;
}

SetPredictorParams ZerosLike(const SetPredictorParams& p) {
  SetPredictorParams z = p;
  z.ForEach([](const char*, Matrix& m) { m.fill(0.0); });
  return z;
}

void CheckShapes(const SetPredictorParams& p, const SetPredictorConfig& cfg) {
  SetPredictorConfig c = cfg;
  std::mt19937_64 rng(0);
  const SetPredictorParams ref = InitSetPredictor(c, rng);
  const auto fields = SetPredictorParams::Fields();
  for (const auto& [name, member] : fields) {
    if (!(p.*member).same_shape(ref.*member)) {
      throw ShapeError(std::string("set predictor parameter '") + name + "' has shape " +
                       ShapeString(p.*member) + ", expected " + ShapeString(ref.*member));
    }
  }
}

Matrix SinusoidalPositionalEncoding(size_t positions, size_t dim) {
  if (dim % 2 != 0) throw ConfigError("positional encoding needs an even dimension");
  Matrix pe(positions, dim);
  for (size_t pos = 0; pos < positions; ++pos) {
    for (size_t i = 0; i < dim / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
      pe(pos, 2 * i) = std::sin(angle);
      pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

SetPredictorVars BindParams(Tape& tape, const SetPredictorParams& p) {
  return BindWith(p, [&](const Matrix& m) { return tape.Ref(m); });
}

SetPredictorVars BindConstParams(Tape& tape, const SetPredictorParams& p) {
  return BindWith(p, [&](const Matrix& m) { return tape.ConstRef(m); });
}

PredictorTrace RecordPredictor(Tape& tape, const SetPredictorVars& params, Var local,
                               Var global_feat, const SetPredictorConfig& cfg,
                               uint64_t sample_key) {
  cfg.Validate();
  CheckFeatures(local.value(), global_feat.value(), cfg);
  PredictorTrace trace;
  const LocalProjections proj = ProjectLocals(tape, params, local, cfg);
  Var slots = RecordInitialSlots(tape, params, cfg, sample_key);
  for (size_t t = 1; t <= cfg.iterations; ++t) {
    BlockOutput block = RecordBlock(params, proj, slots, cfg, t);
    slots = block.slots;
    trace.attn.push_back(block.attn);
    trace.attn_hat.push_back(block.attn_hat);
  }
  trace.slots = slots;
  Var fused = LayerNorm(slots, params.ln_out_gain, params.ln_out_bias, cfg.ln_eps);
  if (cfg.add_global) {
    Var g = LayerNorm(global_feat, params.ln_global_gain, params.ln_global_bias, cfg.ln_eps);
    fused = Add(fused, RepeatRows(g, cfg.num_slots));
  }
  trace.set = fused;
  return trace;
}

Matrix InitialSlots(const SetPredictorParams& p, const SetPredictorConfig& cfg,
                    uint64_t sample_key) {
  Tape tape;
  return RecordInitialSlots(tape, BindConstParams(tape, p), cfg, sample_key).value();
}

SlotState AggBlock(const SampleFeatures& features, const SlotState& state,
                   const SetPredictorParams& params, const SetPredictorConfig& cfg) {
  cfg.Validate();
  CheckFeatures(features.local, features.global_feat, cfg);
  if (state.slots.rows() != cfg.num_slots || state.slots.cols() != cfg.dim) {
    throw ShapeError("agg block: slot state must be K x D, got " + ShapeString(state.slots));
  }
  Tape tape;
  const SetPredictorVars p = BindConstParams(tape, params);
  const LocalProjections proj = ProjectLocals(tape, p, tape.ConstRef(features.local), cfg);
  BlockOutput out = RecordBlock(p, proj, tape.ConstRef(state.slots), cfg, state.iteration + 1);
  return SlotState{out.slots.value(), state.iteration + 1, out.attn.value(),
                   out.attn_hat.value()};
}

SetPrediction PredictSetFull(const SampleFeatures& features, const SetPredictorParams& params,
                             const SetPredictorConfig& cfg, uint64_t sample_key) {
  Tape tape;
  PredictorTrace trace =
      RecordPredictor(tape, BindConstParams(tape, params), tape.ConstRef(features.local),
                      tape.ConstRef(features.global_feat), cfg, sample_key);
  return SetPrediction{EmbeddingSet{trace.set.value()}, trace.slots.value(),
                       trace.attn.back().value()};
}

EmbeddingSet PredictSet(const SampleFeatures& features, const SetPredictorParams& params,
                        const SetPredictorConfig& cfg, uint64_t sample_key) {
  return PredictSetFull(features, params, cfg, sample_key).set;
}

PredictorGradients PredictorBackward(const SampleFeatures& features,
                                     const SetPredictorParams& params,
                                     const SetPredictorConfig& cfg, const Matrix& d_set,
                                     const Matrix* d_slots, uint64_t sample_key) {
  Tape tape;
  const SetPredictorVars p = BindParams(tape, params);
  Var local = tape.Ref(features.local);
  Var global_feat = tape.Ref(features.global_feat);
  PredictorTrace trace = RecordPredictor(tape, p, local, global_feat, cfg, sample_key);
  if (!d_set.same_shape(trace.set.value()) ||
      (d_slots && !d_slots->same_shape(trace.slots.value()))) {
    throw InternalError("predictor backward: upstream adjoint does not match the recording");
  }
  std::vector<std::pair<Var, Matrix>> seeds{{trace.set, d_set}};
  if (d_slots) seeds.emplace_back(trace.slots, *d_slots);
  tape.Backward(seeds);

  PredictorGradients g;
  const auto vars = SetPredictorVars::Fields();
  const auto mats = SetPredictorParams::Fields();
  for (size_t i = 0; i < vars.size(); ++i) g.params.*(mats[i].second) = tape.Grad(p.*(vars[i].second));
  g.d_local = tape.Grad(local);
  g.d_global = tape.Grad(global_feat);
  return g;
}

}  // namespace divemb
