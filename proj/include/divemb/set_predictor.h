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

#ifndef DIVEMB_SET_PREDICTOR_H_
#define DIVEMB_SET_PREDICTOR_H_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "divemb/matrix.h"
#include "divemb/similarity.h"
#include "divemb/tape.h"

namespace divemb {

enum class SlotInit { kLearnable, kRandom };

struct SetPredictorConfig {
  size_t num_slots = 4;    // K
  size_t iterations = 4;   // T
  size_t dim = 64;         // D
  size_t attn_dim = 64;    // D_h
  size_t mlp_hidden = 64;  // hidden width of the slot MLP
  bool use_positional_encoding = false;
  SlotInit init_slots = SlotInit::kLearnable;
  bool add_global = true;
  bool residual_update = true;
  GeluForm gelu = GeluForm::kErf;
  double ln_eps = 1e-5;
  // Smoothing of the per-slot renormalization of the attention map.
  double attn_eps = 1e-8;

  void Validate() const;
};

struct SampleFeatures {
  Matrix local;        // N x D
  Matrix global_feat;  // 1 x D
};

struct SlotState {
  Matrix slots;  // K x D
  size_t iteration = 0;
  Matrix attn;      // N x K, softmax over slots
  Matrix attn_hat;  // N x K, renormalized over positions
};

// Parameters of one set prediction module. Instantiated with Matrix for
// storage and gradients, and with Var for a recording.
template <class T>
struct SetPredictorParamsT {
  T slots_init;      // K x D learnable initial slots
  T slot_mu;         // 1 x D, random-slot mean
  T slot_log_sigma;  // 1 x D, random-slot log std
  T ln_in_gain, ln_in_bias;
  T ln_slot_gain, ln_slot_bias;
  T w_q, w_k, w_v;  // D x D_h
  T w_o;            // D_h x D
  T ln_mlp_gain, ln_mlp_bias;
  T mlp_w1, mlp_b1;  // D x H, 1 x H
  T mlp_w2, mlp_b2;  // H x D, 1 x D
  T ln_out_gain, ln_out_bias;
  T ln_global_gain, ln_global_bias;

  using Self = SetPredictorParamsT;
  static constexpr auto Fields() {
    return std::to_array<std::pair<const char*, T Self::*>>({
        {"slots_init", &Self::slots_init},
        {"slot_mu", &Self::slot_mu},
        {"slot_log_sigma", &Self::slot_log_sigma},
        {"ln_in_gain", &Self::ln_in_gain},
        {"ln_in_bias", &Self::ln_in_bias},
        {"ln_slot_gain", &Self::ln_slot_gain},
        {"ln_slot_bias", &Self::ln_slot_bias},
        {"w_q", &Self::w_q},
        {"w_k", &Self::w_k},
        {"w_v", &Self::w_v},
        {"w_o", &Self::w_o},
        {"ln_mlp_gain", &Self::ln_mlp_gain},
        {"ln_mlp_bias", &Self::ln_mlp_bias},
        {"mlp_w1", &Self::mlp_w1},
        {"mlp_b1", &Self::mlp_b1},
        {"mlp_w2", &Self::mlp_w2},
        {"mlp_b2", &Self::mlp_b2},
        {"ln_out_gain", &Self::ln_out_gain},
        {"ln_out_bias", &Self::ln_out_bias},
        {"ln_global_gain", &Self::ln_global_gain},
        {"ln_global_bias", &Self::ln_global_bias},
    });
  }

  template <class F>
  void ForEach(F&& f) {
    for (const auto& [name, member] : Fields()) f(name, this->*member);
  }
  template <class F>
  void ForEach(F&& f) const {
    for (const auto& [name, member] : Fields()) f(name, this->*member);
  }
};

using SetPredictorParams = SetPredictorParamsT<Matrix>;
using SetPredictorVars = SetPredictorParamsT<Var>;

// Symmetric uniform init scaled by 1/sqrt(fan_in); the MLP output layer is
// zero so that the first updates are close to the residual identity.
SetPredictorParams InitSetPredictor(const SetPredictorConfig& cfg, std::mt19937_64& rng);
SetPredictorParams ZerosLike(const SetPredictorParams& p);
void CheckShapes(const SetPredictorParams& p, const SetPredictorConfig& cfg);

// Interleaved sin/cos encoding, wavelengths 10^4^(2i/D). D must be even.
Matrix SinusoidalPositionalEncoding(size_t positions, size_t dim);

// Binds every parameter as a differentiable alias on `tape`.
SetPredictorVars BindParams(Tape& tape, const SetPredictorParams& p);
// Binds every parameter as a non-differentiable alias.
SetPredictorVars BindConstParams(Tape& tape, const SetPredictorParams& p);

struct PredictorTrace {
  Var set;    // S, K x D
  Var slots;  // E^T, K x D, before fusion
  std::vector<Var> attn;      // A per iteration
  std::vector<Var> attn_hat;  // A-hat per iteration
};

// Records the full set prediction (T shared-weight blocks plus fusion).
// `sample_key` seeds the slot noise when init_slots is kRandom.
PredictorTrace RecordPredictor(Tape& tape, const SetPredictorVars& params, Var local,
                               Var global_feat, const SetPredictorConfig& cfg,
                               uint64_t sample_key = 0);

// Initial slots E^0 as plain values.
Matrix InitialSlots(const SetPredictorParams& p, const SetPredictorConfig& cfg,
                    uint64_t sample_key = 0);

// One aggregation block applied to `state`.
SlotState AggBlock(const SampleFeatures& features, const SlotState& state,
                   const SetPredictorParams& params, const SetPredictorConfig& cfg);

struct SetPrediction {
  EmbeddingSet set;
  Matrix slots;  // E^T
  Matrix attn;   // last A
};

SetPrediction PredictSetFull(const SampleFeatures& features, const SetPredictorParams& params,
                             const SetPredictorConfig& cfg, uint64_t sample_key = 0);
EmbeddingSet PredictSet(const SampleFeatures& features, const SetPredictorParams& params,
                        const SetPredictorConfig& cfg, uint64_t sample_key = 0);

struct PredictorGradients {
  SetPredictorParams params;
  Matrix d_local;
  Matrix d_global;
};

// Records the forward pass and pulls `d_set` (and optionally `d_slots`, the
// adjoint on E^T) back to every parameter and both feature inputs.
PredictorGradients PredictorBackward(const SampleFeatures& features,
                                     const SetPredictorParams& params,
                                     const SetPredictorConfig& cfg, const Matrix& d_set,
                                     const Matrix* d_slots = nullptr,
                                     uint64_t sample_key = 0);

}  // namespace divemb

#endif  // DIVEMB_SET_PREDICTOR_H_
