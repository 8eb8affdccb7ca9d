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

#ifndef DIVEMB_MODEL_H_
#define DIVEMB_MODEL_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "divemb/matrix.h"
#include "divemb/set_predictor.h"
#include "divemb/similarity.h"
#include "divemb/synth_data.h"

namespace divemb {

enum class Modality { kVisual, kText };
std::string_view ToString(Modality m);

// Both modality branches: encoder followed by a set predictor. `mp_ab` holds
// the learnable affine map of match-probability scoring.
struct Model {
  SetPredictorConfig predictor;
  size_t raw_dim = 0;
  EncoderParams visual_encoder, text_encoder;
  SetPredictorParams visual, text;
  Matrix mp_ab;  // 1 x 2: [a, b]

  template <class F>
  void ForEachParam(F&& f) {
    visual_encoder.ForEach([&](const char* n, Matrix& m) { f("visual_encoder." + std::string(n), m); });
    text_encoder.ForEach([&](const char* n, Matrix& m) { f("text_encoder." + std::string(n), m); });
    visual.ForEach([&](const char* n, Matrix& m) { f("visual." + std::string(n), m); });
    text.ForEach([&](const char* n, Matrix& m) { f("text." + std::string(n), m); });
    f(std::string("mp_ab"), mp_ab);
  }
  template <class F>
  void ForEachParam(F&& f) const {
    const_cast<Model*>(this)->ForEachParam(
        [&](const std::string& n, Matrix& m) { f(n, static_cast<const Matrix&>(m)); });
  }

  size_t ParamCount() const;
};

Model InitModel(const SetPredictorConfig& predictor, size_t raw_dim, const SimilarityConfig& sim,
                uint64_t seed);
// Same shapes, all zeros.
Model ZerosLike(const Model& m);
void RoundToFloat(Model& m);

// Similarity config with the model's learned MP parameters filled in.
SimilarityConfig ModelSimilarity(const Model& m, SimilarityConfig sim);

// Per-sample key for random slot initialization.
uint64_t SampleKey(Modality modality, uint32_t id, uint64_t salt = 0);

SetPrediction EmbedSample(const Model& m, Modality modality, const Matrix& local,
                          const Matrix& global_feat, uint64_t key);
std::vector<EmbeddingSet> EmbedImages(const Model& m, const Corpus& corpus,
                                      std::span<const uint32_t> ids, size_t workers = 1);
std::vector<EmbeddingSet> EmbedCaptions(const Model& m, const Corpus& corpus,
                                        std::span<const uint32_t> ids, size_t workers = 1);

struct NamedTensor {
  std::string name;
  Matrix value;
};

// "DIVP": magic, u32 version, run config JSON, u32 tensor count, then per
// tensor a name, u32 rows, u32 cols and the f32 payload. Model tensors come
// first; `extra` (optimizer state) follows.
void WriteCheckpoint(const std::string& path, const std::string& config_json, const Model& m,
                     std::span<const NamedTensor> extra = {});

struct LoadedCheckpoint {
  std::string config_json;
  Model model;
  std::vector<NamedTensor> extra;
};
LoadedCheckpoint ReadCheckpoint(const std::string& path);

}  // namespace divemb

#endif  // DIVEMB_MODEL_H_
