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

#ifndef DIVEMB_SYNTH_DATA_H_
#define DIVEMB_SYNTH_DATA_H_

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "divemb/matrix.h"
#include "divemb/set_predictor.h"
#include "divemb/tape.h"

namespace divemb {

struct SynthConfig {
  size_t concepts = 32;            // C
  size_t images = 512;             // train + validation images
  size_t test_images = 256;        // held-out images, generated after the rest
  size_t captions_per_image = 4;
  size_t max_concepts = 4;         // M_max
  size_t caption_concepts = 1;     // concepts described by one caption
  double noise_sigma = 0.1;        // per-coordinate region/token noise
  double instance_sigma = 0.5;     // norm scale of the per-image concept offset
  size_t regions = 8;              // N
  size_t tokens = 6;               // L
  size_t raw_dim = 64;             // D_raw
  double concept_cos_cap = 0.3;
  double val_fraction = 0.1;
  uint64_t seed = 1;

  void Validate() const;
};

enum class Split { kTrain, kVal, kTest };
std::string_view ToString(Split split);
Split ParseSplit(std::string_view name);

struct SynthImage {
  uint32_t id = 0;
  Split split = Split::kTrain;
  std::vector<uint32_t> concepts;
  std::vector<uint32_t> captions;
  std::vector<uint32_t> region_concepts;  // concept behind each local row
  Matrix local;        // N x D_raw
  Matrix global_feat;  // 1 x D_raw
};

struct SynthCaption {
  uint32_t id = 0;
  uint32_t image = 0;
  std::vector<uint32_t> concepts;
  std::vector<uint32_t> token_concepts;  // concept behind each local row
  Matrix local;        // L x D_raw
  Matrix global_feat;  // 1 x D_raw
};

// Ids equal positions: images[i].id == i and captions[j].id == j.
struct Corpus {
  SynthConfig config;
  Matrix concept_bank;  // C x D_raw, unit rows
  std::vector<SynthImage> images;
  std::vector<SynthCaption> captions;

  std::vector<uint32_t> ImagesIn(Split split) const;
};

// Unit concept vectors with pairwise cosine below the cap, by rejection.
// Throws ConfigError when the cap cannot be met within the retry budget.
Matrix GenerateConceptBank(size_t count, size_t dim, double cos_cap, std::mt19937_64& rng);

Corpus GenerateCorpus(const SynthConfig& cfg);

// Stable file layout: "DIVC", u32 version, JSON header (config, ids, concept
// and match tables), then DIVM blobs: concept bank, per image local and
// global, per caption local and global.
void WriteCorpus(const std::string& path, const Corpus& corpus);
Corpus ReadCorpus(const std::string& path);

// Per-modality affine maps from D_raw to D.
template <class T>
struct EncoderParamsT {
  T w_local, b_local;    // D_raw x D, 1 x D
  T w_global, b_global;  // D_raw x D, 1 x D

  using Self = EncoderParamsT;
  static constexpr auto Fields() {
    return std::to_array<std::pair<const char*, T Self::*>>({
        {"w_local", &Self::w_local},
        {"b_local", &Self::b_local},
        {"w_global", &Self::w_global},
        {"b_global", &Self::b_global},
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

using EncoderParams = EncoderParamsT<Matrix>;
using EncoderVars = EncoderParamsT<Var>;

EncoderParams InitEncoder(size_t raw_dim, size_t dim, std::mt19937_64& rng);
EncoderParams IdentityEncoder(size_t dim);
EncoderVars BindParams(Tape& tape, const EncoderParams& p);

SampleFeatures Encode(const Matrix& local, const Matrix& global_feat, const EncoderParams& p);

struct EncodedVars {
  Var local;
  Var global_feat;
};
EncodedVars RecordEncode(Var local, Var global_feat, const EncoderVars& p);

}  // namespace divemb

#endif  // DIVEMB_SYNTH_DATA_H_
