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

#include "divemb/model.h"

#include <cstdio>
#include <fstream>
#include <map>

#include "divemb/binary_io.h"
#include "divemb/config.h"
#include "divemb/error.h"
#include "divemb/parallel.h"

namespace divemb {

std::string_view ToString(Modality m) { return m == Modality::kVisual ? "visual" : "text"; }

size_t Model::ParamCount() const {
  size_t n = 0;
  ForEachParam([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

Model InitModel(const SetPredictorConfig& predictor, size_t raw_dim, const SimilarityConfig& sim,
                uint64_t seed) {
  predictor.Validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.predictor = predictor;
  m.raw_dim = raw_dim;
  m.visual_encoder = InitEncoder(raw_dim, predictor.dim, rng);
  m.text_encoder = InitEncoder(raw_dim, predictor.dim, rng);
  m.visual = InitSetPredictor(predictor, rng);
  m.text = InitSetPredictor(predictor, rng);
  m.mp_ab = Matrix{{sim.mp_a, sim.mp_b}};
  return m;
}

Model ZerosLike(const Model& m) {
  Model z = m;
  z.ForEachParam([](const std::string&, Matrix& p) { p.fill(0.0); });
  return z;
}

void RoundToFloat(Model& m) {
  m.ForEachParam([](const std::string&, Matrix& p) { p.round_to_float(); });
}

SimilarityConfig ModelSimilarity(const Model& m, SimilarityConfig sim) {
  if (sim.kind == SimilarityKind::kMp && m.mp_ab.size() == 2) {
    sim.mp_a = m.mp_ab[0];
    sim.mp_b = m.mp_ab[1];
  }
  return sim;
}

uint64_t SampleKey(Modality modality, uint32_t id, uint64_t salt) {
  uint64_t x = (static_cast<uint64_t>(modality == Modality::kText) << 63) ^
               (static_cast<uint64_t>(id) << 20) ^ (salt * 0x9e3779b97f4a7c15ull);
  // splitmix64 finalizer
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

SetPrediction EmbedSample(const Model& m, Modality modality, const Matrix& local,
                          const Matrix& global_feat, uint64_t key) {
  const bool visual = modality == Modality::kVisual;
  const SampleFeatures f = Encode(local, global_feat, visual ? m.visual_encoder : m.text_encoder);
  return PredictSetFull(f, visual ? m.visual : m.text, m.predictor, key);
}

std::vector<EmbeddingSet> EmbedImages(const Model& m, const Corpus& corpus,
                                      std::span<const uint32_t> ids, size_t workers) {
  std::vector<EmbeddingSet> out(ids.size());
  ParallelFor(ids.size(), workers, [&](size_t i) {
    const SynthImage& img = corpus.images.at(ids[i]);
    out[i] = EmbedSample(m, Modality::kVisual, img.local, img.global_feat,
                         SampleKey(Modality::kVisual, img.id))
                 .set;
  });
  return out;
}

std::vector<EmbeddingSet> EmbedCaptions(const Model& m, const Corpus& corpus,
                                        std::span<const uint32_t> ids, size_t workers) {
  std::vector<EmbeddingSet> out(ids.size());
  ParallelFor(ids.size(), workers, [&](size_t i) {
    const SynthCaption& cap = corpus.captions.at(ids[i]);
    out[i] = EmbedSample(m, Modality::kText, cap.local, cap.global_feat,
                         SampleKey(Modality::kText, cap.id))
                 .set;
  });
  return out;
}

namespace {

constexpr uint32_t kCheckpointVersion = 1;

void WriteTensor(std::ostream& out, const std::string& name, const Matrix& m) {
  binary::WriteString(out, name);
  binary::WriteU32(out, binary::CheckedU32(m.rows()));
  binary::WriteU32(out, binary::CheckedU32(m.cols()));
  for (double v : m.values()) binary::WriteF32(out, static_cast<float>(v));
}

}  // namespace

void WriteCheckpoint(const std::string& path, const std::string& config_json, const Model& m,
                     std::span<const NamedTensor> extra) {
  // Write to a sibling file and rename so an interrupted write never
  // replaces a good checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    binary::WriteMagic(out, "DIVP");
    binary::WriteU32(out, kCheckpointVersion);
    binary::WriteString(out, config_json);
    size_t count = extra.size();
    m.ForEachParam([&](const std::string&, const Matrix&) { ++count; });
    binary::WriteU32(out, binary::CheckedU32(count));
    m.ForEachParam([&](const std::string& name, const Matrix& p) { WriteTensor(out, name, p); });
    for (const NamedTensor& t : extra) WriteTensor(out, t.name, t.value);
    out.flush();
    if (!out) throw IoError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot move checkpoint into place at '" + path + "'");
  }
}

LoadedCheckpoint ReadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  binary::ExpectMagic(in, "DIVP");
  const uint32_t version = binary::ReadU32(in);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  }
  LoadedCheckpoint ck;
  ck.config_json = binary::ReadString(in);
  RunConfig cfg;
  try {
    cfg = ParseRunConfigText(ck.config_json);
  } catch (const ConfigError& e) {
    throw IoError("checkpoint '" + path + "': embedded config: " + e.what());
  }
  ck.model = ZerosLike(InitModel(cfg.predictor, cfg.data.raw_dim, cfg.loss.sim, 0));
  std::map<std::string, Matrix*> slots;
  ck.model.ForEachParam([&](const std::string& name, Matrix& p) { slots[name] = &p; });
  const uint32_t count = binary::ReadU32(in);
  size_t filled = 0;
  for (uint32_t t = 0; t < count; ++t) {
    std::string name = binary::ReadString(in);
    const uint32_t rows = binary::ReadU32(in);
    const uint32_t cols = binary::ReadU32(in);
    Matrix value(rows, cols);
    for (double& v : value.values()) v = binary::ReadF32(in);
    auto it = slots.find(name);
    if (it == slots.end()) {
      ck.extra.push_back({std::move(name), std::move(value)});
      continue;
    }
    if (!it->second->same_shape(value)) {
      throw IoError("checkpoint '" + path + "': tensor " + name + " has shape " +
                    ShapeString(value) + ", expected " + ShapeString(*it->second));
    }
    *it->second = std::move(value);
    ++filled;
  }
  if (filled != slots.size()) {
    throw IoError("checkpoint '" + path + "': missing model tensors");
  }
  return ck;
}

}  // namespace divemb
