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

#include "divemb/synth_data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>

#include "divemb/binary_io.h"
#include "divemb/config.h"
#include "divemb/error.h"

namespace divemb {

void SynthConfig::Validate() const {
  if (concepts < 1 || max_concepts < 1) throw ConfigError("data: concepts and max_concepts must be >= 1");
  if (concepts < max_concepts) throw ConfigError("data: concepts must be >= max_concepts");
  if (images < 2) throw ConfigError("data: need at least 2 images");
  if (captions_per_image < 1) throw ConfigError("data: captions_per_image must be >= 1");
  if (caption_concepts < 1) throw ConfigError("data: caption_concepts must be >= 1");
  if (regions < max_concepts) throw ConfigError("data: regions must be >= max_concepts");
  if (tokens < caption_concepts) throw ConfigError("data: tokens must be >= caption_concepts");
  if (raw_dim < 1) throw ConfigError("data: raw_dim must be >= 1");
  if (!(noise_sigma >= 0.0) || !(instance_sigma >= 0.0)) {
    throw ConfigError("data: noise_sigma and instance_sigma must be >= 0");
  }
  if (!(concept_cos_cap > -1.0 && concept_cos_cap <= 1.0)) {
    throw ConfigError("data: concept_cos_cap must be in (-1, 1]");
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("data: val_fraction must be in [0, 1)");
  }
}

std::string_view ToString(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split ParseSplit(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "' (train, val, test)");
}

std::vector<uint32_t> Corpus::ImagesIn(Split split) const {
  std::vector<uint32_t> ids;
  for (const SynthImage& img : images)
    if (img.split == split) ids.push_back(img.id);
  return ids;
}

Matrix GenerateConceptBank(size_t count, size_t dim, double cos_cap, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix bank(count, dim);
  const size_t budget = 1000 * std::max<size_t>(count, 1);
  size_t accepted = 0;
  for (size_t attempt = 0; accepted < count; ++attempt) {
    if (attempt >= budget) {
      throw ConfigError("concept bank: could not place " + std::to_string(count) +
                        " concepts in dimension " + std::to_string(dim) +
                        " with cosine cap " + std::to_string(cos_cap) + " after " +
                        std::to_string(budget) + " attempts");
    }
    Matrix v(1, dim);
    for (double& x : v.values()) x = normal(rng);
    const double n = Norm(v.row(0));
    if (n == 0.0) continue;
    v *= 1.0 / n;
    v.round_to_float();
    bool ok = true;
    for (size_t i = 0; i < accepted && ok; ++i) ok = Dot(bank.row(i), v.row(0)) < cos_cap;
    if (!ok) continue;
    std::copy(v.values().begin(), v.values().end(), bank.row(accepted).begin());
    ++accepted;
  }
  return bank;
}

namespace {

std::vector<uint32_t> SampleDistinct(size_t pool, size_t count, std::mt19937_64& rng) {
  std::vector<uint32_t> all(pool);
  std::iota(all.begin(), all.end(), 0u);
  for (size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<size_t> pick(i, pool - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  return all;
}

// Each of the `groups` groups gets at least one of `n` rows; order shuffled.
std::vector<size_t> AssignRows(size_t n, size_t groups, std::mt19937_64& rng) {
  std::vector<size_t> assign(n);
  std::uniform_int_distribution<size_t> pick(0, groups - 1);
  for (size_t r = 0; r < n; ++r) assign[r] = r < groups ? r : pick(rng);
  std::shuffle(assign.begin(), assign.end(), rng);
  return assign;
}

// Rows are concept + instance offset + noise; the global feature is the
// mean of the stored (float-rounded) rows.
void FillFeatures(const std::vector<Matrix>& centers, const std::vector<size_t>& assign,
                  double noise_sigma, std::mt19937_64& rng, Matrix& local, Matrix& global_feat) {
  const size_t dim = centers.front().cols();
  std::normal_distribution<double> noise(0.0, noise_sigma);
  local = Matrix(assign.size(), dim);
  for (size_t r = 0; r < assign.size(); ++r) {
    for (size_t j = 0; j < dim; ++j) {
      local(r, j) = centers[assign[r]](0, j) + (noise_sigma > 0.0 ? noise(rng) : 0.0);
    }
  }
  local.round_to_float();
  global_feat = Matrix(1, dim);
  for (size_t r = 0; r < local.rows(); ++r)
    for (size_t j = 0; j < dim; ++j) global_feat(0, j) += local(r, j);
  global_feat *= 1.0 / static_cast<double>(local.rows());
  global_feat.round_to_float();
}

}  // namespace

Corpus GenerateCorpus(const SynthConfig& cfg) {
  cfg.Validate();
  std::mt19937_64 rng(cfg.seed);
  Corpus corpus;
  corpus.config = cfg;
  corpus.concept_bank = GenerateConceptBank(cfg.concepts, cfg.raw_dim, cfg.concept_cos_cap, rng);

  const size_t total = cfg.images + cfg.test_images;
  const double inst_scale = cfg.instance_sigma / std::sqrt(static_cast<double>(cfg.raw_dim));
  std::normal_distribution<double> inst(0.0, 1.0);
  std::uniform_int_distribution<size_t> pick_m(1, cfg.max_concepts);
  for (size_t i = 0; i < total; ++i) {
    SynthImage img;
    img.id = static_cast<uint32_t>(i);
    img.split = i < cfg.images ? Split::kTrain : Split::kTest;
    img.concepts = SampleDistinct(cfg.concepts, pick_m(rng), rng);
    // One center per concept of this image: the concept plus an offset that
    // only this image's regions and captions share.
    std::vector<Matrix> centers;
    for (uint32_t c : img.concepts) {
      Matrix center = SliceRows(corpus.concept_bank, c, c + 1);
      if (inst_scale > 0.0) {
        for (double& v : center.values()) v += inst_scale * inst(rng);
      }
      centers.push_back(std::move(center));
    }
    const std::vector<size_t> regions = AssignRows(cfg.regions, centers.size(), rng);
    for (size_t r : regions) img.region_concepts.push_back(img.concepts[r]);
    FillFeatures(centers, regions, cfg.noise_sigma, rng, img.local, img.global_feat);

    for (size_t k = 0; k < cfg.captions_per_image; ++k) {
      SynthCaption cap;
      cap.id = static_cast<uint32_t>(corpus.captions.size());
      cap.image = img.id;
      const size_t subset = std::min(cfg.caption_concepts, img.concepts.size());
      const std::vector<uint32_t> which = SampleDistinct(img.concepts.size(), subset, rng);
      std::vector<Matrix> cap_centers;
      for (uint32_t w : which) {
        cap.concepts.push_back(img.concepts[w]);
        cap_centers.push_back(centers[w]);
      }
      const std::vector<size_t> tokens = AssignRows(cfg.tokens, subset, rng);
      for (size_t t : tokens) cap.token_concepts.push_back(cap.concepts[t]);
      FillFeatures(cap_centers, tokens, cfg.noise_sigma, rng, cap.local, cap.global_feat);
      img.captions.push_back(cap.id);
      corpus.captions.push_back(std::move(cap));
    }
    corpus.images.push_back(std::move(img));
  }

  std::mt19937_64 split_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<size_t> order(cfg.images);
  std::iota(order.begin(), order.end(), size_t{0});
  std::shuffle(order.begin(), order.end(), split_rng);
  const size_t n_val = static_cast<size_t>(std::llround(cfg.val_fraction * cfg.images));
  for (size_t i = 0; i < n_val; ++i) corpus.images[order[i]].split = Split::kVal;
  return corpus;
}

namespace {

constexpr uint32_t kCorpusVersion = 1;

Json HeaderJson(const Corpus& corpus) {
  Json images = Json::array();
  for (const SynthImage& img : corpus.images) {
    images.push_back({{"id", img.id},
                      {"split", std::string(ToString(img.split))},
                      {"concepts", img.concepts},
                      {"region_concepts", img.region_concepts},
                      {"captions", img.captions}});
  }
  Json captions = Json::array();
  for (const SynthCaption& cap : corpus.captions) {
    captions.push_back({{"id", cap.id},
                        {"image", cap.image},
                        {"concepts", cap.concepts},
                        {"token_concepts", cap.token_concepts}});
  }
  Json h;
  h["format"] = "divemb-corpus";
  h["config"] = ToJson(corpus.config);
  h["config_hash"] = binary::Fnv1aHex(ToJson(corpus.config).dump());
  h["images"] = std::move(images);
  h["captions"] = std::move(captions);
  return h;
}

void ExpectShape(const Matrix& m, size_t rows, size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw IoError("corpus: " + what + " has shape " + ShapeString(m) + ", expected " +
                  std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

void WriteCorpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  binary::WriteMagic(out, "DIVC");
  binary::WriteU32(out, kCorpusVersion);
  binary::WriteString(out, HeaderJson(corpus).dump());
  WriteMatrix(out, corpus.concept_bank);
  for (const SynthImage& img : corpus.images) {
    WriteMatrix(out, img.local);
    WriteMatrix(out, img.global_feat);
  }
  for (const SynthCaption& cap : corpus.captions) {
    WriteMatrix(out, cap.local);
    WriteMatrix(out, cap.global_feat);
  }
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

Corpus ReadCorpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path + "'");
  binary::ExpectMagic(in, "DIVC");
  const uint32_t version = binary::ReadU32(in);
  if (version != kCorpusVersion) {
    throw IoError("corpus '" + path + "': unsupported version " + std::to_string(version));
  }
  Json h;
  try {
    h = Json::parse(binary::ReadString(in));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corpus '" + path + "': bad header: " + e.what());
  }
  Corpus corpus;
  try {
    corpus.config = SynthConfigFromJson(h.at("config"));
    for (const Json& j : h.at("images")) {
      SynthImage img;
      img.id = j.at("id").get<uint32_t>();
      img.split = ParseSplit(j.at("split").get<std::string>());
      img.concepts = j.at("concepts").get<std::vector<uint32_t>>();
      img.region_concepts = j.at("region_concepts").get<std::vector<uint32_t>>();
      img.captions = j.at("captions").get<std::vector<uint32_t>>();
      corpus.images.push_back(std::move(img));
    }
    for (const Json& j : h.at("captions")) {
      SynthCaption cap;
      cap.id = j.at("id").get<uint32_t>();
      cap.image = j.at("image").get<uint32_t>();
      cap.concepts = j.at("concepts").get<std::vector<uint32_t>>();
      cap.token_concepts = j.at("token_concepts").get<std::vector<uint32_t>>();
      corpus.captions.push_back(std::move(cap));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corpus '" + path + "': bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError("corpus '" + path + "': " + e.what());
  }
  const SynthConfig& cfg = corpus.config;
  corpus.concept_bank = ReadMatrix(in);
  ExpectShape(corpus.concept_bank, cfg.concepts, cfg.raw_dim, "concept bank");
  for (size_t i = 0; i < corpus.images.size(); ++i) {
    SynthImage& img = corpus.images[i];
    if (img.id != i) throw IoError("corpus '" + path + "': image ids are not positional");
    img.local = ReadMatrix(in);
    img.global_feat = ReadMatrix(in);
    ExpectShape(img.local, cfg.regions, cfg.raw_dim, "image " + std::to_string(i));
    ExpectShape(img.global_feat, 1, cfg.raw_dim, "image " + std::to_string(i) + " global");
  }
  for (size_t i = 0; i < corpus.captions.size(); ++i) {
    SynthCaption& cap = corpus.captions[i];
    if (cap.id != i || cap.image >= corpus.images.size()) {
      throw IoError("corpus '" + path + "': caption table is inconsistent");
    }
    cap.local = ReadMatrix(in);
    cap.global_feat = ReadMatrix(in);
    ExpectShape(cap.local, cfg.tokens, cfg.raw_dim, "caption " + std::to_string(i));
    ExpectShape(cap.global_feat, 1, cfg.raw_dim, "caption " + std::to_string(i) + " global");
  }
  for (const SynthImage& img : corpus.images) {
    if (img.captions.empty()) throw IoError("corpus '" + path + "': image without captions");
    for (uint32_t c : img.captions) {
      if (c >= corpus.captions.size() || corpus.captions[c].image != img.id) {
        throw IoError("corpus '" + path + "': match table is inconsistent");
      }
    }
  }
  return corpus;
}

EncoderParams InitEncoder(size_t raw_dim, size_t dim, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(raw_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  EncoderParams p;
  p.w_local = Matrix(raw_dim, dim);
  p.w_global = Matrix(raw_dim, dim);
  for (double& v : p.w_local.values()) v = u(rng);
  for (double& v : p.w_global.values()) v = u(rng);
  p.b_local = Matrix(1, dim);
  p.b_global = Matrix(1, dim);
  return p;
}

EncoderParams IdentityEncoder(size_t dim) {
  return EncoderParams{Matrix::Identity(dim), Matrix(1, dim), Matrix::Identity(dim),
                       Matrix(1, dim)};
}

EncoderVars BindParams(Tape& tape, const EncoderParams& p) {
  EncoderVars v;
  const auto mats = EncoderParams::Fields();
  const auto vars = EncoderVars::Fields();
  for (size_t i = 0; i < mats.size(); ++i) v.*(vars[i].second) = tape.Ref(p.*(mats[i].second));
  return v;
}

namespace {

Matrix Affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.rows() || b.cols() != w.cols()) {
    throw ShapeError("encode: " + ShapeString(x) + " through " + ShapeString(w));
  }
  Matrix y = MatMul(x, w);
  for (size_t r = 0; r < y.rows(); ++r)
    for (size_t j = 0; j < y.cols(); ++j) y(r, j) += b(0, j);
  return y;
}

}  // namespace

SampleFeatures Encode(const Matrix& local, const Matrix& global_feat, const EncoderParams& p) {
  return SampleFeatures{Affine(local, p.w_local, p.b_local),
                        Affine(global_feat, p.w_global, p.b_global)};
}

EncodedVars RecordEncode(Var local, Var global_feat, const EncoderVars& p) {
  return EncodedVars{AddRowBroadcast(MatMul(local, p.w_local), p.b_local),
                     AddRowBroadcast(MatMul(global_feat, p.w_global), p.b_global)};
}

}  // namespace divemb
