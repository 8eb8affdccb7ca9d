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

#include "divemb/config.h"

#include <fstream>
#include <set>
#include <sstream>

#include "divemb/binary_io.h"
#include "divemb/error.h"

namespace divemb {
namespace {

// Reads known keys from one JSON object and rejects the rest.
class FieldReader {
 public:
  FieldReader(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError(section_ + ": expected a JSON object");
  }

  template <class T>
  void Get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(Where(key) + ": expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer() || (it->is_number_integer() && it->template get<long long>() < 0)) {
          throw ConfigError(Where(key) + ": expected a non-negative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(Where(key) + ": expected a number");
      }
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(Where(key) + ": " + e.what());
    }
  }

  std::string GetString(const char* key, std::string fallback) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return fallback;
    if (!it->is_string()) throw ConfigError(Where(key) + ": expected a string");
    return it->get<std::string>();
  }

  const Json* Object(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void Finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(section_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  std::string Where(const char* key) const { return section_ + "." + key; }

  const Json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

SimilarityConfig SimilarityFromJson(const Json& j) {
  SimilarityConfig c;
  FieldReader r(j, "loss.sim");
  c.kind = ParseSimilarityKind(r.GetString("kind", std::string(ToString(c.kind))));
  r.Get("alpha", c.alpha);
  r.Get("mp_a", c.mp_a);
  r.Get("mp_b", c.mp_b);
  r.Get("mp_mean", c.mp_mean);
  r.Finish();
  return c;
}

Json ToJson(const SimilarityConfig& c) {
  return Json{{"kind", std::string(ToString(c.kind))},
              {"alpha", c.alpha},
              {"mp_a", c.mp_a},
              {"mp_b", c.mp_b},
              {"mp_mean", c.mp_mean}};
}

std::string_view SlotInitName(SlotInit s) { return s == SlotInit::kLearnable ? "learnable" : "random"; }

SlotInit ParseSlotInit(const std::string& s) {
  if (s == "learnable") return SlotInit::kLearnable;
  if (s == "random") return SlotInit::kRandom;
  throw ConfigError("predictor.init_slots: expected 'learnable' or 'random', got '" + s + "'");
}

std::string_view GeluName(GeluForm g) { return g == GeluForm::kErf ? "erf" : "tanh"; }

GeluForm ParseGelu(const std::string& s) {
  if (s == "erf") return GeluForm::kErf;
  if (s == "tanh") return GeluForm::kTanh;
  throw ConfigError("predictor.gelu: expected 'erf' or 'tanh', got '" + s + "'");
}

}  // namespace

Json ToJson(const SynthConfig& c) {
  return Json{{"concepts", c.concepts},
              {"images", c.images},
              {"test_images", c.test_images},
              {"captions_per_image", c.captions_per_image},
              {"max_concepts", c.max_concepts},
              {"caption_concepts", c.caption_concepts},
              {"noise_sigma", c.noise_sigma},
              {"instance_sigma", c.instance_sigma},
              {"regions", c.regions},
              {"tokens", c.tokens},
              {"raw_dim", c.raw_dim},
              {"concept_cos_cap", c.concept_cos_cap},
              {"val_fraction", c.val_fraction},
              {"seed", c.seed}};
}

SynthConfig SynthConfigFromJson(const Json& j) {
  SynthConfig c;
  FieldReader r(j, "data");
  r.Get("concepts", c.concepts);
  r.Get("images", c.images);
  r.Get("test_images", c.test_images);
  r.Get("captions_per_image", c.captions_per_image);
  r.Get("max_concepts", c.max_concepts);
  r.Get("caption_concepts", c.caption_concepts);
  r.Get("noise_sigma", c.noise_sigma);
  r.Get("instance_sigma", c.instance_sigma);
  r.Get("regions", c.regions);
  r.Get("tokens", c.tokens);
  r.Get("raw_dim", c.raw_dim);
  r.Get("concept_cos_cap", c.concept_cos_cap);
  r.Get("val_fraction", c.val_fraction);
  r.Get("seed", c.seed);
  r.Finish();
  return c;
}

Json ToJson(const SetPredictorConfig& c) {
  return Json{{"num_slots", c.num_slots},
              {"iterations", c.iterations},
              {"dim", c.dim},
              {"attn_dim", c.attn_dim},
              {"mlp_hidden", c.mlp_hidden},
              {"use_positional_encoding", c.use_positional_encoding},
              {"init_slots", std::string(SlotInitName(c.init_slots))},
              {"add_global", c.add_global},
              {"residual_update", c.residual_update},
              {"gelu", std::string(GeluName(c.gelu))},
              {"ln_eps", c.ln_eps},
              {"attn_eps", c.attn_eps}};
}

SetPredictorConfig PredictorConfigFromJson(const Json& j) {
  SetPredictorConfig c;
  FieldReader r(j, "predictor");
  r.Get("num_slots", c.num_slots);
  r.Get("iterations", c.iterations);
  r.Get("dim", c.dim);
  r.Get("attn_dim", c.attn_dim);
  r.Get("mlp_hidden", c.mlp_hidden);
  r.Get("use_positional_encoding", c.use_positional_encoding);
  c.init_slots = ParseSlotInit(r.GetString("init_slots", std::string(SlotInitName(c.init_slots))));
  r.Get("add_global", c.add_global);
  r.Get("residual_update", c.residual_update);
  c.gelu = ParseGelu(r.GetString("gelu", std::string(GeluName(c.gelu))));
  r.Get("ln_eps", c.ln_eps);
  r.Get("attn_eps", c.attn_eps);
  r.Finish();
  return c;
}

Json ToJson(const LossConfig& c) {
  return Json{{"margin", c.margin},
              {"reg_weight", c.reg_weight},
              {"hardest_mining", c.hardest_mining},
              {"mmd_gamma", c.mmd_gamma},
              {"mmd_median_heuristic", c.mmd_median_heuristic},
              {"sim", ToJson(c.sim)}};
}

LossConfig LossConfigFromJson(const Json& j) {
  LossConfig c;
  FieldReader r(j, "loss");
  r.Get("margin", c.margin);
  r.Get("reg_weight", c.reg_weight);
  r.Get("hardest_mining", c.hardest_mining);
  r.Get("mmd_gamma", c.mmd_gamma);
  r.Get("mmd_median_heuristic", c.mmd_median_heuristic);
  if (const Json* sim = r.Object("sim")) c.sim = SimilarityFromJson(*sim);
  r.Finish();
  return c;
}

Json ToJson(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_images", c.batch_images},
              {"lr", c.lr},
              {"lr_schedule", std::string(ToString(c.lr_schedule))},
              {"step_epochs", c.step_epochs},
              {"step_gamma", c.step_gamma},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"predictor_lr_mult", c.predictor_lr_mult},
              {"no_mining_epochs", c.no_mining_epochs},
              {"seed", c.seed}};
}

TrainConfig TrainConfigFromJson(const Json& j) {
  TrainConfig c;
  FieldReader r(j, "train");
  r.Get("epochs", c.epochs);
  r.Get("batch_images", c.batch_images);
  r.Get("lr", c.lr);
  c.lr_schedule = ParseLrSchedule(r.GetString("lr_schedule", std::string(ToString(c.lr_schedule))));
  r.Get("step_epochs", c.step_epochs);
  r.Get("step_gamma", c.step_gamma);
  r.Get("weight_decay", c.weight_decay);
  r.Get("beta1", c.beta1);
  r.Get("beta2", c.beta2);
  r.Get("adam_eps", c.adam_eps);
  r.Get("predictor_lr_mult", c.predictor_lr_mult);
  r.Get("no_mining_epochs", c.no_mining_epochs);
  r.Get("seed", c.seed);
  r.Finish();
  return c;
}

void EvalConfig::Validate() const {
  for (const auto* keep : {&visual_keep, &text_keep}) {
    for (int v : *keep) {
      if (v != 0 && v != 1) throw ConfigError("eval: slot masks take 0/1 entries");
    }
  }
}

Json ToJson(const EvalConfig& c) {
  return Json{{"split", std::string(ToString(c.split))},
              {"visual_keep", c.visual_keep},
              {"text_keep", c.text_keep},
              {"slot_ablation", c.slot_ablation}};
}

EvalConfig EvalConfigFromJson(const Json& j) {
  EvalConfig c;
  FieldReader r(j, "eval");
  c.split = ParseSplit(r.GetString("split", std::string(ToString(c.split))));
  r.Get("visual_keep", c.visual_keep);
  r.Get("text_keep", c.text_keep);
  r.Get("slot_ablation", c.slot_ablation);
  r.Finish();
  return c;
}

void RunConfig::Validate() const {
  data.Validate();
  predictor.Validate();
  loss.Validate();
  train.Validate();
  eval.Validate();
  for (const auto* keep : {&eval.visual_keep, &eval.text_keep}) {
    if (!keep->empty() && keep->size() != predictor.num_slots) {
      throw ConfigError("eval: slot mask length must equal predictor.num_slots");
    }
  }
}

Json RunConfig::ToJson() const {
  return Json{{"data", divemb::ToJson(data)},
              {"predictor", divemb::ToJson(predictor)},
              {"loss", divemb::ToJson(loss)},
              {"train", divemb::ToJson(train)},
              {"eval", divemb::ToJson(eval)}};
}

std::string RunConfig::Canonical() const { return ToJson().dump(); }

std::string RunConfig::Hash() const { return binary::Fnv1aHex(Canonical()); }

RunConfig ParseRunConfig(const Json& j) {
  RunConfig c;
  FieldReader r(j, "config");
  if (const Json* s = r.Object("data")) c.data = SynthConfigFromJson(*s);
  if (const Json* s = r.Object("predictor")) c.predictor = PredictorConfigFromJson(*s);
  if (const Json* s = r.Object("loss")) c.loss = LossConfigFromJson(*s);
  if (const Json* s = r.Object("train")) c.train = TrainConfigFromJson(*s);
  if (const Json* s = r.Object("eval")) c.eval = EvalConfigFromJson(*s);
  r.Finish();
  c.Validate();
  return c;
}

RunConfig ParseRunConfigText(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return ParseRunConfig(j);
}

RunConfig LoadRunConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ParseRunConfigText(ss.str());
}

}  // namespace divemb
