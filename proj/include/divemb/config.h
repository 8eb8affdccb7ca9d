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

#ifndef DIVEMB_CONFIG_H_
#define DIVEMB_CONFIG_H_

#include <string>
#include <vector>

#include "divemb/json.h"
#include "divemb/objective.h"
#include "divemb/set_predictor.h"
#include "divemb/synth_data.h"
#include "divemb/trainer.h"

namespace divemb {

struct EvalConfig {
  Split split = Split::kTest;
  // Empty means keep every slot.
  std::vector<int> visual_keep;
  std::vector<int> text_keep;
  bool slot_ablation = true;

  void Validate() const;
};

// The full run description. Every field has a default; parsing rejects
// unknown keys and wrong types with ConfigError.
struct RunConfig {
  SynthConfig data;
  SetPredictorConfig predictor;
  LossConfig loss;
  TrainConfig train;
  EvalConfig eval;

  void Validate() const;
  Json ToJson() const;
  // Compact dump of ToJson(); the form echoed into outputs.
  std::string Canonical() const;
  std::string Hash() const;
};

RunConfig ParseRunConfig(const Json& j);
RunConfig ParseRunConfigText(const std::string& text);
RunConfig LoadRunConfig(const std::string& path);

Json ToJson(const SynthConfig& c);
Json ToJson(const SetPredictorConfig& c);
Json ToJson(const LossConfig& c);
Json ToJson(const TrainConfig& c);
Json ToJson(const EvalConfig& c);
SynthConfig SynthConfigFromJson(const Json& j);
SetPredictorConfig PredictorConfigFromJson(const Json& j);
LossConfig LossConfigFromJson(const Json& j);
TrainConfig TrainConfigFromJson(const Json& j);
EvalConfig EvalConfigFromJson(const Json& j);

}  // namespace divemb

#endif  // DIVEMB_CONFIG_H_
