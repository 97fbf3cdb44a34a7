#pragma once

#include <string>

#include <json.hpp>

#include "cslb/analysis.hpp"
#include "cslb/model.hpp"
#include "cslb/train.hpp"

namespace cslb {

// One run definition: architecture + attenuation, training recipe, lens
// settings. Mirrors the JSON config file; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LensConfig lens;

  void validate() const {
    model.validate();
    train.validate(model);
    lens.validate(model.vocab_size);
  }
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig parse_run_config_file(const std::string& path);

// Canonical echo: fully resolved (warmup and fixed alphas materialized).
// parse_run_config(run_config_to_json(c)) reproduces c exactly.
nlohmann::json run_config_to_json(const RunConfig& c);

bool config_equal(const RunConfig& a, const RunConfig& b);

}  // namespace cslb
