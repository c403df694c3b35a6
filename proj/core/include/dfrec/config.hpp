#pragma once

#include <json.hpp>

#include <filesystem>

#include "dfrec/corpus.hpp"
#include "dfrec/pipeline.hpp"
#include "dfrec/train.hpp"

namespace dfrec {

struct EvalConfig {
  double threshold = 0.9;  // predicted real iff idsim strictly exceeds this
  std::string perturb;     // "", "blur", "jpeg", "noise"
  std::string split = "test";

  void validate() const {
    if (threshold < -1.0 || threshold > 1.0) throw ConfigError("eval threshold must lie in [-1,1]");
    if (!perturb.empty() && perturb != "blur" && perturb != "jpeg" && perturb != "noise")
      throw ConfigError("eval perturb must be one of blur/jpeg/noise");
    if (split != "train" && split != "val" && split != "test")
      throw ConfigError("eval split must be train/val/test");
  }
};

// The full run configuration: corpus, model sizes, training and evaluation.
// Unknown JSON keys are rejected at every level.
struct RunConfig {
  CorpusConfig corpus;
  IsmSpec ism;
  SirmSpec sirm;
  MaeSpec mae;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;

  static RunConfig defaults();
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_json_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Stable fingerprint of the effective configuration.
  std::uint64_t hash() const;

  // Assembles the model spec; image size, patch size and the f_t dimension
  // are derived from the corpus and SIRM settings.
  ModelSpec model_spec() const;

  void validate() const;
  // Pushes the top-level seed into corpus/train sub-configs.
  void propagate_seed();
};

}  // namespace dfrec
