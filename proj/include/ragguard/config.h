#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ragguard/encoder.h"
#include "ragguard/guard_model.h"
#include "ragguard/perturbation.h"
#include "ragguard/training.h"

namespace ragguard {

// One JSON document with sections encoder, kb, model, perturbation, training
// and service. Precedence, lowest first: built-in defaults, the config file,
// RAGGUARD_<SECTION>_<KEY> environment variables, then command-line overrides
// of the form section.key=value (nested keys use further dots).
//
// Override values are parsed as JSON when they parse and taken as strings
// otherwise, so `service.port=8080` is a number and `kb.path=kb.jsonl` a string.
class Config {
 public:
  static nlohmann::json Defaults();

  // `env` is the process environment as name -> value; only RAGGUARD_* names
  // are consulted. Throws InvalidArgument on unknown sections or keys.
  static Config Resolve(const std::optional<std::filesystem::path>& file,
                        const std::map<std::string, std::string>& env,
                        const std::vector<std::string>& overrides);
  static Config FromJson(nlohmann::json doc);

  const nlohmann::json& doc() const { return doc_; }
  const nlohmann::json& section(const std::string& name) const { return doc_.at(name); }

  // FNV-1a of the canonical dump.
  std::uint64_t Hash() const;

  EncoderConfig encoder() const;
  PerturbationConfig perturbation() const;
  RetrievalOptions retrieval() const;
  GuardCapacity teacher_capacity() const;
  GuardCapacity student_capacity() const;
  FeatureLayout layout() const;
  DistillOptions distill() const;
  Schedule schedule() const;
  DatasetOptions dataset_options() const;

 private:
  explicit Config(nlohmann::json doc) : doc_(std::move(doc)) {}

  nlohmann::json doc_;
};

// The current process environment, RAGGUARD_* names only.
std::map<std::string, std::string> ProcessEnvironment();

}  // namespace ragguard
