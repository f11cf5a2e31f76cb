#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "ragguard/common.h"
#include "ragguard/encoder.h"
#include "ragguard/knowledge_base.h"

namespace ragguard {

enum class Role { kTeacher, kStudent };

std::string_view RoleName(Role role);

struct GuardCapacity {
  int hidden_layers = 1;
  int hidden_width = 64;
  Role role = Role::kStudent;

  static GuardCapacity Teacher() { return {2, 256, Role::kTeacher}; }
  static GuardCapacity Student() { return {1, 64, Role::kStudent}; }

  void Validate() const;
  bool operator==(const GuardCapacity&) const = default;
};

// Query embedding followed by k context slots of
// [context embedding | one-hot(safe, unsafe) | similarity].
struct FeatureLayout {
  std::size_t dimension = 64;
  std::size_t k = 5;

  std::size_t slot_size() const { return dimension + 3; }
  std::size_t size() const { return dimension + k * slot_size(); }
  bool operator==(const FeatureLayout&) const = default;
};

using FeatureVector = Eigen::VectorXd;
using FeatureMatrix = Eigen::MatrixXd;  // one example per column

// Weights and biases of an MLP; also used as the gradient/velocity buffer.
struct LayerStack {
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is out x in
  std::vector<Eigen::VectorXd> biases;

  std::size_t ParameterCount() const;
  // Flat coordinate access: layer by layer, weights row-major then bias.
  double& Coord(std::size_t index);
  double Coord(std::size_t index) const;
  LayerStack ZerosLike() const;
  bool AllFinite() const;
};

struct GuardParams {
  GuardCapacity capacity;
  FeatureLayout layout;
  std::uint64_t seed = 0;
  LayerStack layers;

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a generator seeded
  // with `seed`; biases included.
  static GuardParams Initialize(GuardCapacity capacity, FeatureLayout layout,
                                std::uint64_t seed);

  std::size_t ParameterCount() const { return layers.ParameterCount(); }
  // Fingerprint of every parameter's bit pattern.
  std::uint64_t Hash() const;
};

struct PredictionDistribution {
  double p_safe = 0.5;
  double p_unsafe = 0.5;

  double operator[](Label label) const {
    return label == Label::kSafe ? p_safe : p_unsafe;
  }
  // Ties resolve to safe.
  Label Argmax() const { return p_unsafe > p_safe ? Label::kUnsafe : Label::kSafe; }
};

PredictionDistribution Softmax(double logit_safe, double logit_unsafe);

struct BuiltInput {
  FeatureVector features;
  std::string prompt;
};

// Canonical serialization of a query and its context, one line per slot.
std::string SerializePrompt(std::string_view x, const ContextSet& ctx,
                            const EntryResolver& resolver);

// Writes the feature layout for (query, ctx) into `out` (layout.size()
// values). Throws Error on a dangling entry id.
void WriteFeatures(const EmbeddingVector& query, const ContextSet& ctx,
                   const EntryResolver& resolver, const FeatureLayout& layout,
                   std::span<double> out);

BuiltInput BuildInput(std::string_view x, const ContextSet& ctx,
                      const EntryResolver& resolver, const EncoderConfig& cfg,
                      const FeatureLayout& layout);

PredictionDistribution Forward(const GuardParams& params,
                               const FeatureVector& features);
std::vector<PredictionDistribution> ForwardBatch(const GuardParams& params,
                                                 const FeatureMatrix& features);

// -log p_y with p clamped at 1e-12.
double CrossEntropy(const PredictionDistribution& dist, Label y);
// sum_i p_i ln(p_i / q_i), q clamped at 1e-12, 0 ln 0 = 0.
double KlDivergence(const PredictionDistribution& p,
                    const PredictionDistribution& q);

// Per-example objective: ce_weight * CE(pred, label)
//   + kl_weight * KL(teacher || pred) + reward_weight * (1 - pred[label]).
struct LossTarget {
  Label label = Label::kSafe;
  std::optional<PredictionDistribution> teacher;
  double ce_weight = 1.0;
  double kl_weight = 0.0;
  double reward_weight = 0.0;
};

double ExampleLoss(const PredictionDistribution& pred, const LossTarget& target);

class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, std::size_t batch_index)
      : Error(what), batch_index_(batch_index) {}
  std::size_t batch_index() const { return batch_index_; }

 private:
  std::size_t batch_index_;
};

struct LossAndGradients {
  double loss = 0.0;
  LayerStack gradients;
};

// Exact reverse-mode gradient of sum_i weights[i] * ExampleLoss(i).
// batch_index is only used to label a NonFiniteError.
LossAndGradients ComputeGradients(const GuardParams& params,
                                  const FeatureMatrix& features,
                                  std::span<const LossTarget> targets,
                                  std::span<const double> weights,
                                  std::size_t batch_index = 0);

// Gradient of the mean loss over the batch.
LossAndGradients MeanLossGradients(const GuardParams& params,
                                   const FeatureMatrix& features,
                                   std::span<const LossTarget> targets,
                                   std::size_t batch_index = 0);

struct OptimizerState {
  LayerStack velocity;  // empty until the first momentum step
};

// Plain SGD (momentum == 0) or heavy-ball momentum. Throws NonFiniteError
// and leaves params untouched when the update is not finite.
void ApplyUpdate(GuardParams& params, const LayerStack& gradients,
                 OptimizerState& state, double lr, double momentum = 0.0);

void SaveCheckpoint(const std::filesystem::path& path, const GuardParams& params,
                    const nlohmann::json& metadata = nlohmann::json::object());
GuardParams LoadCheckpoint(const std::filesystem::path& path);

}  // namespace ragguard
