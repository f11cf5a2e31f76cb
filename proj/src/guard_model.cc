#include "ragguard/guard_model.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "ragguard/random.h"

namespace ragguard {
namespace {

constexpr double kProbFloor = 1e-12;
constexpr char kCheckpointMagic[8] = {'R', 'G', 'G', 'U', 'A', 'R', 'D', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct Activations {
  // inputs[l] is the input to layer l; the last entry is the output layer input.
  std::vector<Eigen::MatrixXd> inputs;
  Eigen::MatrixXd logits;
};

Activations RunForward(const GuardParams& params, const FeatureMatrix& features) {
  const auto& w = params.layers.weights;
  const auto& b = params.layers.biases;
  if (features.rows() != static_cast<Eigen::Index>(params.layout.size())) {
    throw InvalidArgument("forward: feature size " + std::to_string(features.rows()) +
                          " does not match layout size " +
                          std::to_string(params.layout.size()));
  }
  Activations act;
  act.inputs.reserve(w.size());
  act.inputs.push_back(features);
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    Eigen::MatrixXd h = w[l] * act.inputs.back();
    h.colwise() += b[l];
    act.inputs.push_back(h.array().tanh().matrix());
  }
  act.logits = w.back() * act.inputs.back();
  act.logits.colwise() += b.back();
  return act;
}

template <typename T>
void WritePod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T ReadPod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("checkpoint: unexpected end of file");
  return v;
}

std::filesystem::path SidecarPath(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

std::string_view RoleName(Role role) {
  return role == Role::kTeacher ? "teacher" : "student";
}

void GuardCapacity::Validate() const {
  if (hidden_layers < 1) throw InvalidArgument("capacity: hidden_layers must be >= 1");
  if (hidden_width < 1) throw InvalidArgument("capacity: hidden_width must be >= 1");
}

// ---------------------------------------------------------------------------
// LayerStack

std::size_t LayerStack::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& m : weights) n += static_cast<std::size_t>(m.size());
  for (const auto& v : biases) n += static_cast<std::size_t>(v.size());
  return n;
}

double& LayerStack::Coord(std::size_t index) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    auto& m = weights[l];
    const auto wsize = static_cast<std::size_t>(m.size());
    if (index < wsize) {
      const auto cols = static_cast<std::size_t>(m.cols());
      return m(static_cast<Eigen::Index>(index / cols),
               static_cast<Eigen::Index>(index % cols));
    }
    index -= wsize;
    auto& v = biases[l];
    if (index < static_cast<std::size_t>(v.size())) {
      return v(static_cast<Eigen::Index>(index));
    }
    index -= static_cast<std::size_t>(v.size());
  }
  throw InvalidArgument("parameter coordinate out of range");
}

double LayerStack::Coord(std::size_t index) const {
  return const_cast<LayerStack*>(this)->Coord(index);
}

LayerStack LayerStack::ZerosLike() const {
  LayerStack z;
  for (const auto& m : weights) z.weights.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  for (const auto& v : biases) z.biases.push_back(Eigen::VectorXd::Zero(v.size()));
  return z;
}

bool LayerStack::AllFinite() const {
  for (const auto& m : weights) {
    if (!m.allFinite()) return false;
  }
  for (const auto& v : biases) {
    if (!v.allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// GuardParams

GuardParams GuardParams::Initialize(GuardCapacity capacity, FeatureLayout layout,
                                    std::uint64_t seed) {
  capacity.Validate();
  GuardParams p;
  p.capacity = capacity;
  p.layout = layout;
  p.seed = seed;

  Rng rng(seed);
  std::vector<std::size_t> sizes;
  sizes.push_back(layout.size());
  for (int i = 0; i < capacity.hidden_layers; ++i) {
    sizes.push_back(static_cast<std::size_t>(capacity.hidden_width));
  }
  sizes.push_back(kNumLabels);

  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(sizes[l]);
    const auto fan_out = static_cast<Eigen::Index>(sizes[l + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < fan_out; ++r) {
      for (Eigen::Index c = 0; c < fan_in; ++c) w(r, c) = UniformRange(rng, -bound, bound);
    }
    Eigen::VectorXd b(fan_out);
    for (Eigen::Index r = 0; r < fan_out; ++r) b(r) = UniformRange(rng, -bound, bound);
    p.layers.weights.push_back(std::move(w));
    p.layers.biases.push_back(std::move(b));
  }
  return p;
}

std::uint64_t GuardParams::Hash() const {
  std::uint64_t h = kFnvOffset;
  for (std::size_t l = 0; l < layers.weights.size(); ++l) {
    const auto& m = layers.weights[l];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        h = Fnv1a(&v, sizeof(v), h);
      }
    }
    const auto& b = layers.biases[l];
    h = Fnv1a(b.data(), sizeof(double) * static_cast<std::size_t>(b.size()), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Inputs

PredictionDistribution Softmax(double logit_safe, double logit_unsafe) {
  const double m = std::max(logit_safe, logit_unsafe);
  const double es = std::exp(logit_safe - m);
  const double eu = std::exp(logit_unsafe - m);
  const double z = es + eu;
  return {es / z, eu / z};
}

std::string SerializePrompt(std::string_view x, const ContextSet& ctx,
                            const EntryResolver& resolver) {
  std::string out = "QUERY: ";
  out.append(x);
  char score[32];
  for (std::size_t i = 0; i < ctx.items.size(); ++i) {
    const KbEntry* e = resolver.Find(ctx.items[i].id);
    if (!e) throw Error("prompt: dangling entry id " + std::to_string(ctx.items[i].id));
    std::snprintf(score, sizeof(score), "%.4f", ctx.items[i].score);
    out += "\nCTX" + std::to_string(i + 1) + " [" + std::string(LabelName(e->label)) +
           "] (sim=" + score + "): " + e->text;
  }
  return out;
}

void WriteFeatures(const EmbeddingVector& query, const ContextSet& ctx,
                   const EntryResolver& resolver, const FeatureLayout& layout,
                   std::span<double> out) {
  const std::size_t d = layout.dimension;
  if (out.size() != layout.size()) throw InvalidArgument("features: output size mismatch");
  if (query.dimension() != d) throw InvalidArgument("features: query dimension mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t j = 0; j < d; ++j) out[j] = query.values[j];
  const std::size_t slots = std::min(layout.k, ctx.items.size());
  for (std::size_t i = 0; i < slots; ++i) {
    const auto& item = ctx.items[i];
    const KbEntry* e = resolver.Find(item.id);
    if (!e) throw Error("features: dangling entry id " + std::to_string(item.id));
    if (e->embedding.dimension() != d) {
      throw InvalidArgument("features: context embedding dimension mismatch");
    }
    double* slot = out.data() + d + i * layout.slot_size();
    for (std::size_t j = 0; j < d; ++j) slot[j] = e->embedding.values[j];
    slot[d + LabelIndex(e->label)] = 1.0;
    slot[d + 2] = item.score;
  }
}

BuiltInput BuildInput(std::string_view x, const ContextSet& ctx,
                      const EntryResolver& resolver, const EncoderConfig& cfg,
                      const FeatureLayout& layout) {
  BuiltInput in;
  in.features = FeatureVector::Zero(static_cast<Eigen::Index>(layout.size()));
  WriteFeatures(Embed(x, cfg), ctx, resolver, layout,
                std::span<double>(in.features.data(), layout.size()));
  in.prompt = SerializePrompt(x, ctx, resolver);
  return in;
}

// ---------------------------------------------------------------------------
// Forward and losses

PredictionDistribution Forward(const GuardParams& params, const FeatureVector& features) {
  FeatureMatrix m = features;
  return ForwardBatch(params, m).front();
}

std::vector<PredictionDistribution> ForwardBatch(const GuardParams& params,
                                                 const FeatureMatrix& features) {
  const Activations act = RunForward(params, features);
  std::vector<PredictionDistribution> out;
  out.reserve(static_cast<std::size_t>(features.cols()));
  for (Eigen::Index c = 0; c < act.logits.cols(); ++c) {
    out.push_back(Softmax(act.logits(0, c), act.logits(1, c)));
  }
  return out;
}

double CrossEntropy(const PredictionDistribution& dist, Label y) {
  return -std::log(std::max(dist[y], kProbFloor));
}

double KlDivergence(const PredictionDistribution& p, const PredictionDistribution& q) {
  double kl = 0.0;
  for (Label c : {Label::kSafe, Label::kUnsafe}) {
    if (p[c] == 0.0) continue;
    kl += p[c] * std::log(p[c] / std::max(q[c], kProbFloor));
  }
  return kl;
}

double ExampleLoss(const PredictionDistribution& pred, const LossTarget& target) {
  double loss = 0.0;
  if (target.ce_weight != 0.0) loss += target.ce_weight * CrossEntropy(pred, target.label);
  if (target.kl_weight != 0.0) {
    if (!target.teacher) throw InvalidArgument("loss: kl_weight set without teacher output");
    loss += target.kl_weight * KlDivergence(*target.teacher, pred);
  }
  if (target.reward_weight != 0.0) loss += target.reward_weight * (1.0 - pred[target.label]);
  return loss;
}

namespace {

// d loss / d logits for one example.
Eigen::Vector2d LogitGradient(const PredictionDistribution& p, const LossTarget& t) {
  const Eigen::Vector2d prob(p.p_safe, p.p_unsafe);
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  const int y = LabelIndex(t.label);
  // -log p_y: gradient vanishes where the clamp is active.
  if (t.ce_weight != 0.0 && prob(y) >= kProbFloor) {
    Eigen::Vector2d e = Eigen::Vector2d::Zero();
    e(y) = 1.0;
    g += t.ce_weight * (prob - e);
  }
  if (t.kl_weight != 0.0) {
    const Eigen::Vector2d tp(t.teacher->p_safe, t.teacher->p_unsafe);
    // KL(t||p) = const - sum_i t_i log p_i over unclamped i.
    for (int i = 0; i < 2; ++i) {
      if (tp(i) == 0.0 || prob(i) < kProbFloor) continue;
      Eigen::Vector2d e = Eigen::Vector2d::Zero();
      e(i) = 1.0;
      g += t.kl_weight * tp(i) * (prob - e);
    }
  }
  if (t.reward_weight != 0.0) {
    Eigen::Vector2d e = Eigen::Vector2d::Zero();
    e(y) = 1.0;
    g += t.reward_weight * (-prob(y)) * (e - prob);
  }
  return g;
}

}  // namespace

LossAndGradients ComputeGradients(const GuardParams& params, const FeatureMatrix& features,
                                  std::span<const LossTarget> targets,
                                  std::span<const double> weights,
                                  std::size_t batch_index) {
  const auto batch = static_cast<std::size_t>(features.cols());
  if (batch == 0) throw InvalidArgument("gradients: empty batch");
  if (targets.size() != batch || weights.size() != batch) {
    throw InvalidArgument("gradients: targets/weights do not match batch size");
  }
  const Activations act = RunForward(params, features);
  const auto& w = params.layers.weights;
  const std::size_t num_layers = w.size();

  LossAndGradients out;
  Eigen::MatrixXd delta(2, static_cast<Eigen::Index>(batch));
  for (std::size_t i = 0; i < batch; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const PredictionDistribution p = Softmax(act.logits(0, c), act.logits(1, c));
    out.loss += weights[i] * ExampleLoss(p, targets[i]);
    delta.col(c) = weights[i] * LogitGradient(p, targets[i]);
  }
  if (!std::isfinite(out.loss)) {
    throw NonFiniteError("gradients: non-finite loss in batch " + std::to_string(batch_index),
                         batch_index);
  }

  out.gradients.weights.resize(num_layers);
  out.gradients.biases.resize(num_layers);
  for (std::size_t l = num_layers; l-- > 0;) {
    const Eigen::MatrixXd& input = act.inputs[l];
    out.gradients.weights[l] = delta * input.transpose();
    out.gradients.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = w[l].transpose() * delta;
    delta = back.array() * (1.0 - input.array().square());
  }
  return out;
}

LossAndGradients MeanLossGradients(const GuardParams& params, const FeatureMatrix& features,
                                   std::span<const LossTarget> targets,
                                   std::size_t batch_index) {
  const auto batch = static_cast<std::size_t>(features.cols());
  std::vector<double> weights(batch, batch ? 1.0 / static_cast<double>(batch) : 0.0);
  return ComputeGradients(params, features, targets, weights, batch_index);
}

void ApplyUpdate(GuardParams& params, const LayerStack& gradients, OptimizerState& state,
                 double lr, double momentum) {
  auto& layers = params.layers;
  if (gradients.weights.size() != layers.weights.size()) {
    throw InvalidArgument("update: gradient shape mismatch");
  }
  if (lr == 0.0) return;

  LayerStack step;
  if (momentum != 0.0) {
    if (state.velocity.weights.empty()) state.velocity = gradients.ZerosLike();
    for (std::size_t l = 0; l < layers.weights.size(); ++l) {
      state.velocity.weights[l] = momentum * state.velocity.weights[l] + gradients.weights[l];
      state.velocity.biases[l] = momentum * state.velocity.biases[l] + gradients.biases[l];
    }
    step = state.velocity;
  } else {
    step = gradients;
  }

  LayerStack next = layers;
  for (std::size_t l = 0; l < layers.weights.size(); ++l) {
    next.weights[l] -= lr * step.weights[l];
    next.biases[l] -= lr * step.biases[l];
  }
  if (!next.AllFinite()) throw NonFiniteError("update: non-finite parameters", 0);
  layers = std::move(next);
}

// ---------------------------------------------------------------------------
// Checkpoints

void SaveCheckpoint(const std::filesystem::path& path, const GuardParams& params,
                    const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot open " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  WritePod<std::uint32_t>(out, kCheckpointVersion);
  WritePod<std::uint32_t>(out, static_cast<std::uint32_t>(params.capacity.role));
  WritePod<std::uint32_t>(out, static_cast<std::uint32_t>(params.capacity.hidden_layers));
  WritePod<std::uint32_t>(out, static_cast<std::uint32_t>(params.capacity.hidden_width));
  WritePod<std::uint64_t>(out, params.layout.dimension);
  WritePod<std::uint64_t>(out, params.layout.k);
  WritePod<std::uint64_t>(out, params.seed);
  for (std::size_t l = 0; l < params.layers.weights.size(); ++l) {
    const auto& m = params.layers.weights[l];
    WritePod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    WritePod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) WritePod<double>(out, m(r, c));
    }
    const auto& b = params.layers.biases[l];
    WritePod<std::uint64_t>(out, static_cast<std::uint64_t>(b.size()));
    for (Eigen::Index r = 0; r < b.size(); ++r) WritePod<double>(out, b(r));
  }
  if (!out) throw Error("checkpoint: write failed for " + path.string());

  nlohmann::json sidecar = {
      {"capacity",
       {{"hidden_layers", params.capacity.hidden_layers},
        {"hidden_width", params.capacity.hidden_width},
        {"role", RoleName(params.capacity.role)}}},
      {"layout", {{"dimension", params.layout.dimension}, {"k", params.layout.k}}},
      {"seed", params.seed},
      {"parameter_count", params.ParameterCount()},
      {"param_hash", HexDigest(params.Hash())},
      {"metadata", metadata}};
  std::ofstream side(SidecarPath(path), std::ios::trunc);
  side << sidecar.dump(2) << '\n';
}

GuardParams LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error("checkpoint: bad magic in " + path.string());
  }
  if (ReadPod<std::uint32_t>(in) != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version");
  }
  GuardParams p;
  p.capacity.role = ReadPod<std::uint32_t>(in) == 0 ? Role::kTeacher : Role::kStudent;
  p.capacity.hidden_layers = static_cast<int>(ReadPod<std::uint32_t>(in));
  p.capacity.hidden_width = static_cast<int>(ReadPod<std::uint32_t>(in));
  p.capacity.Validate();
  p.layout.dimension = ReadPod<std::uint64_t>(in);
  p.layout.k = ReadPod<std::uint64_t>(in);
  p.seed = ReadPod<std::uint64_t>(in);

  std::size_t expected_in = p.layout.size();
  const std::size_t num_layers = static_cast<std::size_t>(p.capacity.hidden_layers) + 1;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto rows = ReadPod<std::uint64_t>(in);
    const auto cols = ReadPod<std::uint64_t>(in);
    const std::uint64_t want_rows =
        l + 1 == num_layers ? kNumLabels : static_cast<std::uint64_t>(p.capacity.hidden_width);
    if (rows != want_rows || cols != expected_in) {
      throw Error("checkpoint: layer shape does not match header");
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = ReadPod<double>(in);
    }
    const auto blen = ReadPod<std::uint64_t>(in);
    if (blen != rows) throw Error("checkpoint: bias shape does not match header");
    Eigen::VectorXd b(static_cast<Eigen::Index>(blen));
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = ReadPod<double>(in);
    p.layers.weights.push_back(std::move(m));
    p.layers.biases.push_back(std::move(b));
    expected_in = rows;
  }
  return p;
}

}  // namespace ragguard
