#include "ragguard/config.h"

#include <algorithm>
#include <cctype>
#include <fstream>

extern char** environ;

namespace ragguard {
namespace {

using nlohmann::json;

constexpr std::string_view kEnvPrefix = "RAGGUARD_";

std::string Upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

json ParseValue(const std::string& raw) {
  json v = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return raw;
  return v;
}

// Objects that are empty in the defaults accept arbitrary keys (label
// mappings); everything else must already exist.
void CheckKnown(const json& defaults, const json& doc, const std::string& where) {
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto d = defaults.find(it.key());
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (d == defaults.end()) throw InvalidArgument("config: unknown key " + path);
    if (d->is_object() && !d->empty()) {
      if (!it->is_object()) throw InvalidArgument("config: " + path + " must be an object");
      CheckKnown(*d, *it, path);
    }
  }
}

void SetPath(json& doc, const json& defaults, const std::string& dotted, json value) {
  json* node = &doc;
  const json* def = &defaults;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw InvalidArgument("config: malformed key " + dotted);
    const bool open = def != nullptr && def->is_object() && def->empty();
    if (def != nullptr && !open && !def->contains(key)) {
      throw InvalidArgument("config: unknown key " + dotted);
    }
    const json* next_def = def != nullptr && def->contains(key) ? &(*def)[key] : nullptr;
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (!node->is_object()) *node = json::object();
    def = next_def;
    start = dot + 1;
  }
}

GuardCapacity CapacityFrom(const json& j, Role role) {
  GuardCapacity c;
  c.role = role;
  c.hidden_layers = j.at("hidden_layers").get<int>();
  c.hidden_width = j.at("hidden_width").get<int>();
  c.Validate();
  return c;
}

}  // namespace

json Config::Defaults() {
  return json{
      {"encoder", EncoderConfig{}},
      {"kb", {{"path", nullptr}, {"k", 5}, {"epsilon", 0.4}}},
      {"model",
       {{"teacher", {{"hidden_layers", 2}, {"hidden_width", 256}}},
        {"student", {{"hidden_layers", 1}, {"hidden_width", 64}}},
        {"seed", 0},
        {"checkpoint", nullptr}}},
      {"perturbation", PerturbationConfig{}},
      {"training",
       {{"dataset", nullptr},
        {"split_seed", 0},
        {"label_mapping", json::object()},
        {"epochs", 10},
        {"seed", 0},
        {"teacher_opt", OptimizerOptions{}},
        {"student_opt", OptimizerOptions{}},
        {"kl_weight", 0.6},
        {"ce_weight", 0.4},
        {"reward_weight", 0.0},
        {"schedule", "canonical"}}},
      {"service",
       {{"host", "127.0.0.1"},
        {"port", 8080},
        {"tau_ms", 10.0},
        {"strict", false},
        {"retrieval_budget_ms", 5.0},
        {"metrics_window_s", 60.0},
        {"threads", 32},
        {"ekb_k", 3},
        {"feedback_log", nullptr}}},
  };
}

Config Config::FromJson(json doc) {
  const json defaults = Defaults();
  if (!doc.is_object()) throw InvalidArgument("config: document must be a JSON object");
  CheckKnown(defaults, doc, "");
  json merged = defaults;
  merged.merge_patch(doc);
  // merge_patch drops null members; keep every default key present.
  for (auto& [section, body] : defaults.items()) {
    for (auto& [key, value] : body.items()) {
      if (!merged[section].contains(key)) merged[section][key] = value;
    }
  }
  Config cfg(std::move(merged));
  // Surface type errors at load time rather than mid-run.
  cfg.encoder();
  cfg.perturbation();
  cfg.retrieval();
  cfg.teacher_capacity();
  cfg.student_capacity();
  cfg.distill();
  cfg.schedule();
  cfg.dataset_options();
  return cfg;
}

Config Config::Resolve(const std::optional<std::filesystem::path>& file,
                       const std::map<std::string, std::string>& env,
                       const std::vector<std::string>& overrides) {
  const json defaults = Defaults();
  json doc = json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error("cannot open config " + file->string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw InvalidArgument("config " + file->string() + ": " + e.what());
    }
    if (!doc.is_object()) throw InvalidArgument("config: document must be a JSON object");
    CheckKnown(defaults, doc, "");
  }

  for (const auto& [name, value] : env) {
    if (!name.starts_with(kEnvPrefix)) continue;
    const std::string rest = name.substr(kEnvPrefix.size());
    bool matched = false;
    for (auto& [section, body] : defaults.items()) {
      const std::string prefix = Upper(section) + "_";
      if (!rest.starts_with(prefix)) continue;
      for (auto& [key, unused] : body.items()) {
        if (Upper(key) == rest.substr(prefix.size())) {
          SetPath(doc, defaults, section + "." + key, ParseValue(value));
          matched = true;
        }
      }
    }
    if (!matched) throw InvalidArgument("config: unknown environment override " + name);
  }

  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw InvalidArgument("config: override must be section.key=value, got " + o);
    }
    SetPath(doc, defaults, o.substr(0, eq), ParseValue(o.substr(eq + 1)));
  }
  try {
    return FromJson(std::move(doc));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

std::uint64_t Config::Hash() const { return Fnv1a(doc_.dump()); }

EncoderConfig Config::encoder() const { return doc_.at("encoder").get<EncoderConfig>(); }

PerturbationConfig Config::perturbation() const {
  // An empty variant list means the defaults derived from the encoder;
  // epsilon always follows the retrieval setting.
  json j = doc_.at("perturbation");
  if (j.at("encoder_variants").empty()) j["encoder_variants"] = DefaultEncoderVariants(encoder());
  j["epsilon"] = retrieval().epsilon;
  return j.get<PerturbationConfig>();
}

RetrievalOptions Config::retrieval() const {
  RetrievalOptions r;
  const auto& kb = doc_.at("kb");
  r.k = kb.at("k").get<std::size_t>();
  r.epsilon = kb.at("epsilon").get<double>();
  if (r.k < 1) throw InvalidArgument("config: kb.k must be >= 1");
  if (!(r.epsilon >= 0.0 && r.epsilon <= 2.0)) {
    throw InvalidArgument("config: kb.epsilon must be in [0, 2]");
  }
  return r;
}

GuardCapacity Config::teacher_capacity() const {
  return CapacityFrom(doc_.at("model").at("teacher"), Role::kTeacher);
}

GuardCapacity Config::student_capacity() const {
  return CapacityFrom(doc_.at("model").at("student"), Role::kStudent);
}

FeatureLayout Config::layout() const { return {encoder().dimension, retrieval().k}; }

DistillOptions Config::distill() const {
  const auto& t = doc_.at("training");
  DistillOptions d;
  d.lambda = doc_.at("perturbation").at("lambda").get<double>();
  d.kl_weight = t.at("kl_weight").get<double>();
  d.ce_weight = t.at("ce_weight").get<double>();
  d.reward_weight = t.at("reward_weight").get<double>();
  d.teacher_opt = t.at("teacher_opt").get<OptimizerOptions>();
  d.student_opt = t.at("student_opt").get<OptimizerOptions>();
  d.Validate();
  return d;
}

Schedule Config::schedule() const {
  const auto& t = doc_.at("training");
  const auto epochs = t.at("epochs").get<std::size_t>();
  if (epochs < 1) throw InvalidArgument("config: training.epochs must be >= 1");
  const auto& s = t.at("schedule");
  Schedule out;
  if (s.is_string()) {
    if (s.get<std::string>() != "canonical") {
      throw InvalidArgument("config: training.schedule must be \"canonical\" or a mode list");
    }
    out = Schedule::Canonical(epochs);
  } else {
    out.modes = s.get<std::vector<int>>();
  }
  out.Validate();
  return out;
}

DatasetOptions Config::dataset_options() const {
  const auto& t = doc_.at("training");
  DatasetOptions o;
  o.mapping = t.at("label_mapping").get<LabelMapping>();
  o.split_seed = t.at("split_seed").get<std::uint64_t>();
  return o;
}

std::map<std::string, std::string> ProcessEnvironment() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string_view kv(*e);
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) continue;
    if (!kv.starts_with(kEnvPrefix)) continue;
    out.emplace(std::string(kv.substr(0, eq)), std::string(kv.substr(eq + 1)));
  }
  return out;
}

}  // namespace ragguard
