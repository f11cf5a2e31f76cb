#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <string>
#include <vector>

#include "cli.h"
#include "ragguard/ekb.h"
#include "ragguard/guard_model.h"
#include "ragguard/knowledge_base.h"
#include "ragguard/perturbation.h"
#include "ragguard/service.h"
#include "ragguard/training.h"

namespace py = pybind11;

namespace ragguard {
namespace {

py::object ToPython(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::list ContextToList(const ContextSet& ctx, const KbSnapshot& snap) {
  py::list out;
  for (const auto& item : ctx.items) {
    const KbEntry* e = snap.Find(item.id);
    py::dict d;
    d["id"] = item.id;
    d["score"] = item.score;
    d["text"] = e ? e->text : std::string();
    d["label"] = e ? std::string(LabelName(e->label)) : std::string();
    out.append(d);
  }
  return out;
}

// A KB, its feedback layer and a loaded model behind one object.
class Guard {
 public:
  Guard(std::shared_ptr<KnowledgeBase> kb, const std::string& checkpoint, ServiceOptions options,
        std::size_t feedback_k)
      : kb_(std::move(kb)),
        ekb_(std::make_unique<EvolvingKb>(*kb_, EvolvingKb::Options{feedback_k, {}, {}})),
        service_(std::make_unique<GuardService>(*kb_, *ekb_, options)) {
    service_->LoadModel(LoadCheckpoint(checkpoint));
  }

  py::object Classify(const std::string& text) {
    ClassifyResponse r;
    {
      py::gil_scoped_release release;
      r = service_->Classify(text);
    }
    return ToPython(r.ToJson());
  }

  py::object Feedback(const std::string& text, const std::string& label, const std::string& source) {
    const auto l = ParseLabel(label);
    if (!l) throw InvalidArgument("label must be safe or unsafe");
    const auto s = ParseFeedbackSource(source);
    if (!s) throw InvalidArgument("unknown feedback source " + source);
    return ToPython(RecordToJson(ekb_->SubmitFeedback(text, *l, *s), ekb_->k()));
  }

  EntryId Promote(const std::string& text) { return ekb_->Promote(text).id; }
  std::uint64_t Refresh() { return ekb_->Refresh(); }
  py::object Metrics() const { return ToPython(service_->MetricsJson()); }

 private:
  std::shared_ptr<KnowledgeBase> kb_;
  std::unique_ptr<EvolvingKb> ekb_;
  std::unique_ptr<GuardService> service_;
};

Label ToLabel(const std::string& name) {
  const auto l = ParseLabel(name);
  if (!l) throw InvalidArgument("label must be safe or unsafe, got '" + name + "'");
  return *l;
}

}  // namespace
}  // namespace ragguard

PYBIND11_MODULE(_core, m) {
  using namespace ragguard;
  m.doc() = "Retrieval-augmented malicious-intent classifier";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<Conflict>(m, "Conflict", PyExc_RuntimeError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);

  py::enum_<Metric>(m, "Metric")
      .value("COSINE", Metric::kCosine)
      .value("DOT", Metric::kDot)
      .value("LEXICAL", Metric::kLexical);

  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init<>())
      .def_readwrite("ngram_orders", &EncoderConfig::ngram_orders)
      .def_readwrite("hash_buckets", &EncoderConfig::hash_buckets)
      .def_readwrite("hash_seed", &EncoderConfig::hash_seed)
      .def_readwrite("dimension", &EncoderConfig::dimension)
      .def_readwrite("metric", &EncoderConfig::metric)
      .def("validate", &EncoderConfig::Validate)
      .def("hash", &EncoderConfig::Hash);

  m.def("tokenize", [](const std::string& text) { return Tokenize(text); });
  m.def(
      "embed",
      [](const std::string& text, const EncoderConfig& cfg) { return Embed(text, cfg).values; },
      py::arg("text"), py::arg("config") = EncoderConfig{});
  m.def(
      "similarity",
      [](const std::string& a, const std::string& b, const EncoderConfig& cfg) {
        return Similarity(Encode(a, cfg), Encode(b, cfg), cfg.metric);
      },
      py::arg("a"), py::arg("b"), py::arg("config") = EncoderConfig{});

  py::class_<KnowledgeBase, std::shared_ptr<KnowledgeBase>>(m, "KnowledgeBase")
      .def(py::init([](const EncoderConfig& cfg) { return std::make_shared<KnowledgeBase>(cfg); }),
           py::arg("config") = EncoderConfig{})
      .def_static(
          "load",
          [](const std::filesystem::path& path, const EncoderConfig& cfg) {
            return std::shared_ptr<KnowledgeBase>(KnowledgeBase::Load(path, cfg));
          },
          py::arg("path"), py::arg("config") = EncoderConfig{})
      .def(
          "insert",
          [](KnowledgeBase& kb, std::string text, const std::string& label) {
            return kb.Insert(std::move(text), ToLabel(label));
          },
          py::arg("text"), py::arg("label"))
      .def("publish", &KnowledgeBase::Publish)
      .def("persist", &KnowledgeBase::Persist)
      .def("__len__", &KnowledgeBase::size)
      .def_property_readonly("pending", &KnowledgeBase::pending)
      .def_property_readonly("epoch", [](const KnowledgeBase& kb) { return kb.Snapshot()->epoch(); })
      .def(
          "search",
          [](const KnowledgeBase& kb, const std::string& text, std::size_t k, double epsilon) {
            const auto snap = kb.Snapshot();
            return ContextToList(snap->RetrieveTopK(text, k, epsilon), *snap);
          },
          py::arg("text"), py::arg("k") = 5, py::arg("epsilon") = 0.4)
      .def(
          "search_band",
          [](const KnowledgeBase& kb, const std::string& text, double delta, double epsilon) {
            const auto snap = kb.Snapshot();
            return ContextToList(snap->RetrieveRelaxed(text, delta, epsilon), *snap);
          },
          py::arg("text"), py::arg("delta"), py::arg("epsilon"));

  m.def(
      "confidence",
      [](const std::vector<std::string>& labels, std::size_t k) {
        std::vector<Label> parsed;
        for (const auto& l : labels) parsed.push_back(ToLabel(l));
        return Confidence(parsed, k);
      },
      py::arg("labels"), py::arg("k"));
  m.def(
      "attack_reward",
      [](double p_unsafe, const std::string& y_star, const std::string& y_hat) {
        return AttackReward(PredictionDistribution{1.0 - p_unsafe, p_unsafe}, ToLabel(y_star),
                            ToLabel(y_hat));
      },
      py::arg("p_unsafe"), py::arg("y_star"), py::arg("y_hat"));

  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const std::vector<std::pair<std::string, std::string>>& rows,
         const KnowledgeBase& kb, std::size_t k, double epsilon) {
        std::vector<Example> data;
        for (const auto& [text, label] : rows) data.push_back({text, ToLabel(label)});
        return ToPython(
            Evaluate(LoadCheckpoint(checkpoint), data, *kb.Snapshot(), {k, epsilon}).ToJson());
      },
      py::arg("checkpoint"), py::arg("rows"), py::arg("kb"), py::arg("k") = 5,
      py::arg("epsilon") = 0.4);

  py::class_<Guard>(m, "Guard")
      .def(py::init([](std::shared_ptr<KnowledgeBase> kb, const std::string& checkpoint,
                       std::size_t k, double epsilon, double tau_ms, std::size_t feedback_k) {
             ServiceOptions o;
             o.k = k;
             o.epsilon = epsilon;
             o.tau_ms = tau_ms;
             o.Validate();
             return std::make_unique<Guard>(std::move(kb), checkpoint, o, feedback_k);
           }),
           py::arg("kb"), py::arg("checkpoint"), py::arg("k") = 5, py::arg("epsilon") = 0.4,
           py::arg("tau_ms") = 10.0, py::arg("feedback_k") = 3)
      .def("classify", &Guard::Classify, py::arg("text"))
      .def("feedback", &Guard::Feedback, py::arg("text"), py::arg("label"),
           py::arg("source") = "end_user")
      .def("promote", &Guard::Promote, py::arg("text"))
      .def("refresh", &Guard::Refresh)
      .def("metrics", &Guard::Metrics);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<std::string> all = {"ragguard"};
        all.insert(all.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : all) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return RunCli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"));
}
