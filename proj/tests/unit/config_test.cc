#include "ragguard/config.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace ragguard {
namespace {

namespace fs = std::filesystem;

fs::path WriteConfig(const std::string& name, const nlohmann::json& doc) {
  const auto path = fs::temp_directory_path() / name;
  std::ofstream(path) << doc.dump(2);
  return path;
}

TEST(ConfigTest, DefaultsResolve) {
  const auto cfg = Config::Resolve(std::nullopt, {}, {});
  EXPECT_EQ(cfg.encoder(), EncoderConfig{});
  EXPECT_EQ(cfg.retrieval().k, 5u);
  EXPECT_EQ(cfg.retrieval().epsilon, 0.4);
  EXPECT_EQ(cfg.teacher_capacity(), GuardCapacity::Teacher());
  EXPECT_EQ(cfg.student_capacity(), GuardCapacity::Student());
  EXPECT_EQ(cfg.schedule().modes, Schedule::Canonical(10).modes);
  EXPECT_EQ(cfg.distill().kl_weight, 0.6);
  EXPECT_EQ(cfg.perturbation().encoder_variants, DefaultEncoderVariants(EncoderConfig{}));
  EXPECT_EQ(cfg.section("service").at("tau_ms"), 10.0);
}

TEST(ConfigTest, PrecedenceFileThenEnvThenOverrides) {
  const auto path = WriteConfig("ragguard_cfg_prec.json",
                                {{"service", {{"port", 1111}, {"tau_ms", 7.5}}},
                                 {"kb", {{"k", 3}}}});
  const std::map<std::string, std::string> env = {{"RAGGUARD_SERVICE_PORT", "2222"},
                                                  {"RAGGUARD_KB_EPSILON", "0.3"}};
  const auto cfg = Config::Resolve(path, env, {"service.port=3333"});
  EXPECT_EQ(cfg.section("service").at("port"), 3333);
  EXPECT_EQ(cfg.section("service").at("tau_ms"), 7.5);
  EXPECT_EQ(cfg.retrieval().k, 3u);
  EXPECT_EQ(cfg.retrieval().epsilon, 0.3);
  const auto env_only = Config::Resolve(path, env, {});
  EXPECT_EQ(env_only.section("service").at("port"), 2222);
}

TEST(ConfigTest, OverrideValuesParseAsJsonOrString) {
  const auto cfg = Config::Resolve(std::nullopt, {},
                                   {"kb.path=data/kb.jsonl", "service.strict=true",
                                    "model.teacher.hidden_width=128",
                                    "training.label_mapping={\"Harmful\":\"unsafe\"}",
                                    "training.schedule=[0,2,1]"});
  EXPECT_EQ(cfg.section("kb").at("path"), "data/kb.jsonl");
  EXPECT_EQ(cfg.section("service").at("strict"), true);
  EXPECT_EQ(cfg.teacher_capacity().hidden_width, 128);
  EXPECT_EQ(cfg.schedule().modes, (std::vector<int>{0, 2, 1}));
  EXPECT_EQ(cfg.dataset_options().mapping.Map("Harmful"), Label::kUnsafe);
}

TEST(ConfigTest, UnknownKeysRejected) {
  EXPECT_THROW(Config::Resolve(std::nullopt, {}, {"service.nope=1"}), InvalidArgument);
  EXPECT_THROW(Config::Resolve(std::nullopt, {}, {"nosection.k=1"}), InvalidArgument);
  EXPECT_THROW(Config::Resolve(std::nullopt, {}, {"missing-equals"}), InvalidArgument);
  EXPECT_THROW(Config::Resolve(std::nullopt, {{"RAGGUARD_SERVICE_BOGUS", "1"}}, {}),
               InvalidArgument);
  const auto path = WriteConfig("ragguard_cfg_unknown.json", {{"kb", {{"kay", 3}}}});
  EXPECT_THROW(Config::Resolve(path, {}, {}), InvalidArgument);
}

TEST(ConfigTest, InvalidValuesRejected) {
  EXPECT_THROW(Config::Resolve(std::nullopt, {}, {"kb.k=0"}), InvalidArgument);
  EXPECT_THROW(Config::Resolve(std::nullopt, {}, {"training.kl_weight=0.9"}), InvalidArgument);
  EXPECT_THROW(Config::Resolve(std::nullopt, {}, {"training.schedule=\"weird\""}),
               InvalidArgument);
  EXPECT_THROW(Config::Resolve(std::nullopt, {}, {"encoder.metric=\"hamming\""}), Error);
}

TEST(ConfigTest, MissingOrMalformedFile) {
  EXPECT_THROW(Config::Resolve(fs::path("/nonexistent/cfg.json"), {}, {}), Error);
  const auto path = fs::temp_directory_path() / "ragguard_cfg_bad.json";
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(Config::Resolve(path, {}, {}), InvalidArgument);
}

TEST(ConfigTest, HashTracksContent) {
  const auto a = Config::Resolve(std::nullopt, {}, {});
  const auto b = Config::Resolve(std::nullopt, {}, {});
  const auto c = Config::Resolve(std::nullopt, {}, {"training.seed=7"});
  EXPECT_EQ(a.Hash(), b.Hash());
  EXPECT_NE(a.Hash(), c.Hash());
}

TEST(ConfigTest, EpsilonFlowsIntoPerturbation) {
  const auto cfg = Config::Resolve(std::nullopt, {}, {"kb.epsilon=0.5", "perturbation.lambda=2"});
  EXPECT_EQ(cfg.perturbation().epsilon, 0.5);
  EXPECT_EQ(cfg.distill().lambda, 2.0);
  EXPECT_EQ(cfg.layout(), (FeatureLayout{64, 5}));
}

TEST(ConfigTest, ProcessEnvironmentReadsPrefixedNames) {
  ::setenv("RAGGUARD_SERVICE_TAU_MS", "12.5", 1);
  ::setenv("UNRELATED_VARIABLE", "x", 1);
  const auto env = ProcessEnvironment();
  EXPECT_EQ(env.at("RAGGUARD_SERVICE_TAU_MS"), "12.5");
  EXPECT_EQ(env.count("UNRELATED_VARIABLE"), 0u);
  EXPECT_EQ(Config::Resolve(std::nullopt, env, {}).section("service").at("tau_ms"), 12.5);
  ::unsetenv("RAGGUARD_SERVICE_TAU_MS");
}

}  // namespace
}  // namespace ragguard
