#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace ragguard {

// Content hash in the style of a git blob id: the file bytes prefixed with
// "blob <size>\0", digested with 64-bit FNV-1a. Hex, 16 digits.
std::string ContentHash(const std::filesystem::path& path);
std::string ContentHashBytes(std::string_view bytes);

// Reproducibility record written next to every command's outputs. Carries no
// wall-clock data so that identical runs give identical manifests.
struct Manifest {
  std::string command;
  std::string config_hash;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;

  // Inputs and outputs are listed by file name with their content hashes.
  nlohmann::json ToJson() const;
  void Write(const std::filesystem::path& path) const;
};

}  // namespace ragguard
