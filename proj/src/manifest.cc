#include "ragguard/manifest.h"

#include <fstream>
#include <iterator>

#include "ragguard/common.h"

namespace ragguard {

std::string ContentHashBytes(std::string_view bytes) {
  std::string blob = "blob " + std::to_string(bytes.size());
  blob.push_back('\0');
  blob.append(bytes);
  return HexDigest(Fnv1a(blob));
}

std::string ContentHash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ContentHashBytes(bytes);
}

nlohmann::json Manifest::ToJson() const {
  auto files = [](const std::vector<std::filesystem::path>& paths) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : paths) {
      out.push_back({{"name", p.filename().string()}, {"content_hash", ContentHash(p)}});
    }
    return out;
  };
  return {{"command", command},   {"config_hash", config_hash}, {"config", config},
          {"seeds", seeds},       {"inputs", files(inputs)},    {"outputs", files(outputs)}};
}

void Manifest::Write(const std::filesystem::path& path) const {
  const auto doc = ToJson().dump(2);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << doc << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace ragguard
