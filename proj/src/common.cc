#include "ragguard/common.h"

#include <cstdio>

namespace ragguard {

std::string_view LabelName(Label label) {
  return label == Label::kSafe ? "safe" : "unsafe";
}

std::optional<Label> ParseLabel(std::string_view name) {
  if (name == "safe") return Label::kSafe;
  if (name == "unsafe") return Label::kUnsafe;
  return std::nullopt;
}

std::string HexDigest(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace ragguard
