#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ragguard {

enum class Label : std::uint8_t { kSafe = 0, kUnsafe = 1 };

inline constexpr int kNumLabels = 2;

std::string_view LabelName(Label label);
std::optional<Label> ParseLabel(std::string_view name);
inline Label Opposite(Label label) {
  return label == Label::kSafe ? Label::kUnsafe : Label::kSafe;
}
inline int LabelIndex(Label label) { return static_cast<int>(label); }

using EntryId = std::uint64_t;

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Operation is valid but not in the current state (e.g. promoting twice).
class Conflict : public Error {
 public:
  using Error::Error;
};

// 64-bit FNV-1a. Stable across platforms; used for n-gram hashing, config
// hashes and parameter fingerprints.
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t Fnv1a(const void* data, std::size_t size,
                           std::uint64_t state = kFnvOffset) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state ^= bytes[i];
    state *= kFnvPrime;
  }
  return state;
}

inline std::uint64_t Fnv1a(std::string_view text,
                           std::uint64_t state = kFnvOffset) {
  return Fnv1a(text.data(), text.size(), state);
}

// splitmix64 finalizer; spreads FNV output so low bits are usable for modulo.
inline std::uint64_t Mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string HexDigest(std::uint64_t value);

}  // namespace ragguard
