#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace divmatch {

enum class NodeType : std::uint8_t { Video = 0, Tag = 1, Media = 2, UserGroup = 3, Word = 4 };

inline constexpr std::size_t kNodeTypeCount = 5;
inline constexpr std::array<NodeType, kNodeTypeCount> kAllNodeTypes = {
    NodeType::Video, NodeType::Tag, NodeType::Media, NodeType::UserGroup, NodeType::Word};

constexpr std::size_t index_of(NodeType t) { return static_cast<std::size_t>(t); }
std::string_view to_string(NodeType t);
NodeType node_type_from_string(std::string_view name);

/// A node identified by its type and its index within that type.
/// Ordering is (type, local_id), which is also the order of global ids.
struct NodeRef {
  NodeType type = NodeType::Video;
  std::uint32_t local_id = 0;

  friend constexpr auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

std::string to_string(const NodeRef& n);

// Exit-code carrying error hierarchy used across the pipeline.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Malformed or missing input (exit code 2).
class InputError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Non-finite values or numeric breakdown (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Artifacts that do not belong together or are corrupt (exit code 4).
class ArtifactError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

std::uint64_t fnv1a64(std::string_view bytes);

/// mt19937_64 with distribution code pinned here so that streams are
/// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, n), unbiased.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Uniform real in [0, 1).
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace divmatch
