#include "divmatch/common.hpp"

#include <fstream>
#include <sstream>

#include "divmatch/binary_io.hpp"

namespace divmatch {

std::string_view to_string(NodeType t) {
  switch (t) {
    case NodeType::Video: return "video";
    case NodeType::Tag: return "tag";
    case NodeType::Media: return "media";
    case NodeType::UserGroup: return "user_group";
    case NodeType::Word: return "word";
  }
  return "unknown";
}

NodeType node_type_from_string(std::string_view name) {
  for (NodeType t : kAllNodeTypes) {
    if (to_string(t) == name) return t;
  }
  throw InputError("unknown node type '" + std::string(name) + "'");
}

std::string to_string(const NodeRef& n) {
  return std::string(to_string(n.type)) + ":" + std::to_string(n.local_id);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  // Rejection on the top of the range keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

}  // namespace divmatch

namespace divmatch::io {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

}  // namespace divmatch::io
