#pragma once

#include <atomic>
#include <filesystem>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "divmatch/common.hpp"
#include "divmatch/hetgraph.hpp"

namespace testing {

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("divmatch_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

inline divmatch::IngestResult ingest_lines(const std::vector<std::string>& interactions,
                                           const std::vector<std::string>& metas,
                                           const std::vector<std::string>& profiles = {},
                                           const divmatch::IngestOptions& options = {}) {
  std::istringstream i(join_lines(interactions)), m(join_lines(metas)), p(join_lines(profiles));
  return divmatch::ingest(i, m, p, options);
}

inline std::string watch(const std::string& user, const std::string& video, long long ts,
                         double ratio, const std::string& session) {
  divmatch::InteractionRecord r{user, video, ts, ratio, session};
  return divmatch::to_json_line(r);
}

inline std::string meta(const std::string& video, std::vector<std::string> tags = {},
                        std::string media = "", std::vector<std::string> words = {},
                        std::string category = "") {
  divmatch::VideoMeta m{video, std::move(words), std::move(tags), std::move(media),
                        std::move(category)};
  return divmatch::to_json_line(m);
}

inline std::string profile(const std::string& user, const std::string& gender, int age,
                           const std::string& location) {
  return R"({"user_id":")" + user + R"(","gender":")" + gender + R"(","age":)" +
         std::to_string(age) + R"(,"location":")" + location + "\"}";
}

/// Random graph with roughly `edges_per_type` candidate edges of every type.
inline divmatch::HeteroGraph random_graph(std::uint64_t seed, divmatch::NodeCounts counts,
                                          std::size_t edges_per_type) {
  using namespace divmatch;
  Rng rng(seed);
  EdgeLists lists;
  for (EdgeType e : kAllEdgeTypes) {
    const auto [a, b] = endpoint_types(e);
    const auto na = counts[index_of(a)], nb = counts[index_of(b)];
    if (na == 0 || nb == 0) continue;
    for (std::size_t k = 0; k < edges_per_type; ++k) {
      lists[index_of(e)].push_back({static_cast<std::uint32_t>(rng.uniform_index(na)),
                                    static_cast<std::uint32_t>(rng.uniform_index(nb))});
    }
  }
  return HeteroGraph(counts, std::move(lists));
}

}  // namespace testing
