#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "divmatch/common.hpp"
#include "divmatch/hetgraph.hpp"

namespace divmatch {

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// Aggregated embeddings per node type, one column per node. Types that
/// were not exported are empty (0 columns).
struct EmbeddingSet {
  std::array<Eigen::MatrixXf, kNodeTypeCount> by_type;

  const Eigen::MatrixXf& of(NodeType t) const { return by_type[index_of(t)]; }
  Eigen::MatrixXf& of(NodeType t) { return by_type[index_of(t)]; }
  Eigen::Index dim() const;
};

/// GDRE: magic, u32 node type, u32 count, u32 dim, count*dim f32 (node
/// major), then a u64 config-hash trailer.
std::string serialize_embeddings(NodeType type, const Eigen::MatrixXf& embeddings,
                                 std::uint64_t config_hash = 0);
struct EmbeddingFile {
  NodeType type = NodeType::Video;
  Eigen::MatrixXf embeddings;
  std::uint64_t config_hash = 0;
};
EmbeddingFile deserialize_embeddings(std::string_view bytes);

std::filesystem::path embedding_path(const std::filesystem::path& dir, NodeType type);
void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& dir,
                     std::uint64_t config_hash = 0);
/// Loads every GDRE file present in `dir`.
EmbeddingSet load_embeddings(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Similarity index
// ---------------------------------------------------------------------------

struct ScoredVideo {
  std::uint32_t video = 0;
  double score = 0.0;
  friend bool operator==(const ScoredVideo&, const ScoredVideo&) = default;
};

/// Descending score, ascending id.
inline bool ranks_before(const ScoredVideo& a, const ScoredVideo& b) {
  return a.score != b.score ? a.score > b.score : a.video < b.video;
}

enum class IndexBackend : std::uint8_t { Exact, Ivf };

struct IndexOptions {
  IndexBackend backend = IndexBackend::Exact;
  std::size_t ivf_lists = 0;    // 0: about sqrt(#videos)
  std::size_t ivf_probes = 0;   // 0: a quarter of the lists
  std::size_t kmeans_iterations = 10;
  std::uint64_t seed = 7;
  /// Cache the top-k videos of every video, tag and media node at build time.
  std::size_t precompute_k = 0;
};

/// Cosine top-k over video embeddings, queried by any embedded node.
class SimilarityIndex {
 public:
  explicit SimilarityIndex(const EmbeddingSet& embeddings, IndexOptions options = {});

  /// Top-k videos by cosine to `query`, excluding `query` itself.
  std::vector<ScoredVideo> query(NodeRef query, std::size_t k) const;

  /// Top-k videos by cosine to an arbitrary vector.
  std::vector<ScoredVideo> query_vector(const Eigen::VectorXd& v, std::size_t k,
                                        std::optional<std::uint32_t> exclude = {}) const;

  /// Cosine between two embedded nodes.
  double similarity(NodeRef a, NodeRef b) const;

  std::uint32_t video_count() const { return static_cast<std::uint32_t>(unit_[0].cols()); }
  bool has(NodeRef n) const { return n.local_id < unit_[index_of(n.type)].cols(); }
  const IndexOptions& options() const { return options_; }

 private:
  std::vector<ScoredVideo> exact(const Eigen::VectorXd& q, std::size_t k,
                                 std::optional<std::uint32_t> exclude) const;
  std::vector<ScoredVideo> approximate(const Eigen::VectorXd& q, std::size_t k,
                                       std::optional<std::uint32_t> exclude) const;
  void build_ivf();

  IndexOptions options_;
  std::array<Eigen::MatrixXd, kNodeTypeCount> unit_;  // L2-normalized columns
  Eigen::MatrixXd centroids_;
  std::vector<std::vector<std::uint32_t>> lists_;
  std::array<std::vector<std::vector<ScoredVideo>>, kNodeTypeCount> cache_;
};

// ---------------------------------------------------------------------------
// Multi-channel matching
// ---------------------------------------------------------------------------

struct Behavior {
  std::uint32_t video = 0;
  double complete = 1.0;
};

/// Valid watches of one user, oldest first.
struct BehaviorSequence {
  std::string user_id;
  std::vector<Behavior> items;
};

struct MatchConfig {
  std::size_t top_k = 500;
  std::size_t per_key = 100;
  std::size_t top_attributes = 10;
  std::size_t max_behaviors = 200;
  double eta = 0.95;
  double min_watch = 0.7;
  double lambda_v = 1.0;
  double lambda_t = 1.0;
  double lambda_m = 1.0;
};

/// time_m = 1, time_j = eta * time_{j+1}.
std::vector<double> time_decay(std::size_t m, double eta);

using ChannelScores = std::map<std::uint32_t, double>;

struct Preference {
  std::uint32_t id = 0;
  double weight = 0.0;
};

ChannelScores video_channel(const BehaviorSequence& seq, const SimilarityIndex& index,
                            const MatchConfig& config = {});

/// Top tags (or medias) of the behaviors by summed complete * time.
std::vector<Preference> attribute_preference(const BehaviorSequence& seq, const HeteroGraph& graph,
                                             NodeType attribute, const MatchConfig& config = {});
inline std::vector<Preference> tag_preference(const BehaviorSequence& seq, const HeteroGraph& graph,
                                              const MatchConfig& config = {}) {
  return attribute_preference(seq, graph, NodeType::Tag, config);
}

/// Per-key retrieval weighted by normalized preference.
ChannelScores attribute_channel(const std::vector<Preference>& preferred, NodeType attribute,
                                const SimilarityIndex& index, const MatchConfig& config = {});
inline ChannelScores tag_channel(const std::vector<Preference>& preferred,
                                 const SimilarityIndex& index, const MatchConfig& config = {}) {
  return attribute_channel(preferred, NodeType::Tag, index, config);
}
ChannelScores media_channel(const BehaviorSequence& seq, const HeteroGraph& graph,
                            const SimilarityIndex& index, const MatchConfig& config = {});

struct Candidate {
  std::uint32_t video = 0;
  double score = 0.0;
  double score_v = 0.0;
  double score_t = 0.0;
  double score_m = 0.0;
};

struct CandidateList {
  std::string user_id;
  std::vector<Candidate> items;
};

/// Joint ranking of the three channels; watched videos are excluded.
CandidateList match(const BehaviorSequence& seq, const HeteroGraph& graph,
                    const SimilarityIndex& index, const MatchConfig& config = {});

/// Parses one behaviors line: {"user_id": ..., "behaviors": [[video_id, complete], ...]}.
/// Unknown videos and non-valid watches are dropped; the newest
/// `max_behaviors` are kept.
BehaviorSequence parse_behaviors(std::string_view json_line, const HeteroGraph& graph,
                                 const MatchConfig& config = {});

/// Candidate TSV: optional "# config_hash=<hex>" line, then
/// user_id, rank, video_id, score, score_v, score_t, score_m.
std::string candidates_tsv(const std::vector<CandidateList>& lists, const HeteroGraph& graph,
                           std::optional<std::uint64_t> config_hash = {});

struct CandidateFile {
  std::vector<CandidateList> lists;
  std::optional<std::uint64_t> config_hash;
};
CandidateFile parse_candidates_tsv(std::string_view text, const HeteroGraph& graph);

}  // namespace divmatch
