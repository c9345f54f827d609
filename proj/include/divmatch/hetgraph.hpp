#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "divmatch/common.hpp"

namespace divmatch {

// ---------------------------------------------------------------------------
// Raw records
// ---------------------------------------------------------------------------

struct InteractionRecord {
  std::string user_id;
  std::string video_id;
  std::int64_t timestamp = 0;
  double watch_ratio = 0.0;
  std::string session_id;
};

struct VideoMeta {
  std::string video_id;
  std::vector<std::string> title_words;
  std::vector<std::string> tags;
  std::string media_id;
  std::string category;
};

enum class Gender : std::uint8_t { Unknown, Female, Male };

struct UserProfile {
  std::string user_id;
  Gender gender = Gender::Unknown;
  int age = 0;
  std::string location;
};

InteractionRecord parse_interaction(std::string_view json_line);
VideoMeta parse_video_meta(std::string_view json_line);
UserProfile parse_user_profile(std::string_view json_line);

std::string to_json_line(const InteractionRecord& r);
std::string to_json_line(const VideoMeta& m);
std::string to_json_line(const UserProfile& p);

/// Lowercased whitespace/punctuation tokenization of a title fragment.
/// Bytes >= 0x80 are kept as word characters so UTF-8 text survives.
std::vector<std::string> tokenize_title(std::string_view text);

// ---------------------------------------------------------------------------
// Ingested corpus
// ---------------------------------------------------------------------------

/// Dense string interning; ids follow first appearance.
class Interner {
 public:
  std::uint32_t intern(const std::string& name);
  std::optional<std::uint32_t> find(const std::string& name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t video = 0;
  std::uint32_t session = 0;
  std::int64_t timestamp = 0;
  double watch_ratio = 0.0;
};

struct Corpus {
  Interner videos;
  Interner tags;
  Interner medias;
  Interner words;
  Interner groups;
  Interner users;
  Interner sessions;

  // Indexed by video id.
  std::vector<std::vector<std::uint32_t>> video_tags;
  std::vector<std::vector<std::uint32_t>> video_words;
  std::vector<std::optional<std::uint32_t>> video_media;
  std::vector<std::string> video_category;

  // Indexed by user id; users without a profile belong to no group.
  std::vector<std::optional<std::uint32_t>> user_group;

  std::vector<Interaction> interactions;
};

struct LineError {
  std::string stream;
  std::size_t line = 0;
  std::string message;
};

struct IngestReport {
  std::vector<LineError> errors;
  std::size_t dropped_unknown_video = 0;
  std::size_t dropped_duplicates = 0;
  std::size_t users_without_profile = 0;
};

struct IngestOptions {
  /// Ages are grouped as floor(age / width) * width; 1 keeps ages verbatim.
  int age_bucket_width = 1;
  /// Fraction of malformed lines per stream above which ingest aborts.
  double max_malformed_fraction = 0.01;
};

struct IngestResult {
  Corpus corpus;
  IngestReport report;
};

/// Parses the three JSON Lines streams. Malformed lines are reported with
/// their line number; exceeding the malformed fraction throws InputError.
IngestResult ingest(std::istream& interactions, std::istream& metas, std::istream& profiles,
                    const IngestOptions& options = {});

IngestResult ingest_files(const std::filesystem::path& interactions,
                          const std::filesystem::path& metas,
                          const std::filesystem::path& profiles,
                          const IngestOptions& options = {});

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

enum class EdgeType : std::uint8_t { VV = 0, VU = 1, VT = 2, VW = 3, VM = 4, TT = 5 };

inline constexpr std::size_t kEdgeTypeCount = 6;
inline constexpr std::array<EdgeType, kEdgeTypeCount> kAllEdgeTypes = {
    EdgeType::VV, EdgeType::VU, EdgeType::VT, EdgeType::VW, EdgeType::VM, EdgeType::TT};

constexpr std::size_t index_of(EdgeType e) { return static_cast<std::size_t>(e); }
std::string_view to_string(EdgeType e);

/// Endpoint types of an edge type, in canonical (first, second) order.
std::pair<NodeType, NodeType> endpoint_types(EdgeType e);

/// The edge type joining two node types, if the pair is a legal edge.
std::optional<EdgeType> edge_type_between(NodeType a, NodeType b);

/// Canonical edge: `first` has the first endpoint type; same-type edges
/// keep first < second.
struct Edge {
  std::uint32_t first = 0;
  std::uint32_t second = 0;
  friend constexpr auto operator<=>(const Edge&, const Edge&) = default;
};

using NodeCounts = std::array<std::uint32_t, kNodeTypeCount>;
using EdgeLists = std::array<std::vector<Edge>, kEdgeTypeCount>;
using NodeNames = std::array<std::vector<std::string>, kNodeTypeCount>;

/// Immutable undirected, unweighted heterogeneous graph.
class HeteroGraph {
 public:
  HeteroGraph() = default;

  /// Canonicalizes the edge lists (orientation, sort, dedup, self-loop
  /// removal) and validates endpoint ranges. Names are optional per type:
  /// either empty or one per node.
  HeteroGraph(NodeCounts counts, EdgeLists edges, NodeNames names = {});

  const NodeCounts& counts() const { return counts_; }
  std::uint32_t node_count(NodeType t) const { return counts_[index_of(t)]; }
  std::uint32_t total_nodes() const { return offsets_.back(); }
  std::size_t edge_count() const;

  std::uint32_t global_id(NodeRef n) const { return offsets_[index_of(n.type)] + n.local_id; }
  NodeRef node_at(std::uint32_t global) const;
  bool contains(NodeRef n) const { return n.local_id < node_count(n.type); }

  /// All neighbors across edge types, sorted ascending.
  std::span<const NodeRef> neighbors(NodeRef n) const;
  std::vector<NodeRef> neighbors(NodeRef n, EdgeType e) const;
  std::size_t degree(NodeRef n) const { return neighbors(n).size(); }
  bool has_edge(NodeRef a, NodeRef b) const;

  std::span<const Edge> edges(EdgeType e) const { return edges_[index_of(e)]; }
  const EdgeLists& edge_lists() const { return edges_; }

  const NodeNames& names() const { return names_; }
  std::optional<NodeRef> find(NodeType t, const std::string& name) const;
  std::string name_of(NodeRef n) const;

  friend bool operator==(const HeteroGraph& a, const HeteroGraph& b) {
    return a.counts_ == b.counts_ && a.edges_ == b.edges_ && a.names_ == b.names_;
  }

 private:
  void build_adjacency();

  NodeCounts counts_{};
  std::array<std::uint32_t, kNodeTypeCount + 1> offsets_{};
  EdgeLists edges_;
  NodeNames names_;
  std::vector<std::size_t> adj_offsets_ = {0};
  std::vector<NodeRef> adjacency_;
  std::array<std::unordered_map<std::string, std::uint32_t>, kNodeTypeCount> lookup_;
};

struct EdgeRuleConfig {
  double min_watch = 0.7;            // valid watch iff watch_ratio > min_watch
  int min_weekly = 3;                // VU needs this many valid watches in one window
  std::int64_t window_seconds = 7 * 24 * 3600;
  std::optional<std::int64_t> week_anchor;  // nullopt: corpus minimum timestamp
};

HeteroGraph build_graph(const Corpus& corpus, const EdgeRuleConfig& rules = {});

/// Uniform sample without replacement over the union of all edge types,
/// returned in ascending NodeRef order. Degree <= budget returns every
/// neighbor.
std::vector<NodeRef> sample_neighbors(const HeteroGraph& graph, NodeRef node, std::size_t budget,
                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// GDR1 file
// ---------------------------------------------------------------------------

std::string serialize_graph(const HeteroGraph& graph, std::uint64_t config_hash = 0);

struct GraphArtifact {
  HeteroGraph graph;
  std::uint64_t config_hash = 0;
};

GraphArtifact deserialize_graph(std::string_view bytes);
void save_graph(const HeteroGraph& graph, const std::filesystem::path& path,
                std::uint64_t config_hash = 0);
GraphArtifact load_graph_artifact(const std::filesystem::path& path);
HeteroGraph load_graph(const std::filesystem::path& path);

}  // namespace divmatch
