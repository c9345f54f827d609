#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "divmatch/hetgraph.hpp"
#include "divmatch/matcher.hpp"

namespace divmatch {

/// A held-out valid watch and the user's behaviors before it.
struct TestInstance {
  std::string user_id;
  std::uint32_t clicked = 0;
  BehaviorSequence behaviors;
};

/// {"user_id", "video_id" (the click), "behaviors": [[video_id, complete], ...]}
TestInstance parse_test_instance(std::string_view json_line, const HeteroGraph& graph,
                                 const MatchConfig& config = {});
std::vector<TestInstance> load_test_instances(const std::filesystem::path& path,
                                              const HeteroGraph& graph,
                                              const MatchConfig& config = {});

/// Fraction of instances whose click is within the first `n` candidates of
/// that user's list. Users without a list count as misses.
double hit_at_n(std::span<const TestInstance> instances, std::span<const CandidateList> lists,
                std::size_t n);

std::size_t missing_lists(std::span<const TestInstance> instances,
                          std::span<const CandidateList> lists);

// ---------------------------------------------------------------------------
// Individual diversity
// ---------------------------------------------------------------------------

/// Facet metadata per video: tags and media from the graph, categories from
/// the metadata file (evaluation only).
struct VideoFacets {
  std::vector<std::vector<std::uint32_t>> tags;
  std::vector<std::optional<std::uint32_t>> media;
  std::vector<std::optional<std::uint32_t>> category;

  std::size_t video_count() const { return tags.size(); }
};

/// `categories` holds one (possibly empty) category string per video.
VideoFacets make_facets(const HeteroGraph& graph, std::span<const std::string> categories);
/// Reads categories from a metadata JSONL, keyed by the graph's video names.
VideoFacets load_facets(const HeteroGraph& graph, const std::filesystem::path& metas);

struct FacetCounts {
  double tag = 0.0;
  double category = 0.0;
  double media = 0.0;
};

/// Distinct tags, categories and medias among `videos`.
FacetCounts count_facets(const VideoFacets& facets, std::span<const std::uint32_t> videos);

/// Tags, medias and the distinct behavior videos of the test set.
std::vector<NodeRef> element_queries(const HeteroGraph& graph,
                                     std::span<const TestInstance> instances);

/// Mean facet counts over the top-k videos retrieved by each query node.
FacetCounts element_diversity(const SimilarityIndex& index, const VideoFacets& facets,
                              std::span<const NodeRef> queries, std::size_t k = 20);

/// Mean facet counts over the candidate lists.
FacetCounts list_diversity(std::span<const CandidateList> lists, const VideoFacets& facets);

// ---------------------------------------------------------------------------
// Aggregate diversity and baselines
// ---------------------------------------------------------------------------

struct WatchEvent {
  std::uint32_t video = 0;
  std::uint32_t session = 0;
  std::int64_t timestamp = 0;
  double watch_ratio = 0.0;
};

struct TrainLog {
  std::vector<WatchEvent> events;
};

TrainLog train_log_from(const Corpus& corpus, const HeteroGraph& graph);
/// Interactions JSONL resolved against the graph's video names; unknown
/// videos and malformed lines are skipped.
TrainLog load_train_log(const std::filesystem::path& path, const HeteroGraph& graph);

struct GlobalDiversity {
  double coverage = 0.0;
  double long_tail = 0.0;
  double novelty = 0.0;
};

struct EvalConfig {
  std::vector<std::size_t> hit_ns = {100, 200, 300, 500};
  std::size_t element_k = 20;
  double long_tail_days = 15.0;
  double min_watch = 0.7;
  std::size_t baseline_k = 500;
};

GlobalDiversity global_diversity(std::span<const CandidateList> lists, std::size_t video_count,
                                 const TrainLog& log, std::span<const CandidateList> reference,
                                 const EvalConfig& config = {});

/// Global top-k by valid-watch count, identical for every user.
std::vector<CandidateList> popularity_baseline(const TrainLog& log, std::size_t video_count,
                                               std::span<const BehaviorSequence> users,
                                               std::size_t k, double min_watch = 0.7);

/// Session co-occurrence: score(v) = sum over distinct behavior videos b of
/// the number of sessions where b and v were both validly watched.
std::vector<CandidateList> cooccurrence_baseline(const TrainLog& log,
                                                 std::span<const BehaviorSequence> users,
                                                 std::size_t k, double min_watch = 0.7);

struct MetricReport {
  std::map<std::size_t, double> hit;
  std::optional<FacetCounts> element;
  FacetCounts list;
  GlobalDiversity global;
  std::size_t instances = 0;
  std::size_t lists = 0;
  std::size_t missing_lists = 0;
};

/// Runs every metric. `index` may be null, in which case element-level
/// diversity is not computed.
MetricReport evaluate(std::span<const TestInstance> instances, std::span<const CandidateList> lists,
                      const HeteroGraph& graph, const VideoFacets& facets, const TrainLog& log,
                      std::span<const CandidateList> reference, const SimilarityIndex* index,
                      const EvalConfig& config = {});

nlohmann::json to_json(const MetricReport& report);

}  // namespace divmatch
