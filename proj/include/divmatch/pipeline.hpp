#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "divmatch/evalsuite.hpp"
#include "divmatch/featspace.hpp"
#include "divmatch/fhgat.hpp"
#include "divmatch/hetgraph.hpp"
#include "divmatch/matcher.hpp"
#include "divmatch/synthgen.hpp"
#include "divmatch/trainer.hpp"

namespace divmatch {

struct PipelineConfig {
  SynthConfig synth;
  IngestOptions ingest;
  EdgeRuleConfig rules;
  ModelShape shape;
  double lambda_s = 0.5;
  TrainConfig train;
  std::uint64_t embed_seed = 7;
  MatchConfig match;
  IndexOptions index;
  EvalConfig eval;

  // Runtime knobs; they do not change any output and are not hashed.
  unsigned threads = 1;
  bool deterministic = false;
};

/// Canonical JSON, one object per section.
nlohmann::json to_json(const PipelineConfig& config);
/// Overlays `j` onto `base`; unknown keys and bad values are InputErrors.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base = {});

/// Sets one field by dotted path, e.g. "train.lr" = "0.01". The value is
/// parsed as JSON, falling back to a plain string.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);

/// FNV-1a of the canonical JSON without the runtime knobs.
std::uint64_t config_hash(const PipelineConfig& config);
std::string hash_hex(std::uint64_t hash);

/// Per-node output of the trained network, rounded to float. Throws
/// ArtifactError when the checkpoint was trained on a different graph.
EmbeddingSet embed(const Checkpoint& checkpoint, const HeteroGraph& graph, std::uint64_t seed,
                   unsigned threads = 1);

/// Match every user; output is ordered by user id.
std::vector<CandidateList> match_all(std::span<const BehaviorSequence> users, const HeteroGraph& graph,
                                     const SimilarityIndex& index, const MatchConfig& config,
                                     unsigned threads = 1);

std::vector<BehaviorSequence> load_behaviors(const std::filesystem::path& path, const HeteroGraph& graph,
                                             const MatchConfig& config);

/// Candidate lists for novelty: the popularity list once (user "*popularity")
/// followed by per-user co-occurrence lists.
std::vector<CandidateList> reference_lists(const TrainLog& log, std::size_t video_count,
                                           std::span<const BehaviorSequence> users, std::size_t k,
                                           double min_watch);

enum class Stage : std::uint8_t { Synth, BuildGraph, Train, Embed, Match, Evaluate };
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

struct PipelinePaths {
  std::filesystem::path root;
  SynthPaths corpus;
  std::filesystem::path graph;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_curve;
  std::filesystem::path embeddings;
  std::filesystem::path candidates;
  std::filesystem::path reference;
  std::filesystem::path report;
};

PipelinePaths pipeline_paths(const std::filesystem::path& workdir);

using LogFn = std::function<void(const nlohmann::json& event)>;

/// Runs synth -> build-graph -> train -> embed -> match -> evaluate under
/// `workdir`, starting at `start` and reusing earlier artifacts. Failures
/// are rethrown with the stage name; artifacts on disk are left in place.
MetricReport run_pipeline(const PipelineConfig& config, const std::filesystem::path& workdir,
                          Stage start = Stage::Synth, const LogFn& log = {});

}  // namespace divmatch
