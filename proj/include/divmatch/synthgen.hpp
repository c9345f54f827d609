#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "divmatch/hetgraph.hpp"

namespace divmatch {

/// Planted-community corpus. Each session starts in the user's home
/// community; every following watch stays in the current community with
/// weight p_in and moves to each other community with weight p_out.
struct SynthConfig {
  std::uint32_t n_users = 1000;
  std::uint32_t n_videos = 1000;
  std::uint32_t n_tags = 200;
  std::uint32_t n_medias = 100;
  std::uint32_t n_categories = 30;
  std::uint32_t n_communities = 10;
  std::uint32_t community_jitter = 5;

  double p_in = 0.9;
  double p_out = 0.01;
  /// Probability that a tag/media/category is drawn from a foreign community.
  double overlap = 0.05;
  /// Probability of a valid watch (ratio > 0.7).
  double q = 0.8;
  /// 0 draws videos uniformly within a community.
  double zipf_exponent = 0.0;

  std::uint32_t sessions_min = 3;
  std::uint32_t sessions_max = 6;
  std::uint32_t session_length_min = 3;
  std::uint32_t session_length_max = 10;
  std::uint32_t max_tags_per_video = 3;

  std::uint32_t vocabulary = 500;
  /// Fraction of title vocabulary shared by every community.
  double shared_vocabulary = 0.2;
  std::uint32_t title_words_min = 3;
  std::uint32_t title_words_max = 8;

  std::uint32_t n_locations = 10;
  double days = 30.0;
  std::int64_t start_timestamp = 1'700'000'000;
  std::uint64_t rng_seed = 42;

  /// Throws InputError on configs that cannot produce a graph.
  void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);
/// Missing keys keep their defaults; unknown keys are an InputError.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct HeldOut {
  std::string user_id;
  std::string video_id;
  std::int64_t timestamp = 0;
  /// Earlier valid watches, oldest first, as (video_id, watch ratio).
  std::vector<std::pair<std::string, double>> behaviors;
};

std::string to_json_line(const HeldOut& h);

struct SynthCorpus {
  std::vector<InteractionRecord> interactions;
  std::vector<VideoMeta> metas;
  std::vector<UserProfile> profiles;
  std::vector<HeldOut> tests;

  // Ground truth, indexed by the numeric suffix of the ids.
  std::vector<std::uint32_t> video_community;
  std::vector<std::uint32_t> user_community;
};

SynthCorpus generate(const SynthConfig& config);

struct SynthPaths {
  std::filesystem::path interactions;
  std::filesystem::path metas;
  std::filesystem::path profiles;
  std::filesystem::path tests;
};

SynthPaths synth_paths(const std::filesystem::path& dir);
SynthPaths write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

std::string video_name(std::uint32_t i);
std::string user_name(std::uint32_t i);

}  // namespace divmatch
