#include "divmatch/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "divmatch/binary_io.hpp"

namespace divmatch {

namespace {

using nlohmann::json;

template <typename F>
void for_each_field(SynthConfig& c, F&& f) {
  f("n_users", c.n_users);
  f("n_videos", c.n_videos);
  f("n_tags", c.n_tags);
  f("n_medias", c.n_medias);
  f("n_categories", c.n_categories);
  f("n_communities", c.n_communities);
  f("community_jitter", c.community_jitter);
  f("p_in", c.p_in);
  f("p_out", c.p_out);
  f("overlap", c.overlap);
  f("q", c.q);
  f("zipf_exponent", c.zipf_exponent);
  f("sessions_min", c.sessions_min);
  f("sessions_max", c.sessions_max);
  f("session_length_min", c.session_length_min);
  f("session_length_max", c.session_length_max);
  f("max_tags_per_video", c.max_tags_per_video);
  f("vocabulary", c.vocabulary);
  f("shared_vocabulary", c.shared_vocabulary);
  f("title_words_min", c.title_words_min);
  f("title_words_max", c.title_words_max);
  f("n_locations", c.n_locations);
  f("days", c.days);
  f("start_timestamp", c.start_timestamp);
  f("rng_seed", c.rng_seed);
}

std::uint32_t uniform_between(Rng& rng, std::uint32_t lo, std::uint32_t hi) {
  return lo + static_cast<std::uint32_t>(rng.uniform_index(hi - lo + 1));
}

std::uint32_t pick(Rng& rng, const std::vector<std::uint32_t>& pool) {
  return pool[rng.uniform_index(pool.size())];
}

/// Round-robin split of [0, n) into `parts` pools starting at `first`.
std::vector<std::vector<std::uint32_t>> round_robin(std::uint32_t first, std::uint32_t n,
                                                    std::uint32_t parts) {
  std::vector<std::vector<std::uint32_t>> pools(parts);
  for (std::uint32_t i = first; i < n; ++i) pools[(i - first) % parts].push_back(i);
  return pools;
}

std::vector<std::uint32_t> community_sizes(const SynthConfig& c, Rng& rng) {
  const std::uint32_t C = c.n_communities;
  std::vector<std::int64_t> nominal(C), size(C);
  for (std::uint32_t i = 0; i < C; ++i) {
    nominal[i] = c.n_videos / C + (i < c.n_videos % C ? 1 : 0);
    const auto j = static_cast<std::int64_t>(c.community_jitter);
    size[i] = nominal[i] + static_cast<std::int64_t>(rng.uniform_index(2 * j + 1)) - j;
  }
  std::int64_t diff = static_cast<std::int64_t>(c.n_videos);
  for (auto s : size) diff -= s;
  const auto j = static_cast<std::int64_t>(c.community_jitter);
  while (diff != 0) {
    const auto i = rng.uniform_index(C);
    if (diff > 0 && size[i] + 1 <= nominal[i] + j) {
      ++size[i];
      --diff;
    } else if (diff < 0 && size[i] - 1 >= std::max<std::int64_t>(1, nominal[i] - j)) {
      --size[i];
      ++diff;
    }
  }
  return {size.begin(), size.end()};
}

double draw_ratio(Rng& rng, bool valid) {
  if (valid) {
    return std::max(std::nextafter(0.7, 1.0), 1.0 - 0.3 * rng.uniform01());
  }
  return 0.05 + 0.65 * rng.uniform01();
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw InputError("synth config: " + m); };
  if (n_communities == 0) fail("n_communities must be positive");
  if (n_users == 0 || n_videos == 0) fail("n_users and n_videos must be positive");
  if (n_videos / n_communities <= community_jitter) fail("communities too small for the jitter");
  if (n_tags < n_communities || n_medias < n_communities || n_categories < n_communities) {
    fail("need at least one tag, media and category per community");
  }
  if (!(p_in > p_out) || !(p_out >= 0.0)) fail("need p_in > p_out >= 0");
  if (!(q > 0.0) || q > 1.0) fail("q must be in (0, 1]; q = 0 yields no valid watch");
  if (!(overlap >= 0.0 && overlap <= 1.0)) fail("overlap must be in [0, 1]");
  if (!(zipf_exponent >= 0.0)) fail("zipf_exponent must be >= 0");
  if (sessions_min == 0 || sessions_min > sessions_max) fail("bad sessions range");
  if (session_length_min < 2 || session_length_min > session_length_max) {
    fail("bad session length range (minimum 2)");
  }
  if (max_tags_per_video == 0) fail("max_tags_per_video must be positive");
  if (!(shared_vocabulary >= 0.0 && shared_vocabulary < 1.0)) fail("shared_vocabulary must be in [0, 1)");
  const auto shared = static_cast<std::uint32_t>(vocabulary * shared_vocabulary);
  if (vocabulary - shared < n_communities) fail("vocabulary too small for the communities");
  if (title_words_min == 0 || title_words_min > title_words_max) fail("bad title length range");
  if (n_locations == 0) fail("n_locations must be positive");
  if (!(days > 0.0)) fail("days must be positive");
}

json to_json(const SynthConfig& config) {
  json j = json::object();
  SynthConfig copy = config;
  for_each_field(copy, [&](const char* key, auto& value) { j[key] = value; });
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw InputError("synth config: expected a JSON object");
  SynthConfig c;
  std::set<std::string> known;
  for_each_field(c, [&](const char* key, auto& value) {
    known.insert(key);
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(value);
    } catch (const json::exception& e) {
      throw InputError(std::string("synth config: field '") + key + "': " + e.what());
    }
  });
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw InputError("synth config: unknown field '" + key + "'");
  }
  return c;
}

std::string to_json_line(const HeldOut& h) {
  json b = json::array();
  for (const auto& [video, ratio] : h.behaviors) b.push_back(json::array({video, ratio}));
  return json{{"user_id", h.user_id}, {"video_id", h.video_id}, {"timestamp", h.timestamp},
              {"behaviors", std::move(b)}}
      .dump();
}

std::string video_name(std::uint32_t i) { return "v" + std::to_string(i); }
std::string user_name(std::uint32_t i) { return "u" + std::to_string(i); }

SynthCorpus generate(const SynthConfig& c) {
  c.validate();
  Rng rng(c.rng_seed);
  const std::uint32_t C = c.n_communities;
  SynthCorpus out;

  // Videos: shuffled community labels so ids carry no structure.
  const auto sizes = community_sizes(c, rng);
  out.video_community.reserve(c.n_videos);
  for (std::uint32_t k = 0; k < C; ++k) out.video_community.insert(out.video_community.end(), sizes[k], k);
  for (std::size_t i = out.video_community.size(); i > 1; --i) {
    std::swap(out.video_community[i - 1], out.video_community[rng.uniform_index(i)]);
  }
  std::vector<std::vector<std::uint32_t>> members(C);
  for (std::uint32_t v = 0; v < c.n_videos; ++v) members[out.video_community[v]].push_back(v);

  // Within-community popularity: cumulative Zipf weights over member order.
  std::vector<std::vector<double>> cumulative(C);
  for (std::uint32_t k = 0; k < C; ++k) {
    double acc = 0.0;
    for (std::size_t r = 0; r < members[k].size(); ++r) {
      acc += std::pow(static_cast<double>(r + 1), -c.zipf_exponent);
      cumulative[k].push_back(acc);
    }
  }
  auto draw_video = [&](std::uint32_t k) {
    const double u = rng.uniform01() * cumulative[k].back();
    auto it = std::upper_bound(cumulative[k].begin(), cumulative[k].end(), u);
    const auto r = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative[k].begin()),
                                         members[k].size() - 1);
    return members[k][r];
  };

  const auto tag_pools = round_robin(0, c.n_tags, C);
  const auto media_pools = round_robin(0, c.n_medias, C);
  const auto category_pools = round_robin(0, c.n_categories, C);
  const auto shared_words = static_cast<std::uint32_t>(c.vocabulary * c.shared_vocabulary);
  const auto word_pools = round_robin(shared_words, c.vocabulary, C);

  auto community_or_foreign = [&](std::uint32_t home) {
    return rng.bernoulli(c.overlap) ? static_cast<std::uint32_t>(rng.uniform_index(C)) : home;
  };

  for (std::uint32_t v = 0; v < c.n_videos; ++v) {
    const std::uint32_t k = out.video_community[v];
    VideoMeta m;
    m.video_id = video_name(v);
    std::set<std::uint32_t> tags;
    const std::uint32_t n_tags = uniform_between(rng, 1, c.max_tags_per_video);
    for (std::uint32_t i = 0; i < n_tags; ++i) tags.insert(pick(rng, tag_pools[community_or_foreign(k)]));
    for (auto t : tags) m.tags.push_back("t" + std::to_string(t));
    m.media_id = "m" + std::to_string(pick(rng, media_pools[community_or_foreign(k)]));
    m.category = "c" + std::to_string(pick(rng, category_pools[community_or_foreign(k)]));
    const std::uint32_t n_words = uniform_between(rng, c.title_words_min, c.title_words_max);
    for (std::uint32_t i = 0; i < n_words; ++i) {
      std::uint32_t w;
      if (shared_words > 0 && rng.bernoulli(0.3)) {
        w = static_cast<std::uint32_t>(rng.uniform_index(shared_words));
      } else {
        w = pick(rng, word_pools[community_or_foreign(k)]);
      }
      m.title_words.push_back("w" + std::to_string(w));
    }
    out.metas.push_back(std::move(m));
  }

  // Users and their sessions.
  const double stay = c.p_in / (c.p_in + (C - 1) * c.p_out);
  const double span_seconds = c.days * 86400.0;
  for (std::uint32_t u = 0; u < c.n_users; ++u) {
    const auto home = static_cast<std::uint32_t>(rng.uniform_index(C));
    out.user_community.push_back(home);

    UserProfile p;
    p.user_id = user_name(u);
    p.gender = rng.bernoulli(0.5) ? Gender::Female : Gender::Male;
    p.age = 18 + 10 * static_cast<int>(rng.uniform_index(4));
    const auto loc = rng.bernoulli(0.8) ? home % c.n_locations
                                        : static_cast<std::uint32_t>(rng.uniform_index(c.n_locations));
    p.location = "loc" + std::to_string(loc);
    out.profiles.push_back(p);

    std::vector<InteractionRecord> log;
    const std::uint32_t n_sessions = uniform_between(rng, c.sessions_min, c.sessions_max);
    std::vector<std::int64_t> starts;
    for (std::uint32_t s = 0; s < n_sessions; ++s) {
      starts.push_back(c.start_timestamp + static_cast<std::int64_t>(rng.uniform01() * span_seconds));
    }
    std::sort(starts.begin(), starts.end());
    for (std::uint32_t s = 0; s < n_sessions; ++s) {
      const std::string session = "s" + std::to_string(u) + "_" + std::to_string(s);
      const std::uint32_t length = uniform_between(rng, c.session_length_min, c.session_length_max);
      std::uint32_t community = home;
      std::int64_t t = starts[s];
      std::optional<std::uint32_t> previous;
      for (std::uint32_t i = 0; i < length; ++i) {
        if (i > 0 && C > 1 && !rng.bernoulli(stay)) {
          const auto other = static_cast<std::uint32_t>(rng.uniform_index(C - 1));
          community = other >= community ? other + 1 : other;
        }
        std::uint32_t v = draw_video(community);
        for (int retry = 0; previous && v == *previous && retry < 8; ++retry) v = draw_video(community);
        previous = v;
        const bool valid = rng.bernoulli(c.q);
        log.push_back({user_name(u), video_name(v), t, draw_ratio(rng, valid), session});
        t += 20 + static_cast<std::int64_t>(rng.uniform_index(600));
      }
    }

    // Hold out the last valid watch with every record of that video.
    std::stable_sort(log.begin(), log.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    auto last = std::find_if(log.rbegin(), log.rend(), [](const auto& r) { return r.watch_ratio > 0.7; });
    if (last != log.rend()) {
      HeldOut h{user_name(u), last->video_id, last->timestamp, {}};
      std::vector<InteractionRecord> kept;
      for (const auto& r : log) {
        if (r.video_id == h.video_id) continue;
        if (r.watch_ratio > 0.7 && r.timestamp <= h.timestamp) h.behaviors.emplace_back(r.video_id, r.watch_ratio);
        kept.push_back(r);
      }
      if (!h.behaviors.empty()) {
        log = std::move(kept);
        out.tests.push_back(std::move(h));
      }
    }
    out.interactions.insert(out.interactions.end(), log.begin(), log.end());
  }
  return out;
}

SynthPaths synth_paths(const std::filesystem::path& dir) {
  return {dir / "interactions.jsonl", dir / "metas.jsonl", dir / "profiles.jsonl", dir / "test.jsonl"};
}

SynthPaths write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  const SynthPaths paths = synth_paths(dir);
  auto lines = [](const auto& records) {
    std::string s;
    for (const auto& r : records) {
      s += to_json_line(r);
      s += '\n';
    }
    return s;
  };
  io::write_file(paths.interactions, lines(corpus.interactions));
  io::write_file(paths.metas, lines(corpus.metas));
  io::write_file(paths.profiles, lines(corpus.profiles));
  io::write_file(paths.tests, lines(corpus.tests));
  return paths;
}

}  // namespace divmatch
