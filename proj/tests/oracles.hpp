#pragma once

// Slow, direct reimplementations of the evaluation metrics used to check the
// library on random inputs. Everything here scans plain vectors.

#include <algorithm>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "divmatch/evalsuite.hpp"
#include "divmatch/matcher.hpp"

namespace oracle {

using namespace divmatch;

inline bool contains(const std::vector<std::uint32_t>& v, std::uint32_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

inline void add_unique(std::vector<std::uint32_t>& v, std::uint32_t x) {
  if (!contains(v, x)) v.push_back(x);
}

inline double hit(const std::vector<TestInstance>& inst, const std::vector<CandidateList>& lists, std::size_t n) {
  if (inst.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& t : inst) {
    for (const auto& l : lists) {
      if (l.user_id != t.user_id) continue;
      for (std::size_t r = 0; r < l.items.size() && r < n; ++r) {
        if (l.items[r].video == t.clicked) {
          ++hits;
          break;
        }
      }
      break;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(inst.size());
}

struct Counts {
  std::size_t tag = 0, category = 0, media = 0;
};

inline Counts count(const VideoFacets& f, const std::vector<std::uint32_t>& videos) {
  std::vector<std::uint32_t> tags, cats, medias;
  for (auto v : videos) {
    for (auto t : f.tags[v]) add_unique(tags, t);
    if (f.category[v]) add_unique(cats, *f.category[v]);
    if (f.media[v]) add_unique(medias, *f.media[v]);
  }
  return {tags.size(), cats.size(), medias.size()};
}

inline FacetCounts mean(const std::vector<Counts>& all) {
  if (all.empty()) return {};
  std::size_t t = 0, c = 0, m = 0;
  for (const auto& x : all) {
    t += x.tag;
    c += x.category;
    m += x.media;
  }
  const double n = static_cast<double>(all.size());
  return {static_cast<double>(t) / n, static_cast<double>(c) / n, static_cast<double>(m) / n};
}

inline FacetCounts list_div(const std::vector<CandidateList>& lists, const VideoFacets& f) {
  std::vector<Counts> all;
  for (const auto& l : lists) {
    std::vector<std::uint32_t> videos;
    for (const auto& c : l.items) videos.push_back(c.video);
    all.push_back(count(f, videos));
  }
  return mean(all);
}

/// Top-k videos by cosine to `q`, scanning every video.
inline std::vector<std::uint32_t> top_videos(const Eigen::MatrixXf& videos, const Eigen::VectorXd& q,
                                             std::size_t k, long exclude) {
  std::vector<std::pair<double, std::uint32_t>> all;
  const double qn = q.norm();
  for (Eigen::Index i = 0; i < videos.cols(); ++i) {
    if (i == exclude) continue;
    const Eigen::VectorXd v = videos.col(i).cast<double>();
    const double vn = v.norm();
    all.push_back({(v / (vn > 0 ? vn : 1.0)).dot(q / (qn > 0 ? qn : 1.0)), static_cast<std::uint32_t>(i)});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < all.size() && i < k; ++i) out.push_back(all[i].second);
  return out;
}

inline FacetCounts element_div(const EmbeddingSet& e, const VideoFacets& f, const std::vector<NodeRef>& queries,
                               std::size_t k) {
  std::vector<Counts> all;
  for (const auto& q : queries) {
    const Eigen::VectorXd v = e.of(q.type).col(q.local_id).cast<double>();
    const long self = q.type == NodeType::Video ? static_cast<long>(q.local_id) : -1;
    all.push_back(count(f, top_videos(e.of(NodeType::Video), v, k, self)));
  }
  return mean(all);
}

inline double coverage(const std::vector<CandidateList>& lists, std::size_t video_count) {
  std::vector<std::uint32_t> seen;
  for (const auto& l : lists)
    for (const auto& c : l.items) add_unique(seen, c.video);
  return video_count ? static_cast<double>(seen.size()) / static_cast<double>(video_count) : 0.0;
}

inline double long_tail(const std::vector<CandidateList>& lists, const TrainLog& log, double days, double min_watch) {
  std::int64_t last = 0;
  bool any = false;
  for (const auto& e : log.events) {
    if (!any || e.timestamp > last) last = e.timestamp;
    any = true;
  }
  std::size_t entries = 0, tail = 0;
  for (const auto& l : lists) {
    for (const auto& c : l.items) {
      ++entries;
      bool watched = false;
      for (const auto& e : log.events) {
        if (e.video == c.video && e.watch_ratio > min_watch &&
            static_cast<double>(last - e.timestamp) < days * 86400.0) {
          watched = true;
        }
      }
      if (!watched) ++tail;
    }
  }
  return entries ? static_cast<double>(tail) / static_cast<double>(entries) : 0.0;
}

inline double novelty(const std::vector<CandidateList>& lists, const std::vector<CandidateList>& reference) {
  std::vector<std::uint32_t> mine, theirs;
  for (const auto& l : lists)
    for (const auto& c : l.items) add_unique(mine, c.video);
  for (const auto& l : reference)
    for (const auto& c : l.items) add_unique(theirs, c.video);
  if (mine.empty()) return 0.0;
  std::size_t fresh = 0;
  for (auto v : mine) fresh += contains(theirs, v) ? 0 : 1;
  return static_cast<double>(fresh) / static_cast<double>(mine.size());
}

// ---------------------------------------------------------------------------
// Random inputs
// ---------------------------------------------------------------------------

struct Scenario {
  std::size_t videos = 0;
  VideoFacets facets;
  std::vector<CandidateList> lists;
  std::vector<CandidateList> reference;
  std::vector<TestInstance> instances;
  TrainLog log;
  EmbeddingSet embeddings;
  std::vector<NodeRef> queries;
};

inline std::vector<Candidate> random_list(Rng& rng, std::size_t videos, std::size_t max_len) {
  std::vector<Candidate> items;
  std::vector<std::uint32_t> used;
  const std::size_t len = rng.uniform_index(max_len + 1);
  for (std::size_t i = 0; i < len; ++i) {
    const auto v = static_cast<std::uint32_t>(rng.uniform_index(videos));
    if (contains(used, v)) continue;
    used.push_back(v);
    Candidate c;
    c.video = v;
    c.score = 1.0 / static_cast<double>(i + 1);
    items.push_back(c);
  }
  return items;
}

inline Scenario random_scenario(std::uint64_t seed) {
  Rng rng(seed);
  Scenario s;
  s.videos = 5 + rng.uniform_index(300);
  const std::size_t tags = 1 + rng.uniform_index(40), cats = 1 + rng.uniform_index(10),
                    medias = 1 + rng.uniform_index(20);
  s.facets.tags.resize(s.videos);
  s.facets.category.resize(s.videos);
  s.facets.media.resize(s.videos);
  for (std::size_t v = 0; v < s.videos; ++v) {
    const std::size_t nt = rng.uniform_index(4);
    for (std::size_t i = 0; i < nt; ++i) add_unique(s.facets.tags[v], static_cast<std::uint32_t>(rng.uniform_index(tags)));
    if (rng.bernoulli(0.9)) s.facets.category[v] = static_cast<std::uint32_t>(rng.uniform_index(cats));
    if (rng.bernoulli(0.8)) s.facets.media[v] = static_cast<std::uint32_t>(rng.uniform_index(medias));
  }
  const std::size_t users = 1 + rng.uniform_index(30);
  for (std::size_t u = 0; u < users; ++u) {
    const std::string id = "u" + std::to_string(u);
    if (rng.bernoulli(0.9)) s.lists.push_back({id, random_list(rng, s.videos, 60)});
    if (rng.bernoulli(0.5)) s.reference.push_back({id, random_list(rng, s.videos, 40)});
    TestInstance t;
    t.user_id = id;
    t.clicked = static_cast<std::uint32_t>(rng.uniform_index(s.videos));
    const std::size_t nb = rng.uniform_index(5);
    for (std::size_t i = 0; i < nb; ++i) {
      t.behaviors.items.push_back({static_cast<std::uint32_t>(rng.uniform_index(s.videos)), 0.9});
    }
    s.instances.push_back(t);
  }
  const std::size_t events = rng.uniform_index(400);
  const std::int64_t start = 1'700'000'000;
  for (std::size_t i = 0; i < events; ++i) {
    WatchEvent e;
    e.video = static_cast<std::uint32_t>(rng.uniform_index(s.videos));
    e.session = static_cast<std::uint32_t>(rng.uniform_index(50));
    // Whole days make the 15-day boundary land exactly on some events.
    e.timestamp = start + static_cast<std::int64_t>(rng.uniform_index(40)) * 86400 +
                  (rng.bernoulli(0.5) ? 0 : static_cast<std::int64_t>(rng.uniform_index(86400)));
    e.watch_ratio = rng.bernoulli(0.1) ? 0.7 : rng.uniform(0.0, 1.0);
    s.log.events.push_back(e);
  }
  const Eigen::Index dim = 3 + static_cast<Eigen::Index>(rng.uniform_index(6));
  auto random_matrix = [&](Eigen::Index n) {
    Eigen::MatrixXf m(dim, n);
    // Continuous entries keep cosine ties away; the index tie rule is covered elsewhere.
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return m;
  };
  s.embeddings.of(NodeType::Video) = random_matrix(static_cast<Eigen::Index>(s.videos));
  s.embeddings.of(NodeType::Tag) = random_matrix(static_cast<Eigen::Index>(tags));
  s.embeddings.of(NodeType::Media) = random_matrix(static_cast<Eigen::Index>(medias));
  for (std::size_t t = 0; t < tags; ++t) s.queries.push_back({NodeType::Tag, static_cast<std::uint32_t>(t)});
  for (std::size_t m = 0; m < medias; ++m) s.queries.push_back({NodeType::Media, static_cast<std::uint32_t>(m)});
  for (std::size_t v = 0; v < s.videos; v += 1 + rng.uniform_index(5)) {
    s.queries.push_back({NodeType::Video, static_cast<std::uint32_t>(v)});
  }
  return s;
}

}  // namespace oracle
