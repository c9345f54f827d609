#include "divmatch/evalsuite.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace divmatch {

TestInstance parse_test_instance(std::string_view line, const HeteroGraph& graph,
                                 const MatchConfig& config) {
  const auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InputError("test instance: invalid JSON line");
  TestInstance t;
  try {
    t.user_id = j.at("user_id").get<std::string>();
    const auto clicked = j.at("video_id").get<std::string>();
    auto node = graph.find(NodeType::Video, clicked);
    if (!node) throw InputError("test instance: unknown video '" + clicked + "'");
    t.clicked = node->local_id;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("test instance: ") + e.what());
  }
  t.behaviors = parse_behaviors(line, graph, config);
  return t;
}

std::vector<TestInstance> load_test_instances(const std::filesystem::path& path,
                                              const HeteroGraph& graph, const MatchConfig& config) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open test file '" + path.string() + "'");
  std::vector<TestInstance> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_test_instance(line, graph, config));
  }
  return out;
}

namespace {

std::unordered_map<std::string, const CandidateList*> by_user(std::span<const CandidateList> lists) {
  std::unordered_map<std::string, const CandidateList*> m;
  for (const auto& l : lists) m.emplace(l.user_id, &l);
  return m;
}

}  // namespace

double hit_at_n(std::span<const TestInstance> instances, std::span<const CandidateList> lists,
                std::size_t n) {
  if (n < 1) throw std::invalid_argument("hit_at_n needs N >= 1");
  if (instances.empty()) return 0.0;
  const auto index = by_user(lists);
  std::size_t hits = 0;
  for (const auto& inst : instances) {
    auto it = index.find(inst.user_id);
    if (it == index.end()) continue;
    const auto& items = it->second->items;
    const std::size_t upto = std::min(n, items.size());
    for (std::size_t r = 0; r < upto; ++r) {
      if (items[r].video == inst.clicked) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(instances.size());
}

std::size_t missing_lists(std::span<const TestInstance> instances,
                          std::span<const CandidateList> lists) {
  const auto index = by_user(lists);
  return static_cast<std::size_t>(std::count_if(instances.begin(), instances.end(), [&](const auto& i) {
    return !index.contains(i.user_id);
  }));
}

// ---------------------------------------------------------------------------
// Facets
// ---------------------------------------------------------------------------

VideoFacets make_facets(const HeteroGraph& graph, std::span<const std::string> categories) {
  const std::uint32_t n = graph.node_count(NodeType::Video);
  VideoFacets f;
  f.tags.resize(n);
  f.media.resize(n);
  f.category.resize(n);
  std::unordered_map<std::string, std::uint32_t> category_ids;
  for (std::uint32_t v = 0; v < n; ++v) {
    for (const NodeRef& t : graph.neighbors({NodeType::Video, v}, EdgeType::VT)) f.tags[v].push_back(t.local_id);
    const auto medias = graph.neighbors({NodeType::Video, v}, EdgeType::VM);
    if (!medias.empty()) f.media[v] = medias.front().local_id;
    if (v < categories.size() && !categories[v].empty()) {
      auto [it, _] = category_ids.try_emplace(categories[v], static_cast<std::uint32_t>(category_ids.size()));
      f.category[v] = it->second;
    }
  }
  return f;
}

VideoFacets load_facets(const HeteroGraph& graph, const std::filesystem::path& metas) {
  std::ifstream in(metas);
  if (!in) throw InputError("cannot open metadata file '" + metas.string() + "'");
  std::vector<std::string> categories(graph.node_count(NodeType::Video));
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    VideoMeta m;
    try {
      m = parse_video_meta(line);
    } catch (const std::exception&) {
      continue;
    }
    if (auto v = graph.find(NodeType::Video, m.video_id)) categories[v->local_id] = m.category;
  }
  return make_facets(graph, categories);
}

FacetCounts count_facets(const VideoFacets& facets, std::span<const std::uint32_t> videos) {
  std::set<std::uint32_t> tags, categories, medias;
  for (auto v : videos) {
    tags.insert(facets.tags.at(v).begin(), facets.tags.at(v).end());
    if (facets.category.at(v)) categories.insert(*facets.category[v]);
    if (facets.media.at(v)) medias.insert(*facets.media[v]);
  }
  return {static_cast<double>(tags.size()), static_cast<double>(categories.size()),
          static_cast<double>(medias.size())};
}

std::vector<NodeRef> element_queries(const HeteroGraph& graph,
                                     std::span<const TestInstance> instances) {
  std::vector<NodeRef> out;
  for (std::uint32_t t = 0; t < graph.node_count(NodeType::Tag); ++t) out.push_back({NodeType::Tag, t});
  for (std::uint32_t m = 0; m < graph.node_count(NodeType::Media); ++m) out.push_back({NodeType::Media, m});
  std::set<std::uint32_t> videos;
  for (const auto& inst : instances) {
    for (const auto& b : inst.behaviors.items) videos.insert(b.video);
  }
  for (auto v : videos) out.push_back({NodeType::Video, v});
  return out;
}

FacetCounts element_diversity(const SimilarityIndex& index, const VideoFacets& facets,
                              std::span<const NodeRef> queries, std::size_t k) {
  FacetCounts sum;
  if (queries.empty()) return sum;
  for (const NodeRef& q : queries) {
    std::vector<std::uint32_t> videos;
    for (const auto& hit : index.query(q, k)) videos.push_back(hit.video);
    const FacetCounts c = count_facets(facets, videos);
    sum.tag += c.tag;
    sum.category += c.category;
    sum.media += c.media;
  }
  const double n = static_cast<double>(queries.size());
  return {sum.tag / n, sum.category / n, sum.media / n};
}

FacetCounts list_diversity(std::span<const CandidateList> lists, const VideoFacets& facets) {
  FacetCounts sum;
  if (lists.empty()) return sum;
  for (const auto& list : lists) {
    std::vector<std::uint32_t> videos;
    for (const auto& c : list.items) videos.push_back(c.video);
    const FacetCounts c = count_facets(facets, videos);
    sum.tag += c.tag;
    sum.category += c.category;
    sum.media += c.media;
  }
  const double n = static_cast<double>(lists.size());
  return {sum.tag / n, sum.category / n, sum.media / n};
}

// ---------------------------------------------------------------------------
// Logs, global diversity, baselines
// ---------------------------------------------------------------------------

TrainLog train_log_from(const Corpus& corpus, const HeteroGraph& graph) {
  TrainLog log;
  for (const auto& x : corpus.interactions) {
    auto v = graph.find(NodeType::Video, corpus.videos.name(x.video));
    if (!v) continue;
    log.events.push_back({v->local_id, x.session, x.timestamp, x.watch_ratio});
  }
  return log;
}

TrainLog load_train_log(const std::filesystem::path& path, const HeteroGraph& graph) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open training log '" + path.string() + "'");
  TrainLog log;
  Interner sessions;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    InteractionRecord r;
    try {
      r = parse_interaction(line);
    } catch (const std::exception&) {
      continue;
    }
    auto v = graph.find(NodeType::Video, r.video_id);
    if (!v) continue;
    log.events.push_back({v->local_id, sessions.intern(r.session_id), r.timestamp, r.watch_ratio});
  }
  return log;
}

GlobalDiversity global_diversity(std::span<const CandidateList> lists, std::size_t video_count,
                                 const TrainLog& log, std::span<const CandidateList> reference,
                                 const EvalConfig& config) {
  GlobalDiversity g;
  std::set<std::uint32_t> recommended;
  std::size_t entries = 0;
  for (const auto& l : lists) {
    for (const auto& c : l.items) recommended.insert(c.video);
    entries += l.items.size();
  }
  if (video_count > 0) {
    g.coverage = static_cast<double>(recommended.size()) / static_cast<double>(video_count);
  }

  std::unordered_set<std::uint32_t> recent;
  if (!log.events.empty()) {
    std::int64_t anchor = log.events.front().timestamp;
    for (const auto& e : log.events) anchor = std::max(anchor, e.timestamp);
    const double window = config.long_tail_days * 86400.0;
    for (const auto& e : log.events) {
      if (e.watch_ratio > config.min_watch && static_cast<double>(anchor - e.timestamp) < window) {
        recent.insert(e.video);
      }
    }
  }
  if (entries > 0) {
    std::size_t tail = 0;
    for (const auto& l : lists) {
      for (const auto& c : l.items) tail += recent.contains(c.video) ? 0 : 1;
    }
    g.long_tail = static_cast<double>(tail) / static_cast<double>(entries);
  }

  std::unordered_set<std::uint32_t> known;
  for (const auto& l : reference) {
    for (const auto& c : l.items) known.insert(c.video);
  }
  if (!recommended.empty()) {
    std::size_t fresh = 0;
    for (auto v : recommended) fresh += known.contains(v) ? 0 : 1;
    g.novelty = static_cast<double>(fresh) / static_cast<double>(recommended.size());
  }
  return g;
}

namespace {

std::vector<Candidate> top_scored(const std::unordered_map<std::uint32_t, double>& scores, std::size_t k) {
  std::vector<Candidate> out;
  out.reserve(scores.size());
  for (const auto& [v, s] : scores) {
    Candidate c;
    c.video = v;
    c.score = s;
    out.push_back(c);
  }
  const std::size_t keep = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return a.score != b.score ? a.score > b.score : a.video < b.video;
                    });
  out.resize(keep);
  return out;
}

}  // namespace

std::vector<CandidateList> popularity_baseline(const TrainLog& log, std::size_t video_count,
                                               std::span<const BehaviorSequence> users,
                                               std::size_t k, double min_watch) {
  std::unordered_map<std::uint32_t, double> counts;
  for (const auto& e : log.events) {
    if (e.watch_ratio > min_watch && e.video < video_count) counts[e.video] += 1.0;
  }
  const auto ranked = top_scored(counts, k);
  std::vector<CandidateList> out;
  for (const auto& u : users) out.push_back({u.user_id, ranked});
  return out;
}

std::vector<CandidateList> cooccurrence_baseline(const TrainLog& log,
                                                 std::span<const BehaviorSequence> users,
                                                 std::size_t k, double min_watch) {
  std::map<std::uint32_t, std::set<std::uint32_t>> sessions;
  for (const auto& e : log.events) {
    if (e.watch_ratio > min_watch) sessions[e.session].insert(e.video);
  }
  std::unordered_map<std::uint32_t, std::unordered_map<std::uint32_t, double>> cooc;
  for (const auto& [_, videos] : sessions) {
    for (auto a : videos) {
      for (auto b : videos) {
        if (a != b) cooc[a][b] += 1.0;
      }
    }
  }
  std::vector<CandidateList> out;
  for (const auto& u : users) {
    std::set<std::uint32_t> seen;
    for (const auto& b : u.items) seen.insert(b.video);
    std::unordered_map<std::uint32_t, double> scores;
    for (auto b : seen) {
      auto it = cooc.find(b);
      if (it == cooc.end()) continue;
      for (const auto& [v, n] : it->second) {
        if (!seen.contains(v)) scores[v] += n;
      }
    }
    out.push_back({u.user_id, top_scored(scores, k)});
  }
  return out;
}

MetricReport evaluate(std::span<const TestInstance> instances, std::span<const CandidateList> lists,
                      const HeteroGraph& graph, const VideoFacets& facets, const TrainLog& log,
                      std::span<const CandidateList> reference, const SimilarityIndex* index,
                      const EvalConfig& config) {
  MetricReport r;
  r.instances = instances.size();
  r.lists = lists.size();
  r.missing_lists = missing_lists(instances, lists);
  for (auto n : config.hit_ns) r.hit[n] = hit_at_n(instances, lists, n);
  if (index) {
    const auto queries = element_queries(graph, instances);
    r.element = element_diversity(*index, facets, queries, config.element_k);
  }
  r.list = list_diversity(lists, facets);
  r.global = global_diversity(lists, graph.node_count(NodeType::Video), log, reference, config);
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j;
  for (const auto& [n, v] : r.hit) j["hit@" + std::to_string(n)] = v;
  auto facet = [](const FacetCounts& c) {
    return nlohmann::json{{"tag", c.tag}, {"category", c.category}, {"media", c.media}};
  };
  j["element_diversity"] = r.element ? facet(*r.element) : nlohmann::json(nullptr);
  j["list_diversity"] = facet(r.list);
  j["coverage"] = r.global.coverage;
  j["long_tail"] = r.global.long_tail;
  j["novelty"] = r.global.novelty;
  j["instances"] = r.instances;
  j["lists"] = r.lists;
  j["missing_lists"] = r.missing_lists;
  return j;
}

}  // namespace divmatch
