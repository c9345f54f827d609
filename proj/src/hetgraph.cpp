#include "divmatch/hetgraph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <tuple>

#include <json.hpp>

#include "divmatch/binary_io.hpp"

namespace divmatch {

using nlohmann::json;

namespace {

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw std::invalid_argument(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<std::string> optional_string_list(const json& j, const char* key) {
  std::vector<std::string> out;
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return out;
  if (!it->is_array()) throw std::invalid_argument(std::string("field '") + key + "' must be an array");
  for (const json& e : *it) {
    if (!e.is_string()) throw std::invalid_argument(std::string("field '") + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

json parse_object(std::string_view line) {
  json j = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw std::invalid_argument("invalid JSON");
  if (!j.is_object()) throw std::invalid_argument("line is not a JSON object");
  return j;
}

bool blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

Gender parse_gender(const json& v) {
  if (v.is_null()) return Gender::Unknown;
  if (!v.is_string()) throw std::invalid_argument("field 'gender' must be a string");
  std::string g = v.get<std::string>();
  std::transform(g.begin(), g.end(), g.begin(), [](unsigned char c) { return std::tolower(c); });
  if (g == "f" || g == "female") return Gender::Female;
  if (g == "m" || g == "male") return Gender::Male;
  if (g == "u" || g == "unknown" || g.empty()) return Gender::Unknown;
  throw std::invalid_argument("unknown gender '" + g + "'");
}

std::string_view gender_name(Gender g) {
  switch (g) {
    case Gender::Female: return "female";
    case Gender::Male: return "male";
    case Gender::Unknown: break;
  }
  return "unknown";
}

}  // namespace

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

InteractionRecord parse_interaction(std::string_view line) {
  const json j = parse_object(line);
  InteractionRecord r;
  r.user_id = require_string(j, "user_id");
  r.video_id = require_string(j, "video_id");
  r.session_id = require_string(j, "session_id");
  const json& ts = require(j, "timestamp");
  if (!ts.is_number_integer()) throw std::invalid_argument("field 'timestamp' must be an integer");
  r.timestamp = ts.get<std::int64_t>();
  const json& wr = require(j, "watch_ratio");
  if (!wr.is_number()) throw std::invalid_argument("field 'watch_ratio' must be a number");
  r.watch_ratio = wr.get<double>();
  if (!(r.watch_ratio >= 0.0 && r.watch_ratio <= 1.0)) {
    throw std::invalid_argument("watch_ratio " + std::to_string(r.watch_ratio) + " outside [0,1]");
  }
  return r;
}

VideoMeta parse_video_meta(std::string_view line) {
  const json j = parse_object(line);
  VideoMeta m;
  m.video_id = require_string(j, "video_id");
  m.title_words = optional_string_list(j, "title_words");
  if (auto it = j.find("title"); it != j.end() && it->is_string()) {
    m.title_words.push_back(it->get<std::string>());
  }
  m.tags = optional_string_list(j, "tags");
  if (auto it = j.find("media_id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw std::invalid_argument("field 'media_id' must be a string");
    m.media_id = it->get<std::string>();
  }
  if (auto it = j.find("category"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw std::invalid_argument("field 'category' must be a string");
    m.category = it->get<std::string>();
  }
  return m;
}

UserProfile parse_user_profile(std::string_view line) {
  const json j = parse_object(line);
  UserProfile p;
  p.user_id = require_string(j, "user_id");
  p.gender = parse_gender(j.contains("gender") ? j.at("gender") : json());
  const json& age = require(j, "age");
  if (!age.is_number_integer() || age.get<std::int64_t>() < 0) {
    throw std::invalid_argument("field 'age' must be a non-negative integer");
  }
  p.age = age.get<int>();
  p.location = require_string(j, "location");
  return p;
}

std::string to_json_line(const InteractionRecord& r) {
  json j = {{"user_id", r.user_id},     {"video_id", r.video_id},
            {"timestamp", r.timestamp}, {"watch_ratio", r.watch_ratio},
            {"session_id", r.session_id}};
  return j.dump();
}

std::string to_json_line(const VideoMeta& m) {
  json j = {{"video_id", m.video_id}, {"title_words", m.title_words}, {"tags", m.tags},
            {"media_id", m.media_id}, {"category", m.category}};
  return j.dump();
}

std::string to_json_line(const UserProfile& p) {
  json j = {{"user_id", p.user_id},
            {"gender", std::string(gender_name(p.gender))},
            {"age", p.age},
            {"location", p.location}};
  return j.dump();
}

std::vector<std::string> tokenize_title(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 0x80 || std::isalnum(c)) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

std::uint32_t Interner::intern(const std::string& name) {
  auto [it, inserted] = ids_.try_emplace(name, static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<std::uint32_t> Interner::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

namespace {

// Runs `handle` on every non-blank line, recording failures. Throws once
// the malformed fraction for the stream exceeds the limit.
template <typename Handler>
void for_each_line(std::istream& in, const std::string& stream, const IngestOptions& options,
                   IngestReport& report, Handler&& handle) {
  std::string line;
  std::size_t lineno = 0, total = 0, bad = 0;
  std::string first_error;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    ++total;
    try {
      handle(line);
    } catch (const std::exception& e) {
      ++bad;
      report.errors.push_back({stream, lineno, e.what()});
      if (first_error.empty()) first_error = "line " + std::to_string(lineno) + ": " + e.what();
    }
  }
  if (total > 0 && static_cast<double>(bad) > options.max_malformed_fraction * static_cast<double>(total)) {
    throw InputError(stream + ": " + std::to_string(bad) + " of " + std::to_string(total) +
                     " lines malformed (first at " + first_error + ")");
  }
}

}  // namespace

IngestResult ingest(std::istream& interactions, std::istream& metas, std::istream& profiles,
                    const IngestOptions& options) {
  if (options.age_bucket_width < 1) throw InputError("age_bucket_width must be >= 1");
  IngestResult result;
  Corpus& c = result.corpus;
  IngestReport& report = result.report;

  for_each_line(metas, "metas", options, report, [&](const std::string& line) {
    VideoMeta m = parse_video_meta(line);
    if (c.videos.find(m.video_id)) {
      ++report.dropped_duplicates;
      return;
    }
    const std::uint32_t v = c.videos.intern(m.video_id);
    std::vector<std::uint32_t> tags;
    for (const auto& t : m.tags) {
      if (!t.empty()) tags.push_back(c.tags.intern(t));
    }
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    std::vector<std::uint32_t> words;
    for (const auto& fragment : m.title_words) {
      for (const auto& w : tokenize_title(fragment)) words.push_back(c.words.intern(w));
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    c.video_tags.push_back(std::move(tags));
    c.video_words.push_back(std::move(words));
    c.video_media.push_back(m.media_id.empty() ? std::nullopt
                                               : std::optional(c.medias.intern(m.media_id)));
    c.video_category.push_back(m.category);
    (void)v;
  });

  for_each_line(profiles, "profiles", options, report, [&](const std::string& line) {
    UserProfile p = parse_user_profile(line);
    if (c.users.find(p.user_id)) {
      ++report.dropped_duplicates;
      return;
    }
    c.users.intern(p.user_id);
    const int bucket = (p.age / options.age_bucket_width) * options.age_bucket_width;
    const std::string key =
        std::string(gender_name(p.gender)) + "|" + std::to_string(bucket) + "|" + p.location;
    c.user_group.push_back(c.groups.intern(key));
  });

  std::unordered_map<std::uint32_t, std::uint32_t> session_owner;
  std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::int64_t>> seen;
  for_each_line(interactions, "interactions", options, report, [&](const std::string& line) {
    InteractionRecord r = parse_interaction(line);
    std::uint32_t user;
    if (auto u = c.users.find(r.user_id)) {
      user = *u;
    } else {
      user = c.users.intern(r.user_id);
      c.user_group.push_back(std::nullopt);
      ++report.users_without_profile;
    }
    const std::uint32_t session = c.sessions.intern(r.session_id);
    auto [owner, fresh] = session_owner.try_emplace(session, user);
    if (!fresh && owner->second != user) {
      throw std::invalid_argument("session '" + r.session_id + "' shared by several users");
    }
    auto video = c.videos.find(r.video_id);
    if (!video) {
      ++report.dropped_unknown_video;
      return;
    }
    if (!seen.emplace(user, *video, session, r.timestamp).second) {
      ++report.dropped_duplicates;
      return;
    }
    c.interactions.push_back({user, *video, session, r.timestamp, r.watch_ratio});
  });

  return result;
}

IngestResult ingest_files(const std::filesystem::path& interactions,
                          const std::filesystem::path& metas,
                          const std::filesystem::path& profiles, const IngestOptions& options) {
  auto open = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot open input file '" + p.string() + "'");
    return in;
  };
  std::ifstream i = open(interactions), m = open(metas), p = open(profiles);
  return ingest(i, m, p, options);
}

// ---------------------------------------------------------------------------
// HeteroGraph
// ---------------------------------------------------------------------------

std::string_view to_string(EdgeType e) {
  static constexpr std::array<std::string_view, kEdgeTypeCount> kNames = {"VV", "VU", "VT",
                                                                          "VW", "VM", "TT"};
  return kNames[index_of(e)];
}

std::pair<NodeType, NodeType> endpoint_types(EdgeType e) {
  switch (e) {
    case EdgeType::VV: return {NodeType::Video, NodeType::Video};
    case EdgeType::VU: return {NodeType::Video, NodeType::UserGroup};
    case EdgeType::VT: return {NodeType::Video, NodeType::Tag};
    case EdgeType::VW: return {NodeType::Video, NodeType::Word};
    case EdgeType::VM: return {NodeType::Video, NodeType::Media};
    case EdgeType::TT: return {NodeType::Tag, NodeType::Tag};
  }
  throw std::invalid_argument("bad edge type");
}

std::optional<EdgeType> edge_type_between(NodeType a, NodeType b) {
  for (EdgeType e : kAllEdgeTypes) {
    auto [x, y] = endpoint_types(e);
    if ((x == a && y == b) || (x == b && y == a)) return e;
  }
  return std::nullopt;
}

HeteroGraph::HeteroGraph(NodeCounts counts, EdgeLists edges, NodeNames names)
    : counts_(counts), edges_(std::move(edges)), names_(std::move(names)) {
  for (std::size_t t = 0; t < kNodeTypeCount; ++t) {
    offsets_[t + 1] = offsets_[t] + counts_[t];
    if (!names_[t].empty() && names_[t].size() != counts_[t]) {
      throw std::invalid_argument("name table size mismatch for node type " +
                                  std::string(to_string(kAllNodeTypes[t])));
    }
    for (std::uint32_t i = 0; i < names_[t].size(); ++i) lookup_[t].emplace(names_[t][i], i);
  }
  for (EdgeType e : kAllEdgeTypes) {
    auto& list = edges_[index_of(e)];
    auto [ta, tb] = endpoint_types(e);
    for (Edge& edge : list) {
      if (edge.first >= counts_[index_of(ta)] || edge.second >= counts_[index_of(tb)]) {
        throw std::invalid_argument(std::string(to_string(e)) + " edge endpoint out of range");
      }
      if (ta == tb && edge.first > edge.second) std::swap(edge.first, edge.second);
    }
    if (ta == tb) {
      std::erase_if(list, [](const Edge& x) { return x.first == x.second; });
    }
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  build_adjacency();
}

void HeteroGraph::build_adjacency() {
  const std::uint32_t n = total_nodes();
  std::vector<std::size_t> degree(n, 0);
  for (EdgeType e : kAllEdgeTypes) {
    auto [ta, tb] = endpoint_types(e);
    for (const Edge& edge : edges_[index_of(e)]) {
      ++degree[global_id({ta, edge.first})];
      ++degree[global_id({tb, edge.second})];
    }
  }
  adj_offsets_.assign(n + 1, 0);
  for (std::uint32_t i = 0; i < n; ++i) adj_offsets_[i + 1] = adj_offsets_[i] + degree[i];
  adjacency_.assign(adj_offsets_.back(), NodeRef{});
  std::vector<std::size_t> fill(adj_offsets_.begin(), adj_offsets_.end() - 1);
  for (EdgeType e : kAllEdgeTypes) {
    auto [ta, tb] = endpoint_types(e);
    for (const Edge& edge : edges_[index_of(e)]) {
      const NodeRef a{ta, edge.first}, b{tb, edge.second};
      adjacency_[fill[global_id(a)]++] = b;
      adjacency_[fill[global_id(b)]++] = a;
    }
  }
  for (std::uint32_t i = 0; i < n; ++i) {
    std::sort(adjacency_.begin() + static_cast<std::ptrdiff_t>(adj_offsets_[i]),
              adjacency_.begin() + static_cast<std::ptrdiff_t>(adj_offsets_[i + 1]));
  }
}

std::size_t HeteroGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& list : edges_) n += list.size();
  return n;
}

NodeRef HeteroGraph::node_at(std::uint32_t global) const {
  if (global >= total_nodes()) throw std::out_of_range("global node id out of range");
  std::size_t t = 0;
  while (global >= offsets_[t + 1]) ++t;
  return {kAllNodeTypes[t], global - offsets_[t]};
}

std::span<const NodeRef> HeteroGraph::neighbors(NodeRef n) const {
  if (!contains(n)) throw std::out_of_range("node " + to_string(n) + " not in graph");
  const std::uint32_t g = global_id(n);
  return {adjacency_.data() + adj_offsets_[g], adj_offsets_[g + 1] - adj_offsets_[g]};
}

std::vector<NodeRef> HeteroGraph::neighbors(NodeRef n, EdgeType e) const {
  auto [ta, tb] = endpoint_types(e);
  std::vector<NodeRef> out;
  if (n.type != ta && n.type != tb) return out;
  const NodeType other = n.type == ta ? tb : ta;
  for (const NodeRef& m : neighbors(n)) {
    if (m.type == other) out.push_back(m);
  }
  return out;
}

bool HeteroGraph::has_edge(NodeRef a, NodeRef b) const {
  auto nb = neighbors(a);
  return std::binary_search(nb.begin(), nb.end(), b);
}

std::optional<NodeRef> HeteroGraph::find(NodeType t, const std::string& name) const {
  const auto& m = lookup_[index_of(t)];
  auto it = m.find(name);
  if (it == m.end()) return std::nullopt;
  return NodeRef{t, it->second};
}

std::string HeteroGraph::name_of(NodeRef n) const {
  const auto& names = names_[index_of(n.type)];
  if (n.local_id < names.size()) return names[n.local_id];
  return to_string(n);
}

// ---------------------------------------------------------------------------
// Edge rules
// ---------------------------------------------------------------------------

HeteroGraph build_graph(const Corpus& corpus, const EdgeRuleConfig& rules) {
  if (corpus.videos.size() == 0) throw InputError("cannot build a graph from an empty corpus");
  if (rules.window_seconds <= 0) throw InputError("window_seconds must be positive");

  EdgeLists edges;
  auto valid = [&](const Interaction& x) { return x.watch_ratio > rules.min_watch; };

  // VV: consecutive valid watches in the timestamp-ordered session.
  {
    std::vector<std::vector<std::size_t>> by_session(corpus.sessions.size());
    for (std::size_t i = 0; i < corpus.interactions.size(); ++i) {
      by_session[corpus.interactions[i].session].push_back(i);
    }
    auto& vv = edges[index_of(EdgeType::VV)];
    for (auto& seq : by_session) {
      std::stable_sort(seq.begin(), seq.end(), [&](std::size_t a, std::size_t b) {
        return corpus.interactions[a].timestamp < corpus.interactions[b].timestamp;
      });
      for (std::size_t p = 1; p < seq.size(); ++p) {
        const Interaction& a = corpus.interactions[seq[p - 1]];
        const Interaction& b = corpus.interactions[seq[p]];
        if (valid(a) && valid(b) && a.video != b.video) vv.push_back({a.video, b.video});
      }
    }
  }

  // VU: at least min_weekly valid watches by one group inside one window.
  if (!corpus.interactions.empty()) {
    std::int64_t anchor = rules.week_anchor.value_or(std::numeric_limits<std::int64_t>::max());
    if (!rules.week_anchor) {
      for (const auto& x : corpus.interactions) anchor = std::min(anchor, x.timestamp);
    }
    std::map<std::tuple<std::uint32_t, std::uint32_t, std::int64_t>, int> counts;
    for (const auto& x : corpus.interactions) {
      if (!valid(x)) continue;
      const auto group = corpus.user_group.at(x.user);
      if (!group) continue;
      const std::int64_t delta = x.timestamp - anchor;
      std::int64_t window = delta / rules.window_seconds;
      if (delta < 0 && delta % rules.window_seconds != 0) --window;
      ++counts[{x.video, *group, window}];
    }
    auto& vu = edges[index_of(EdgeType::VU)];
    for (const auto& [key, n] : counts) {
      if (n >= rules.min_weekly) vu.push_back({std::get<0>(key), std::get<1>(key)});
    }
  }

  for (std::uint32_t v = 0; v < corpus.videos.size(); ++v) {
    const auto& tags = corpus.video_tags[v];
    for (std::uint32_t t : tags) edges[index_of(EdgeType::VT)].push_back({v, t});
    for (std::uint32_t w : corpus.video_words[v]) edges[index_of(EdgeType::VW)].push_back({v, w});
    if (corpus.video_media[v]) edges[index_of(EdgeType::VM)].push_back({v, *corpus.video_media[v]});
    for (std::size_t a = 0; a < tags.size(); ++a) {
      for (std::size_t b = a + 1; b < tags.size(); ++b) {
        edges[index_of(EdgeType::TT)].push_back({tags[a], tags[b]});
      }
    }
  }

  NodeCounts counts{};
  NodeNames names;
  auto assign = [&](NodeType t, const Interner& in) {
    counts[index_of(t)] = static_cast<std::uint32_t>(in.size());
    names[index_of(t)] = in.names();
  };
  assign(NodeType::Video, corpus.videos);
  assign(NodeType::Tag, corpus.tags);
  assign(NodeType::Media, corpus.medias);
  assign(NodeType::UserGroup, corpus.groups);
  assign(NodeType::Word, corpus.words);
  return HeteroGraph(counts, std::move(edges), std::move(names));
}

std::vector<NodeRef> sample_neighbors(const HeteroGraph& graph, NodeRef node, std::size_t budget,
                                      std::uint64_t seed) {
  if (budget == 0) throw std::invalid_argument("sampling budget must be positive");
  auto nb = graph.neighbors(node);
  if (nb.size() <= budget) return {nb.begin(), nb.end()};
  std::vector<std::uint32_t> idx(nb.size());
  for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < budget; ++i) {
    const std::size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  std::vector<NodeRef> out;
  out.reserve(budget);
  for (auto i : idx) out.push_back(nb[i]);
  return out;
}

// ---------------------------------------------------------------------------
// GDR1
// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kGraphMagic = "GDR1";
constexpr std::string_view kNamesMagic = "NAME";
constexpr std::string_view kEndMagic = "END1";
}  // namespace

std::string serialize_graph(const HeteroGraph& graph, std::uint64_t config_hash) {
  io::ByteWriter w;
  w.magic(kGraphMagic);
  for (auto c : graph.counts()) w.put<std::uint32_t>(c);
  for (EdgeType e : kAllEdgeTypes) {
    auto list = graph.edges(e);
    w.put<std::uint64_t>(list.size());
    for (const Edge& edge : list) {
      w.put<std::uint32_t>(edge.first);
      w.put<std::uint32_t>(edge.second);
    }
  }
  // Trailer: node names and the producing config hash.
  w.magic(kNamesMagic);
  for (const auto& names : graph.names()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(names.size()));
    for (const auto& s : names) w.put_string(s);
  }
  w.put<std::uint64_t>(config_hash);
  w.magic(kEndMagic);
  return w.take();
}

GraphArtifact deserialize_graph(std::string_view bytes) {
  io::ByteReader r(bytes, "graph file");
  r.expect_magic(kGraphMagic);
  NodeCounts counts{};
  for (auto& c : counts) c = r.get<std::uint32_t>();
  EdgeLists edges;
  for (EdgeType e : kAllEdgeTypes) {
    const auto n = r.get<std::uint64_t>();
    r.need(n * 8);
    auto& list = edges[index_of(e)];
    list.resize(n);
    for (auto& edge : list) {
      edge.first = r.get<std::uint32_t>();
      edge.second = r.get<std::uint32_t>();
    }
    if (!std::is_sorted(list.begin(), list.end())) {
      throw ArtifactError("graph file: unsorted " + std::string(to_string(e)) + " edge list");
    }
  }
  NodeNames names;
  r.expect_magic(kNamesMagic);
  for (auto& list : names) {
    const auto n = r.get<std::uint32_t>();
    list.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) list.push_back(r.get_string());
  }
  GraphArtifact out;
  out.config_hash = r.get<std::uint64_t>();
  r.expect_magic(kEndMagic);
  try {
    out.graph = HeteroGraph(counts, std::move(edges), std::move(names));
  } catch (const std::invalid_argument& e) {
    throw ArtifactError(std::string("graph file: ") + e.what());
  }
  return out;
}

void save_graph(const HeteroGraph& graph, const std::filesystem::path& path,
                std::uint64_t config_hash) {
  io::write_file(path, serialize_graph(graph, config_hash));
}

GraphArtifact load_graph_artifact(const std::filesystem::path& path) {
  return deserialize_graph(io::read_file(path));
}

HeteroGraph load_graph(const std::filesystem::path& path) {
  return load_graph_artifact(path).graph;
}

}  // namespace divmatch
