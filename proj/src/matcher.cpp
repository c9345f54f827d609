#include "divmatch/matcher.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "divmatch/binary_io.hpp"

namespace divmatch {

// ---------------------------------------------------------------------------
// GDRE
// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kEmbeddingMagic = "GDRE";
}

Eigen::Index EmbeddingSet::dim() const {
  for (const auto& m : by_type) {
    if (m.cols() > 0) return m.rows();
  }
  return 0;
}

std::string serialize_embeddings(NodeType type, const Eigen::MatrixXf& embeddings,
                                 std::uint64_t config_hash) {
  io::ByteWriter w;
  w.magic(kEmbeddingMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(type));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(embeddings.cols()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(embeddings.rows()));
  for (Eigen::Index i = 0; i < embeddings.size(); ++i) w.put<float>(embeddings.data()[i]);
  w.put<std::uint64_t>(config_hash);
  return w.take();
}

EmbeddingFile deserialize_embeddings(std::string_view bytes) {
  io::ByteReader r(bytes, "embedding file");
  r.expect_magic(kEmbeddingMagic);
  EmbeddingFile out;
  const auto type = r.get<std::uint32_t>();
  if (type >= kNodeTypeCount) throw ArtifactError("embedding file: bad node type");
  out.type = kAllNodeTypes[type];
  const auto count = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  r.need(static_cast<std::size_t>(count) * dim * 4);
  out.embeddings.resize(dim, count);
  for (Eigen::Index i = 0; i < out.embeddings.size(); ++i) out.embeddings.data()[i] = r.get<float>();
  out.config_hash = r.get<std::uint64_t>();
  if (r.remaining() != 0) throw ArtifactError("embedding file: trailing bytes");
  return out;
}

std::filesystem::path embedding_path(const std::filesystem::path& dir, NodeType type) {
  return dir / (std::string(to_string(type)) + ".gdre");
}

void save_embeddings(const EmbeddingSet& set, const std::filesystem::path& dir,
                     std::uint64_t config_hash) {
  for (NodeType t : kAllNodeTypes) {
    if (set.of(t).cols() == 0 && t != NodeType::Video) continue;
    io::write_file(embedding_path(dir, t), serialize_embeddings(t, set.of(t), config_hash));
  }
}

EmbeddingSet load_embeddings(const std::filesystem::path& dir) {
  EmbeddingSet set;
  for (NodeType t : kAllNodeTypes) {
    const auto path = embedding_path(dir, t);
    if (!std::filesystem::exists(path)) continue;
    EmbeddingFile f = deserialize_embeddings(io::read_file(path));
    if (f.type != t) throw ArtifactError(path.string() + ": node type does not match file name");
    set.of(t) = std::move(f.embeddings);
  }
  if (!std::filesystem::exists(embedding_path(dir, NodeType::Video))) {
    throw ArtifactError("no video embeddings in '" + dir.string() + "'");
  }
  return set;
}

// ---------------------------------------------------------------------------
// SimilarityIndex
// ---------------------------------------------------------------------------

namespace {

std::vector<ScoredVideo> select_top(const Eigen::VectorXd& scores, std::size_t k,
                                    std::optional<std::uint32_t> exclude,
                                    const std::vector<std::uint32_t>* subset = nullptr) {
  std::vector<ScoredVideo> all;
  auto consider = [&](std::uint32_t v, double s) {
    if (exclude && *exclude == v) return;
    all.push_back({v, s});
  };
  if (subset) {
    for (std::size_t i = 0; i < subset->size(); ++i) consider((*subset)[i], scores[static_cast<Eigen::Index>(i)]);
  } else {
    all.reserve(static_cast<std::size_t>(scores.size()));
    for (Eigen::Index i = 0; i < scores.size(); ++i) consider(static_cast<std::uint32_t>(i), scores[i]);
  }
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), ranks_before);
  all.resize(keep);
  return all;
}

}  // namespace

SimilarityIndex::SimilarityIndex(const EmbeddingSet& embeddings, IndexOptions options)
    : options_(options) {
  for (std::size_t t = 0; t < kNodeTypeCount; ++t) {
    unit_[t] = embeddings.by_type[t].cast<double>();
    for (Eigen::Index c = 0; c < unit_[t].cols(); ++c) {
      const double norm = unit_[t].col(c).norm();
      if (norm > 0.0) unit_[t].col(c) /= norm;
    }
  }
  if (options_.backend == IndexBackend::Ivf) build_ivf();
  if (options_.precompute_k > 0) {
    for (NodeType t : {NodeType::Video, NodeType::Tag, NodeType::Media}) {
      auto& cache = cache_[index_of(t)];
      const Eigen::Index n = unit_[index_of(t)].cols();
      cache.resize(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto id = static_cast<std::uint32_t>(i);
        cache[static_cast<std::size_t>(i)] = query_vector(
            unit_[index_of(t)].col(i), options_.precompute_k,
            t == NodeType::Video ? std::optional(id) : std::nullopt);
      }
    }
  }
}

std::vector<ScoredVideo> SimilarityIndex::query(NodeRef q, std::size_t k) const {
  if (!has(q)) throw ArtifactError("no embedding for node " + to_string(q));
  const auto& cache = cache_[index_of(q.type)];
  if (k <= options_.precompute_k && q.local_id < cache.size()) {
    const auto& hit = cache[q.local_id];
    return {hit.begin(), hit.begin() + static_cast<std::ptrdiff_t>(std::min(k, hit.size()))};
  }
  const auto exclude = q.type == NodeType::Video ? std::optional(q.local_id) : std::nullopt;
  return query_vector(unit_[index_of(q.type)].col(q.local_id), k, exclude);
}

std::vector<ScoredVideo> SimilarityIndex::query_vector(const Eigen::VectorXd& v, std::size_t k,
                                                       std::optional<std::uint32_t> exclude) const {
  const double norm = v.norm();
  const Eigen::VectorXd q = norm > 0.0 ? Eigen::VectorXd(v / norm) : v;
  return options_.backend == IndexBackend::Ivf ? approximate(q, k, exclude) : exact(q, k, exclude);
}

double SimilarityIndex::similarity(NodeRef a, NodeRef b) const {
  if (!has(a) || !has(b)) throw ArtifactError("similarity on a node without embedding");
  return unit_[index_of(a.type)].col(a.local_id).dot(unit_[index_of(b.type)].col(b.local_id));
}

std::vector<ScoredVideo> SimilarityIndex::exact(const Eigen::VectorXd& q, std::size_t k,
                                                std::optional<std::uint32_t> exclude) const {
  const Eigen::VectorXd scores = unit_[0].transpose() * q;
  return select_top(scores, k, exclude);
}

void SimilarityIndex::build_ivf() {
  const Eigen::MatrixXd& videos = unit_[0];
  const auto n = static_cast<std::size_t>(videos.cols());
  if (n == 0) return;
  std::size_t lists = options_.ivf_lists;
  if (lists == 0) lists = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(double(n))));
  lists = std::min(lists, n);
  if (options_.ivf_probes == 0) options_.ivf_probes = std::max<std::size_t>(1, lists / 4);

  // Spherical k-means seeded from distinct random videos.
  Rng rng(options_.seed);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  for (std::size_t i = 0; i < lists; ++i) std::swap(order[i], order[i + rng.uniform_index(n - i)]);
  centroids_.resize(videos.rows(), static_cast<Eigen::Index>(lists));
  for (std::size_t c = 0; c < lists; ++c) centroids_.col(static_cast<Eigen::Index>(c)) = videos.col(order[c]);

  std::vector<std::uint32_t> assign(n, 0);
  for (std::size_t it = 0; it <= options_.kmeans_iterations; ++it) {
    const Eigen::MatrixXd sims = centroids_.transpose() * videos;
    for (std::size_t v = 0; v < n; ++v) {
      Eigen::Index best;
      sims.col(static_cast<Eigen::Index>(v)).maxCoeff(&best);
      assign[v] = static_cast<std::uint32_t>(best);
    }
    if (it == options_.kmeans_iterations) break;
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(videos.rows(), static_cast<Eigen::Index>(lists));
    for (std::size_t v = 0; v < n; ++v) sum.col(assign[v]) += videos.col(static_cast<Eigen::Index>(v));
    for (std::size_t c = 0; c < lists; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      const double norm = sum.col(ci).norm();
      centroids_.col(ci) = norm > 0.0 ? Eigen::VectorXd(sum.col(ci) / norm)
                                      : Eigen::VectorXd(videos.col(static_cast<Eigen::Index>(rng.uniform_index(n))));
    }
  }
  lists_.assign(lists, {});
  for (std::size_t v = 0; v < n; ++v) lists_[assign[v]].push_back(static_cast<std::uint32_t>(v));
}

std::vector<ScoredVideo> SimilarityIndex::approximate(const Eigen::VectorXd& q, std::size_t k,
                                                      std::optional<std::uint32_t> exclude) const {
  if (lists_.empty()) return {};
  const Eigen::VectorXd csims = centroids_.transpose() * q;
  std::vector<std::uint32_t> probe(lists_.size());
  std::iota(probe.begin(), probe.end(), 0u);
  const std::size_t probes = std::min(options_.ivf_probes, probe.size());
  std::partial_sort(probe.begin(), probe.begin() + static_cast<std::ptrdiff_t>(probes), probe.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      return csims[a] != csims[b] ? csims[a] > csims[b] : a < b;
                    });
  std::vector<std::uint32_t> subset;
  for (std::size_t p = 0; p < probes; ++p) {
    subset.insert(subset.end(), lists_[probe[p]].begin(), lists_[probe[p]].end());
  }
  Eigen::VectorXd scores(static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    scores[static_cast<Eigen::Index>(i)] = unit_[0].col(subset[i]).dot(q);
  }
  return select_top(scores, k, exclude, &subset);
}

// ---------------------------------------------------------------------------
// Channels
// ---------------------------------------------------------------------------

std::vector<double> time_decay(std::size_t m, double eta) {
  if (m == 0) throw std::invalid_argument("time_decay needs m >= 1");
  std::vector<double> t(m);
  t[m - 1] = 1.0;
  for (std::size_t j = m - 1; j-- > 0;) t[j] = eta * t[j + 1];
  return t;
}

ChannelScores video_channel(const BehaviorSequence& seq, const SimilarityIndex& index,
                            const MatchConfig& config) {
  ChannelScores scores;
  if (seq.items.empty()) return scores;
  const auto time = time_decay(seq.items.size(), config.eta);
  for (std::size_t j = 0; j < seq.items.size(); ++j) {
    const Behavior& b = seq.items[j];
    for (const ScoredVideo& hit : index.query({NodeType::Video, b.video}, config.per_key)) {
      scores[hit.video] += b.complete * time[j] * hit.score;
    }
  }
  return scores;
}

std::vector<Preference> attribute_preference(const BehaviorSequence& seq, const HeteroGraph& graph,
                                             NodeType attribute, const MatchConfig& config) {
  const auto edge = edge_type_between(NodeType::Video, attribute);
  if (!edge) throw std::invalid_argument("videos have no edges to " + std::string(to_string(attribute)));
  std::map<std::uint32_t, double> p;
  if (!seq.items.empty()) {
    const auto time = time_decay(seq.items.size(), config.eta);
    for (std::size_t j = 0; j < seq.items.size(); ++j) {
      for (const NodeRef& a : graph.neighbors({NodeType::Video, seq.items[j].video}, *edge)) {
        p[a.local_id] += seq.items[j].complete * time[j];
      }
    }
  }
  std::vector<Preference> out;
  for (const auto& [id, w] : p) out.push_back({id, w});
  std::sort(out.begin(), out.end(), [](const Preference& a, const Preference& b) {
    return a.weight != b.weight ? a.weight > b.weight : a.id < b.id;
  });
  if (out.size() > config.top_attributes) out.resize(config.top_attributes);
  return out;
}

ChannelScores attribute_channel(const std::vector<Preference>& preferred, NodeType attribute,
                                const SimilarityIndex& index, const MatchConfig& config) {
  ChannelScores scores;
  double total = 0.0;
  for (const auto& p : preferred) total += p.weight;
  if (preferred.empty() || total <= 0.0) return scores;
  for (const auto& p : preferred) {
    const double share = p.weight / total;
    for (const ScoredVideo& hit : index.query({attribute, p.id}, config.per_key)) {
      scores[hit.video] += share * hit.score;
    }
  }
  return scores;
}

ChannelScores media_channel(const BehaviorSequence& seq, const HeteroGraph& graph,
                            const SimilarityIndex& index, const MatchConfig& config) {
  return attribute_channel(attribute_preference(seq, graph, NodeType::Media, config),
                           NodeType::Media, index, config);
}

CandidateList match(const BehaviorSequence& seq, const HeteroGraph& graph,
                    const SimilarityIndex& index, const MatchConfig& config) {
  CandidateList out;
  out.user_id = seq.user_id;
  if (seq.items.empty()) return out;

  // A channel with zero weight is not consulted at all.
  ChannelScores sv, st, sm;
  if (config.lambda_v != 0.0) sv = video_channel(seq, index, config);
  if (config.lambda_t != 0.0) st = tag_channel(tag_preference(seq, graph, config), index, config);
  if (config.lambda_m != 0.0) sm = media_channel(seq, graph, index, config);

  std::vector<std::uint32_t> watched;
  for (const auto& b : seq.items) watched.push_back(b.video);
  std::sort(watched.begin(), watched.end());

  std::map<std::uint32_t, Candidate> merged;
  auto absorb = [&](const ChannelScores& scores, double Candidate::*field) {
    for (const auto& [v, s] : scores) {
      if (std::binary_search(watched.begin(), watched.end(), v)) continue;
      Candidate& c = merged[v];
      c.video = v;
      c.*field = s;
    }
  };
  absorb(sv, &Candidate::score_v);
  absorb(st, &Candidate::score_t);
  absorb(sm, &Candidate::score_m);

  out.items.reserve(merged.size());
  for (auto& [v, c] : merged) {
    c.score = config.lambda_v * c.score_v + config.lambda_t * c.score_t + config.lambda_m * c.score_m;
    out.items.push_back(c);
  }
  const std::size_t keep = std::min(config.top_k, out.items.size());
  std::partial_sort(out.items.begin(), out.items.begin() + static_cast<std::ptrdiff_t>(keep),
                    out.items.end(), [](const Candidate& a, const Candidate& b) {
                      return a.score != b.score ? a.score > b.score : a.video < b.video;
                    });
  out.items.resize(keep);
  return out;
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

BehaviorSequence parse_behaviors(std::string_view line, const HeteroGraph& graph,
                                 const MatchConfig& config) {
  const auto j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw InputError("behaviors: invalid JSON line");
  BehaviorSequence seq;
  try {
    seq.user_id = j.at("user_id").get<std::string>();
    for (const auto& pair : j.at("behaviors")) {
      const auto id = pair.at(0).get<std::string>();
      const double complete = pair.at(1).get<double>();
      auto node = graph.find(NodeType::Video, id);
      if (!node || !(complete > config.min_watch && complete <= 1.0)) continue;
      seq.items.push_back({node->local_id, complete});
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("behaviors: ") + e.what());
  }
  if (seq.items.size() > config.max_behaviors) {
    seq.items.erase(seq.items.begin(),
                    seq.items.end() - static_cast<std::ptrdiff_t>(config.max_behaviors));
  }
  return seq;
}

namespace {
std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
}  // namespace

std::string candidates_tsv(const std::vector<CandidateList>& lists, const HeteroGraph& graph,
                           std::optional<std::uint64_t> config_hash) {
  std::string out;
  if (config_hash) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "# config_hash=%016llx\n", static_cast<unsigned long long>(*config_hash));
    out += buf;
  }
  for (const auto& list : lists) {
    for (std::size_t r = 0; r < list.items.size(); ++r) {
      const Candidate& c = list.items[r];
      out += list.user_id;
      out += '\t' + std::to_string(r + 1);
      out += '\t' + graph.name_of({NodeType::Video, c.video});
      out += '\t' + format_real(c.score);
      out += '\t' + format_real(c.score_v);
      out += '\t' + format_real(c.score_t);
      out += '\t' + format_real(c.score_m);
      out += '\n';
    }
  }
  return out;
}

CandidateFile parse_candidates_tsv(std::string_view text, const HeteroGraph& graph) {
  CandidateFile file;
  std::unordered_map<std::string, std::size_t> by_user;
  std::vector<std::vector<std::pair<std::size_t, Candidate>>> ranked;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# config_hash=", 0) == 0) {
      file.config_hash = std::stoull(line.substr(14), nullptr, 16);
      continue;
    }
    if (line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t pos; (pos = line.find('\t', start)) != std::string::npos; start = pos + 1) {
      f.push_back(line.substr(start, pos - start));
    }
    f.push_back(line.substr(start));
    if (f.size() != 7) throw InputError("candidates line " + std::to_string(lineno) + ": expected 7 fields");
    auto video = graph.find(NodeType::Video, f[2]);
    if (!video) throw InputError("candidates line " + std::to_string(lineno) + ": unknown video '" + f[2] + "'");
    Candidate c;
    c.video = video->local_id;
    try {
      c.score = std::stod(f[3]);
      c.score_v = std::stod(f[4]);
      c.score_t = std::stod(f[5]);
      c.score_m = std::stod(f[6]);
    } catch (const std::exception&) {
      throw InputError("candidates line " + std::to_string(lineno) + ": bad score");
    }
    auto [it, fresh] = by_user.try_emplace(f[0], file.lists.size());
    if (fresh) {
      file.lists.push_back({f[0], {}});
      ranked.emplace_back();
    }
    ranked[it->second].emplace_back(std::stoul(f[1]), c);
  }
  for (std::size_t u = 0; u < file.lists.size(); ++u) {
    std::stable_sort(ranked[u].begin(), ranked[u].end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [rank, c] : ranked[u]) file.lists[u].items.push_back(c);
  }
  return file;
}

}  // namespace divmatch
