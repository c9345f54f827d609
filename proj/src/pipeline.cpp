#include "divmatch/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include "divmatch/binary_io.hpp"

namespace divmatch {

namespace {

using nlohmann::json;

// JSON conversions for the few non-trivial field types.
template <typename T>
json put(const T& v) {
  return json(v);
}
json put(NegativeSampling s) { return s == NegativeSampling::Degree ? "degree" : "uniform"; }
json put(IndexBackend b) { return b == IndexBackend::Ivf ? "ivf" : "exact"; }
json put(const std::optional<std::int64_t>& anchor) { return anchor ? json(*anchor) : json("auto"); }

template <typename T>
void get(const json& j, T& v) {
  j.get_to(v);
}
void get(const json& j, NegativeSampling& s) {
  const auto name = j.get<std::string>();
  if (name == "uniform") s = NegativeSampling::Uniform;
  else if (name == "degree") s = NegativeSampling::Degree;
  else throw InputError("negative_sampling must be 'uniform' or 'degree'");
}
void get(const json& j, IndexBackend& b) {
  const auto name = j.get<std::string>();
  if (name == "exact") b = IndexBackend::Exact;
  else if (name == "ivf") b = IndexBackend::Ivf;
  else throw InputError("index backend must be 'exact' or 'ivf'");
}
void get(const json& j, std::optional<std::int64_t>& anchor) {
  if (j.is_string() && j.get<std::string>() == "auto") {
    anchor.reset();
  } else {
    anchor = j.get<std::int64_t>();
  }
}

/// Visits every non-synth field as (section, key, value&).
template <typename Config, typename F>
void for_each_field(Config& c, F&& f) {
  f("ingest", "age_bucket_width", c.ingest.age_bucket_width);
  f("ingest", "max_malformed_fraction", c.ingest.max_malformed_fraction);

  f("graph", "min_watch", c.rules.min_watch);
  f("graph", "min_weekly", c.rules.min_weekly);
  f("graph", "window_seconds", c.rules.window_seconds);
  f("graph", "week_anchor", c.rules.week_anchor);

  f("model", "feature_widths", c.shape.feature.width);
  f("model", "hidden", c.shape.hidden);
  f("model", "lambda_s", c.lambda_s);
  f("model", "sample_first", c.train.sampling.first);
  f("model", "sample_second", c.train.sampling.second);

  f("train", "negatives", c.train.negatives_per_positive);
  f("train", "batch", c.train.batch_size);
  f("train", "lr", c.train.lr);
  f("train", "beta1", c.train.beta1);
  f("train", "beta2", c.train.beta2);
  f("train", "epsilon", c.train.epsilon);
  f("train", "epochs", c.train.epochs);
  f("train", "seed", c.train.seed);
  f("train", "negative_sampling", c.train.negatives);

  f("embed", "seed", c.embed_seed);

  f("match", "topk", c.match.top_k);
  f("match", "per_key", c.match.per_key);
  f("match", "top_attributes", c.match.top_attributes);
  f("match", "max_behaviors", c.match.max_behaviors);
  f("match", "eta", c.match.eta);
  f("match", "min_watch", c.match.min_watch);
  f("match", "lv", c.match.lambda_v);
  f("match", "lt", c.match.lambda_t);
  f("match", "lm", c.match.lambda_m);

  f("index", "backend", c.index.backend);
  f("index", "ivf_lists", c.index.ivf_lists);
  f("index", "ivf_probes", c.index.ivf_probes);
  f("index", "kmeans_iterations", c.index.kmeans_iterations);
  f("index", "seed", c.index.seed);
  f("index", "precompute_k", c.index.precompute_k);

  f("eval", "hit_ns", c.eval.hit_ns);
  f("eval", "element_k", c.eval.element_k);
  f("eval", "long_tail_days", c.eval.long_tail_days);
  f("eval", "min_watch", c.eval.min_watch);
  f("eval", "baseline_k", c.eval.baseline_k);
}

json hashed_json(const PipelineConfig& config) {
  json j = to_json(config);
  j.erase("threads");
  j.erase("deterministic");
  return j;
}

void check_known(const json& patch, const json& known, const std::string& where) {
  if (!patch.is_object()) throw InputError("config: expected an object at '" + where + "'");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw InputError("config: unknown field '" + path + "'");
    if (known.at(key).is_object()) check_known(value, known.at(key), path);
  }
}

template <typename F>
void parallel_chunks(std::size_t n, unsigned threads, F&& f) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t chunk = (n + threads - 1) / threads;
  std::vector<std::jthread> pool;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    pool.emplace_back([&f, begin, end = std::min(n, begin + chunk)] {
      for (std::size_t i = begin; i < end; ++i) f(i);
    });
  }
}

}  // namespace

json to_json(const PipelineConfig& config) {
  json j = json::object();
  j["synth"] = to_json(config.synth);
  PipelineConfig copy = config;
  for_each_field(copy, [&](const char* section, const char* key, auto& value) {
    j[section][key] = put(value);
  });
  j["threads"] = config.threads;
  j["deterministic"] = config.deterministic;
  return j;
}

PipelineConfig pipeline_config_from_json(const json& patch, PipelineConfig base) {
  json merged = to_json(base);
  check_known(patch, merged, "");
  merged.merge_patch(patch);
  PipelineConfig c;
  c.synth = synth_config_from_json(merged.at("synth"));
  for_each_field(c, [&](const char* section, const char* key, auto& value) {
    try {
      get(merged.at(section).at(key), value);
    } catch (const json::exception& e) {
      throw InputError(std::string("config: field '") + section + "." + key + "': " + e.what());
    }
  });
  try {
    c.threads = merged.at("threads").get<unsigned>();
    c.deterministic = merged.at("deterministic").get<bool>();
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  if (c.threads == 0) c.threads = 1;
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path, PipelineConfig base) {
  const std::string text = io::read_file(path);
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw InputError("config '" + path.string() + "' is not valid JSON");
  return pipeline_config_from_json(j, std::move(base));
}

void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value) {
  json parsed = json::parse(value.begin(), value.end(), nullptr, false);
  if (parsed.is_discarded()) parsed = std::string(value);
  json patch = parsed;
  std::string_view rest = key;
  std::vector<std::string> parts;
  for (std::size_t dot; (dot = rest.find('.')) != std::string_view::npos; rest.remove_prefix(dot + 1)) {
    parts.emplace_back(rest.substr(0, dot));
  }
  parts.emplace_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, std::move(patch)}};
  config = pipeline_config_from_json(patch, config);
}

std::uint64_t config_hash(const PipelineConfig& config) { return fnv1a64(hashed_json(config).dump()); }

std::string hash_hex(std::uint64_t hash) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

// ---------------------------------------------------------------------------
// Embed and match
// ---------------------------------------------------------------------------

EmbeddingSet embed(const Checkpoint& ckpt, const HeteroGraph& graph, std::uint64_t seed,
                   unsigned threads) {
  if (ckpt.node_counts != graph.counts() || ckpt.table.counts() != graph.counts()) {
    throw ArtifactError("checkpoint was trained on a graph with different node counts");
  }
  BatchEngine engine(graph, ckpt.table, ckpt.train.sampling, threads);
  constexpr std::uint32_t kChunk = 4096;
  EmbeddingSet out;
  for (NodeType t : kAllNodeTypes) {
    const std::uint32_t n = graph.node_count(t);
    Eigen::MatrixXf& dst = out.of(t);
    dst.resize(static_cast<Eigen::Index>(ckpt.shape.hidden), n);
    for (std::uint32_t begin = 0; begin < n; begin += kChunk) {
      std::vector<NodeRef> nodes;
      for (std::uint32_t i = begin; i < std::min(n, begin + kChunk); ++i) nodes.push_back({t, i});
      const Mat<double> h = engine.embed(ckpt.params, nodes, seed);
      if (!h.allFinite()) throw NumericError("non-finite embedding for node type " + std::string(to_string(t)));
      dst.middleCols(begin, static_cast<Eigen::Index>(nodes.size())) = h.cast<float>();
    }
  }
  return out;
}

std::vector<CandidateList> match_all(std::span<const BehaviorSequence> users, const HeteroGraph& graph,
                                     const SimilarityIndex& index, const MatchConfig& config,
                                     unsigned threads) {
  if (graph.edge_count() == 0) throw InputError("cannot match against a graph without edges");
  std::vector<const BehaviorSequence*> order;
  for (const auto& u : users) order.push_back(&u);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->user_id < b->user_id; });
  std::vector<CandidateList> out(order.size());
  parallel_chunks(order.size(), threads, [&](std::size_t i) { out[i] = match(*order[i], graph, index, config); });
  return out;
}

std::vector<BehaviorSequence> load_behaviors(const std::filesystem::path& path, const HeteroGraph& graph,
                                             const MatchConfig& config) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open behaviors file '" + path.string() + "'");
  std::vector<BehaviorSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_behaviors(line, graph, config));
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<CandidateList> reference_lists(const TrainLog& log, std::size_t video_count,
                                           std::span<const BehaviorSequence> users, std::size_t k,
                                           double min_watch) {
  const BehaviorSequence anyone{"*popularity", {}};
  auto out = popularity_baseline(log, video_count, std::span(&anyone, 1), k, min_watch);
  auto co = cooccurrence_baseline(log, users, k, min_watch);
  out.insert(out.end(), std::make_move_iterator(co.begin()), std::make_move_iterator(co.end()));
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Synth: return "synth";
    case Stage::BuildGraph: return "build-graph";
    case Stage::Train: return "train";
    case Stage::Embed: return "embed";
    case Stage::Match: return "match";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  for (Stage st : {Stage::Synth, Stage::BuildGraph, Stage::Train, Stage::Embed, Stage::Match, Stage::Evaluate}) {
    if (to_string(st) == s) return st;
  }
  throw InputError("unknown stage '" + std::string(s) + "'");
}

PipelinePaths pipeline_paths(const std::filesystem::path& dir) {
  PipelinePaths p;
  p.root = dir;
  p.corpus = synth_paths(dir / "corpus");
  p.graph = dir / "graph.gdr";
  p.checkpoint = dir / "model.gdrm";
  p.loss_curve = dir / "loss.csv";
  p.embeddings = dir / "embeddings";
  p.candidates = dir / "candidates.tsv";
  p.reference = dir / "reference.tsv";
  p.report = dir / "report.json";
  return p;
}

namespace {

template <typename F>
void run_stage(Stage stage, const LogFn& log, F&& body) {
  const std::string prefix = "stage " + std::string(to_string(stage)) + ": ";
  const auto start = std::chrono::steady_clock::now();
  if (log) log({{"event", "stage_start"}, {"stage", to_string(stage)}});
  try {
    body();
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const ArtifactError& e) {
    throw ArtifactError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (log) log({{"event", "stage_done"}, {"stage", to_string(stage)}, {"seconds", seconds}});
}

}  // namespace

MetricReport run_pipeline(const PipelineConfig& config, const std::filesystem::path& workdir,
                          Stage start, const LogFn& log) {
  const PipelinePaths paths = pipeline_paths(workdir);
  const std::uint64_t hash = config_hash(config);
  const unsigned threads = config.deterministic ? 1u : config.threads;
  auto emit = [&](json event) {
    if (log) log(event);
  };

  if (start <= Stage::Synth) {
    run_stage(Stage::Synth, log, [&] {
      const SynthCorpus corpus = generate(config.synth);
      write_corpus(corpus, paths.corpus.interactions.parent_path());
      emit({{"event", "synth"}, {"interactions", corpus.interactions.size()}, {"tests", corpus.tests.size()}});
    });
  }

  if (start <= Stage::BuildGraph) {
    run_stage(Stage::BuildGraph, log, [&] {
      const IngestResult in = ingest_files(paths.corpus.interactions, paths.corpus.metas,
                                           paths.corpus.profiles, config.ingest);
      const HeteroGraph graph = build_graph(in.corpus, config.rules);
      save_graph(graph, paths.graph, hash);
      emit({{"event", "graph"}, {"nodes", graph.total_nodes()}, {"edges", graph.edge_count()},
            {"malformed", in.report.errors.size()}});
    });
  }

  if (start <= Stage::Train) {
    run_stage(Stage::Train, log, [&] {
      const HeteroGraph graph = load_graph(paths.graph);
      Checkpoint ckpt;
      ckpt.shape = config.shape;
      ckpt.train = config.train;
      ckpt.train.threads = threads;
      ckpt.node_counts = graph.counts();
      ckpt.table = fit_projection(graph, config.shape.feature);
      ckpt.config_hash = hash;
      ModelParams<double> init = init_params<double>(config.shape, config.train.seed);
      init.lambda_s = config.lambda_s;
      TrainResult result = train_from(graph, ckpt.table, std::move(init), ckpt.train,
                                      [&](std::size_t epoch, double loss) {
                                        emit({{"event", "epoch"}, {"epoch", epoch}, {"mean_loss", loss}});
                                      });
      ckpt.train.threads = 1;  // not part of the artifact
      ckpt.params = std::move(result.params);
      save_checkpoint(ckpt, paths.checkpoint);
      io::write_file(paths.loss_curve, loss_curve_csv(result.curve));
      if (result.aborted) throw NumericError("training aborted: " + result.abort_reason);
    });
  }

  if (start <= Stage::Embed) {
    run_stage(Stage::Embed, log, [&] {
      const Checkpoint ckpt = load_checkpoint(paths.checkpoint);
      const HeteroGraph graph = load_graph(paths.graph);
      save_embeddings(embed(ckpt, graph, config.embed_seed, threads), paths.embeddings, hash);
    });
  }

  if (start <= Stage::Match) {
    run_stage(Stage::Match, log, [&] {
      const HeteroGraph graph = load_graph(paths.graph);
      const SimilarityIndex index(load_embeddings(paths.embeddings), config.index);
      const auto users = load_behaviors(paths.corpus.tests, graph, config.match);
      const auto lists = match_all(users, graph, index, config.match, threads);
      io::write_file(paths.candidates, candidates_tsv(lists, graph, hash));
      emit({{"event", "match"}, {"users", lists.size()}});
    });
  }

  MetricReport report;
  run_stage(Stage::Evaluate, log, [&] {
    const GraphArtifact art = load_graph_artifact(paths.graph);
    const HeteroGraph& graph = art.graph;
    const CandidateFile cands = parse_candidates_tsv(io::read_file(paths.candidates), graph);
    const EmbeddingSet emb = load_embeddings(paths.embeddings);
    const std::uint64_t emb_hash = deserialize_embeddings(io::read_file(embedding_path(paths.embeddings, NodeType::Video))).config_hash;
    if (art.config_hash != hash || cands.config_hash.value_or(0) != hash || emb_hash != hash) {
      throw ArtifactError("artifacts under '" + workdir.string() + "' were produced with a different config (expected " +
                          hash_hex(hash) + ")");
    }
    const auto tests = load_test_instances(paths.corpus.tests, graph, config.match);
    std::vector<BehaviorSequence> users;
    for (const auto& t : tests) users.push_back(t.behaviors);
    const TrainLog train_log = load_train_log(paths.corpus.interactions, graph);
    const auto reference = reference_lists(train_log, graph.node_count(NodeType::Video), users,
                                           config.eval.baseline_k, config.eval.min_watch);
    io::write_file(paths.reference, candidates_tsv(reference, graph, hash));
    const VideoFacets facets = load_facets(graph, paths.corpus.metas);
    const SimilarityIndex index(emb, config.index);
    report = evaluate(tests, cands.lists, graph, facets, train_log, reference, &index, config.eval);
    json j = to_json(report);
    j["config_hash"] = hash_hex(hash);
    io::write_file(paths.report, j.dump(2) + "\n");
  });
  return report;
}

}  // namespace divmatch
