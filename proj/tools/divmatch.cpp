#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "divmatch/binary_io.hpp"
#include "divmatch/pipeline.hpp"

namespace fs = std::filesystem;
using namespace divmatch;
using nlohmann::json;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flags;
  unsigned threads = 0;
  bool deterministic = false;
  bool quiet = false;
};

void log_event(const Common& common, std::string_view command, json event) {
  if (common.quiet) return;
  event["cmd"] = command;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  event["t_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  std::cerr << event.dump() << '\n';
}

/// Defaults, then --config, then --set, then dedicated flags.
PipelineConfig effective_config(const Common& common) {
  PipelineConfig config;
  if (!common.config_file.empty()) config = load_pipeline_config(common.config_file);
  for (const auto& s : common.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InputError("--set expects key=value, got '" + s + "'");
    set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, value] : common.flags) set_config_value(config, key, value);
  if (common.threads > 0) config.threads = common.threads;
  if (common.deterministic) config.deterministic = true;
  return config;
}

/// A flag that overrides one config field.
void override_flag(CLI::App* app, Common& common, const std::string& name, const std::string& key,
                   const std::string& help) {
  app->add_option_function<std::string>(
      name, [&common, key](const std::string& v) { common.flags.emplace_back(key, v); }, help);
}

unsigned worker_threads(const PipelineConfig& c) { return c.deterministic ? 1u : c.threads; }

EmbeddingSet embeddings_from_model(const fs::path& model, const HeteroGraph& graph,
                                   const PipelineConfig& config, std::uint64_t* hash) {
  if (fs::is_directory(model)) {
    if (hash) {
      *hash = deserialize_embeddings(io::read_file(embedding_path(model, NodeType::Video))).config_hash;
    }
    return load_embeddings(model);
  }
  const Checkpoint ckpt = load_checkpoint(model);
  if (hash) *hash = ckpt.config_hash;
  return embed(ckpt, graph, config.embed_seed, worker_threads(config));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diversity-aware heterogeneous graph matching"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_file, "Pipeline config JSON")->check(CLI::ExistingFile);
  app.add_option("--set", common.sets, "Override a config field: section.key=value");
  app.add_option("--threads", common.threads, "Worker threads");
  app.add_flag("--deterministic", common.deterministic, "Single-threaded, fixed-order execution");
  app.add_flag("--quiet", common.quiet, "No log output");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::string synth_config, out_dir;
  synth->add_option("--config", synth_config, "SynthConfig JSON (or a pipeline config)");
  synth->add_option("--out-dir", out_dir, "Output directory")->required();
  override_flag(synth, common, "--seed", "synth.rng_seed", "Random seed");

  auto* build = app.add_subcommand("build-graph", "Build the heterogeneous graph");
  std::string interactions, metas, profiles, graph_out;
  build->add_option("--interactions", interactions)->required()->check(CLI::ExistingFile);
  build->add_option("--metas", metas)->required()->check(CLI::ExistingFile);
  build->add_option("--profiles", profiles)->required()->check(CLI::ExistingFile);
  build->add_option("--out", graph_out)->required();
  override_flag(build, common, "--min-watch", "graph.min_watch", "Valid-watch threshold (strict)");
  override_flag(build, common, "--min-weekly", "graph.min_weekly", "Valid watches per week for VU");
  override_flag(build, common, "--week-anchor", "graph.week_anchor", "'auto' or a unix timestamp");

  auto* train_cmd = app.add_subcommand("train", "Train the network");
  std::string train_graph, model_out, curve_out;
  train_cmd->add_option("--graph", train_graph)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", model_out)->required();
  train_cmd->add_option("--loss-curve", curve_out, "Loss CSV (default: <out>.loss.csv)");
  override_flag(train_cmd, common, "--lr", "train.lr", "Adam learning rate");
  override_flag(train_cmd, common, "--epochs", "train.epochs", "Epochs");
  override_flag(train_cmd, common, "--batch", "train.batch", "Batch size");
  override_flag(train_cmd, common, "--negatives", "train.negatives", "Negatives per positive");
  override_flag(train_cmd, common, "--seed", "train.seed", "Random seed");
  train_cmd->add_flag("--deterministic", common.deterministic);

  auto* embed_cmd = app.add_subcommand("embed", "Export node embeddings");
  std::string embed_model, embed_graph, embed_out;
  embed_cmd->add_option("--model", embed_model)->required()->check(CLI::ExistingFile);
  embed_cmd->add_option("--graph", embed_graph)->required()->check(CLI::ExistingFile);
  embed_cmd->add_option("--out-dir", embed_out)->required();
  override_flag(embed_cmd, common, "--seed", "embed.seed", "Neighbor sampling seed");

  auto* match_cmd = app.add_subcommand("match", "Generate candidate lists");
  std::string match_model, match_graph, behaviors, candidates_out;
  match_cmd->add_option("--model", match_model, "Checkpoint file or embeddings directory")
      ->required()
      ->check(CLI::ExistingPath);
  match_cmd->add_option("--graph", match_graph)->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--behaviors", behaviors)->required()->check(CLI::ExistingFile);
  match_cmd->add_option("--out", candidates_out)->required();
  override_flag(match_cmd, common, "--topk", "match.topk", "Candidates per user");
  override_flag(match_cmd, common, "--per-key", "match.per_key", "Retrieval depth per key");
  override_flag(match_cmd, common, "--eta", "match.eta", "Time decay");
  override_flag(match_cmd, common, "--lv", "match.lv", "Video channel weight");
  override_flag(match_cmd, common, "--lt", "match.lt", "Tag channel weight");
  override_flag(match_cmd, common, "--lm", "match.lm", "Media channel weight");
  override_flag(match_cmd, common, "--backend", "index.backend", "exact or ivf");

  auto* eval_cmd = app.add_subcommand("evaluate", "Compute accuracy and diversity metrics");
  std::string eval_cands, eval_test, eval_graph, eval_metas, eval_log, eval_ref, eval_model, report_out;
  bool force = false;
  eval_cmd->add_option("--candidates", eval_cands)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--test", eval_test)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--graph", eval_graph)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--metas", eval_metas)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--train-log", eval_log)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--reference", eval_ref, "Reference candidate lists for novelty")->check(CLI::ExistingFile);
  eval_cmd->add_option("--model", eval_model, "Checkpoint or embeddings directory (element diversity)")
      ->check(CLI::ExistingPath);
  eval_cmd->add_option("--report", report_out)->required();
  eval_cmd->add_flag("--force", force, "Accept inputs with different config hashes");

  auto* pipe = app.add_subcommand("pipeline", "Run every stage");
  std::string workdir, skip_to = "synth";
  pipe->add_option("--workdir", workdir)->required();
  pipe->add_option("--skip-to", skip_to, "First stage to run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string command;
  try {
    if (synth->parsed()) {
      command = "synth";
      PipelineConfig config = effective_config(common);
      if (!synth_config.empty()) {
        const json j = json::parse(io::read_file(synth_config), nullptr, false);
        if (j.is_discarded()) throw InputError("synth config '" + synth_config + "' is not valid JSON");
        if (j.contains("synth")) {
          config = pipeline_config_from_json(j, config);
        } else {
          config.synth = synth_config_from_json(j);
        }
        for (const auto& [key, value] : common.flags) set_config_value(config, key, value);
      }
      const SynthCorpus corpus = generate(config.synth);
      write_corpus(corpus, out_dir);
      log_event(common, command, {{"event", "done"}, {"interactions", corpus.interactions.size()},
                                  {"videos", corpus.metas.size()}, {"tests", corpus.tests.size()}});
      return 0;
    }

    const PipelineConfig config = effective_config(common);
    const std::uint64_t hash = config_hash(config);
    auto log = [&](const json& e) { log_event(common, command, e); };

    if (build->parsed()) {
      command = "build-graph";
      log({{"event", "config"}, {"config_hash", hash_hex(hash)}, {"config", to_json(config)}});
      const IngestResult in = ingest_files(interactions, metas, profiles, config.ingest);
      for (const auto& err : in.report.errors) {
        log({{"event", "malformed"}, {"stream", err.stream}, {"line", err.line}, {"message", err.message}});
      }
      const HeteroGraph graph = build_graph(in.corpus, config.rules);
      save_graph(graph, graph_out, hash);
      json counts;
      for (EdgeType e : kAllEdgeTypes) counts[std::string(to_string(e))] = graph.edges(e).size();
      log({{"event", "done"}, {"nodes", graph.total_nodes()}, {"edges", counts},
           {"dropped_unknown_video", in.report.dropped_unknown_video},
           {"dropped_duplicates", in.report.dropped_duplicates}});
    } else if (train_cmd->parsed()) {
      command = "train";
      log({{"event", "config"}, {"config_hash", hash_hex(hash)}, {"config", to_json(config)}});
      const HeteroGraph graph = load_graph(train_graph);
      Checkpoint ckpt;
      ckpt.shape = config.shape;
      ckpt.train = config.train;
      ckpt.train.threads = worker_threads(config);
      ckpt.node_counts = graph.counts();
      ckpt.table = fit_projection(graph, config.shape.feature);
      ckpt.config_hash = hash;
      ModelParams<double> init = init_params<double>(config.shape, config.train.seed);
      init.lambda_s = config.lambda_s;
      TrainResult result = train_from(graph, ckpt.table, std::move(init), ckpt.train,
                                      [&](std::size_t epoch, double loss) {
                                        log({{"event", "epoch"}, {"epoch", epoch}, {"mean_loss", loss}});
                                      });
      ckpt.train.threads = 1;
      ckpt.params = std::move(result.params);
      save_checkpoint(ckpt, model_out);
      io::write_file(curve_out.empty() ? model_out + ".loss.csv" : curve_out, loss_curve_csv(result.curve));
      if (result.aborted) throw NumericError("training aborted: " + result.abort_reason);
    } else if (embed_cmd->parsed()) {
      command = "embed";
      const Checkpoint ckpt = load_checkpoint(embed_model);
      const HeteroGraph graph = load_graph(embed_graph);
      save_embeddings(embed(ckpt, graph, config.embed_seed, worker_threads(config)), embed_out, ckpt.config_hash);
      log({{"event", "done"}, {"out_dir", embed_out}});
    } else if (match_cmd->parsed()) {
      command = "match";
      const GraphArtifact art = load_graph_artifact(match_graph);
      std::uint64_t model_hash = 0;
      const SimilarityIndex index(embeddings_from_model(match_model, art.graph, config, &model_hash), config.index);
      const auto users = load_behaviors(behaviors, art.graph, config.match);
      const auto lists = match_all(users, art.graph, index, config.match, worker_threads(config));
      io::write_file(candidates_out, candidates_tsv(lists, art.graph, hash));
      log({{"event", "done"}, {"users", lists.size()}, {"config_hash", hash_hex(hash)},
           {"graph_hash", hash_hex(art.config_hash)}, {"model_hash", hash_hex(model_hash)}});
    } else if (eval_cmd->parsed()) {
      command = "evaluate";
      const GraphArtifact art = load_graph_artifact(eval_graph);
      const HeteroGraph& graph = art.graph;
      const CandidateFile cands = parse_candidates_tsv(io::read_file(eval_cands), graph);
      std::vector<std::pair<std::string, std::uint64_t>> hashes = {{eval_graph, art.config_hash},
                                                                   {eval_cands, cands.config_hash.value_or(0)}};
      std::optional<SimilarityIndex> index;
      if (!eval_model.empty()) {
        std::uint64_t model_hash = 0;
        index.emplace(embeddings_from_model(eval_model, graph, config, &model_hash), config.index);
        hashes.emplace_back(eval_model, model_hash);
      }
      for (const auto& [path, h] : hashes) {
        if (h != hashes.front().second) {
          if (!force) {
            throw ArtifactError("config hash of '" + path + "' (" + hash_hex(h) + ") differs from '" +
                                hashes.front().first + "' (" + hash_hex(hashes.front().second) +
                                "); pass --force to evaluate anyway");
          }
          log({{"event", "hash_mismatch_forced"}, {"path", path}});
        }
      }
      const auto tests = load_test_instances(eval_test, graph, config.match);
      const TrainLog train_log = load_train_log(eval_log, graph);
      std::vector<CandidateList> reference;
      if (!eval_ref.empty()) {
        reference = parse_candidates_tsv(io::read_file(eval_ref), graph).lists;
      } else {
        std::vector<BehaviorSequence> users;
        for (const auto& t : tests) users.push_back(t.behaviors);
        reference = reference_lists(train_log, graph.node_count(NodeType::Video), users,
                                    config.eval.baseline_k, config.eval.min_watch);
      }
      const VideoFacets facets = load_facets(graph, eval_metas);
      const MetricReport report = evaluate(tests, cands.lists, graph, facets, train_log, reference,
                                           index ? &*index : nullptr, config.eval);
      if (report.missing_lists > 0) log({{"event", "missing_lists"}, {"count", report.missing_lists}});
      json j = to_json(report);
      j["config_hash"] = hash_hex(hashes.front().second);
      io::write_file(report_out, j.dump(2) + "\n");
      std::cout << j.dump(2) << '\n';
    } else if (pipe->parsed()) {
      command = "pipeline";
      log({{"event", "config"}, {"config_hash", hash_hex(hash)}, {"config", to_json(config)}});
      const MetricReport report = run_pipeline(config, workdir, stage_from_string(skip_to), log);
      std::cout << to_json(report).dump(2) << '\n';
    }
    return 0;
  } catch (const Error& e) {
    log_event(common, command, {{"event", "error"}, {"message", e.what()}, {"exit_code", e.exit_code()}});
    if (common.quiet) std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    log_event(common, command, {{"event", "error"}, {"message", e.what()}});
    if (common.quiet) std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
