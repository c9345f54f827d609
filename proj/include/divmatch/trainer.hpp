#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "divmatch/featspace.hpp"
#include "divmatch/fhgat.hpp"
#include "divmatch/hetgraph.hpp"

namespace divmatch {

enum class NegativeSampling : std::uint8_t { Uniform, Degree };

struct TrainConfig {
  std::size_t negatives_per_positive = 20;
  std::size_t batch_size = 512;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 10;
  std::uint64_t seed = 42;
  NegativeSampling negatives = NegativeSampling::Uniform;
  SamplingConfig sampling;
  unsigned threads = 1;
};

struct TrainSample {
  NodeRef center;
  NodeRef positive;
  std::vector<NodeRef> negatives;
};

/// A batch plus the seed pinning every neighbor sample drawn while
/// evaluating it, so the loss is a deterministic function of the params.
struct TrainBatch {
  std::vector<TrainSample> samples;
  std::uint64_t seed = 0;
};

/// Draws `count` samples: positives uniform over the undirected edge set
/// with random orientation, negatives rejected against N(k) and k itself.
std::vector<TrainSample> sample_batch(const HeteroGraph& graph, const TrainConfig& config, Rng& rng,
                                      std::size_t count);
inline std::vector<TrainSample> sample_batch(const HeteroGraph& graph, const TrainConfig& config,
                                             Rng& rng) {
  return sample_batch(graph, config, rng, config.batch_size);
}

/// log(sigmoid(x)) = -softplus(-x), stable for large |x|.
double log_sigmoid(double x);

/// One sample's loss: sum over negatives j of log s(x_j) - log s(x_i), where
/// x_i = h_k.h_i and x_j = h_k.h_j.
double sample_objective(double x_positive, std::span<const double> x_negatives);

/// Evaluates embeddings, the neighbor-similarity loss and its analytic
/// gradient for whole batches, sharing layer-1 work across all nodes that
/// appear in the batch. Results agree with `forward` node by node.
class BatchEngine {
 public:
  BatchEngine(const HeteroGraph& graph, const ProjectionTable& table, SamplingConfig sampling,
              unsigned threads = 1);

  /// Embeddings of `nodes` as columns (hidden x n).
  Mat<double> embed(const ModelParams<double>& params, std::span<const NodeRef> nodes,
                    std::uint64_t seed) const;

  /// Summed loss J over the batch.
  double loss(const ModelParams<double>& params, const TrainBatch& batch) const;

  /// Summed loss; writes dJ/dparams into `grad` (overwritten).
  double loss_and_grad(const ModelParams<double>& params, const TrainBatch& batch,
                       ModelParams<double>& grad) const;

  const HeteroGraph& graph() const { return graph_; }
  const ProjectionTable& table() const { return table_; }

 private:
  struct Pass;
  void run_forward(const ModelParams<double>& params, std::span<const NodeRef> centers,
                   std::uint64_t seed, Pass& pass) const;

  const HeteroGraph& graph_;
  const ProjectionTable& table_;
  SamplingConfig sampling_;
  unsigned threads_;
  // Per global node: active feature indices grouped by field.
  std::vector<std::uint32_t> feat_index_;
  std::vector<std::size_t> feat_offsets_;  // (node * kFieldCount + f) -> begin
};

/// Central finite differences of `objective` w.r.t. every parameter entry.
ModelParams<double> fd_gradient(const std::function<double(const ModelParams<double>&)>& objective,
                                const ModelParams<double>& at, double step);

std::vector<std::span<double>> tensor_spans(ModelParams<double>& params);
std::vector<std::span<const double>> tensor_spans(const ModelParams<double>& params);

class Adam {
 public:
  Adam(const ModelParams<double>& like, const TrainConfig& config);
  void step(ModelParams<double>& params, const ModelParams<double>& grad);

 private:
  ModelParams<double> m_, v_;
  double lr_, beta1_, beta2_, epsilon_;
  std::uint64_t t_ = 0;
};

/// Size of the fixed sample set the loss curve is measured on.
inline constexpr std::size_t kCurveSamples = 4096;

struct TrainResult {
  ModelParams<double> params;
  /// Mean per-sample J over one fixed sample set (at most kCurveSamples,
  /// drawn from a stream separate from training); entry 0 is measured
  /// before the first update, entry e after epoch e.
  std::vector<double> curve;
  bool aborted = false;
  std::string abort_reason;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

TrainResult train(const HeteroGraph& graph, const ProjectionTable& table, const ModelShape& shape,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Same as above starting from explicit parameters.
TrainResult train_from(const HeteroGraph& graph, const ProjectionTable& table,
                       ModelParams<double> params, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// GDRM checkpoint
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelShape shape;
  TrainConfig train;
  NodeCounts node_counts{};
  ProjectionTable table;
  ModelParams<double> params;
  std::uint64_t config_hash = 0;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string loss_curve_csv(std::span<const double> curve);

}  // namespace divmatch
