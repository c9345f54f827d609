#include "divmatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "divmatch/binary_io.hpp"

namespace divmatch {

namespace {

template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  if (threads <= 1 || n < 2 * threads) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t chunk = (n + threads - 1) / threads;
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&f, begin, end] {
      for (std::size_t i = begin; i < end; ++i) f(i);
    });
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Softmax in place over `logits`.
void softmax(std::vector<double>& logits) {
  if (logits.empty()) return;
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& x : logits) {
    x = std::exp(x - top);
    sum += x;
  }
  for (double& x : logits) x /= sum;
}

}  // namespace

double log_sigmoid(double x) {
  // -softplus(-x)
  return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

double sample_objective(double x_positive, std::span<const double> x_negatives) {
  const double positive = log_sigmoid(x_positive);
  double j = 0.0;
  for (double x : x_negatives) j += log_sigmoid(x) - positive;
  return j;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::vector<TrainSample> sample_batch(const HeteroGraph& graph, const TrainConfig& config, Rng& rng,
                                      std::size_t count) {
  if (config.negatives_per_positive < 1) throw InputError("negatives_per_positive must be >= 1");
  const std::size_t edges = graph.edge_count();
  if (edges == 0) throw InputError("cannot sample training pairs from a graph without edges");

  std::vector<std::size_t> degree_cdf;
  if (config.negatives == NegativeSampling::Degree) {
    degree_cdf.resize(graph.total_nodes());
    std::size_t acc = 0;
    for (std::uint32_t g = 0; g < graph.total_nodes(); ++g) {
      acc += graph.degree(graph.node_at(g));
      degree_cdf[g] = acc;
    }
  }
  auto draw_node = [&]() -> NodeRef {
    if (degree_cdf.empty()) {
      return graph.node_at(static_cast<std::uint32_t>(rng.uniform_index(graph.total_nodes())));
    }
    const auto r = rng.uniform_index(degree_cdf.back());
    const auto it = std::upper_bound(degree_cdf.begin(), degree_cdf.end(), r);
    return graph.node_at(static_cast<std::uint32_t>(it - degree_cdf.begin()));
  };

  std::vector<TrainSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    std::size_t pick = rng.uniform_index(edges);
    TrainSample sample;
    for (EdgeType e : kAllEdgeTypes) {
      auto list = graph.edges(e);
      if (pick < list.size()) {
        auto [ta, tb] = endpoint_types(e);
        sample.center = {ta, list[pick].first};
        sample.positive = {tb, list[pick].second};
        break;
      }
      pick -= list.size();
    }
    if (rng.bernoulli(0.5)) std::swap(sample.center, sample.positive);

    const auto nb = graph.neighbors(sample.center);
    const std::size_t cap = 100 * config.negatives_per_positive;
    std::size_t tries = 0;
    while (sample.negatives.size() < config.negatives_per_positive) {
      if (++tries > cap) {
        throw InputError("negative sampling for " + to_string(sample.center) + " exceeded " +
                         std::to_string(cap) + " tries");
      }
      const NodeRef j = draw_node();
      if (j == sample.center || std::binary_search(nb.begin(), nb.end(), j)) continue;
      sample.negatives.push_back(j);
    }
    out.push_back(std::move(sample));
  }
  return out;
}

// ---------------------------------------------------------------------------
// BatchEngine
// ---------------------------------------------------------------------------

struct BatchEngine::Pass {
  std::vector<std::uint32_t> centers;  // global ids

  // Layer-1 slots: one per (node, hop) pair in use.
  std::vector<std::uint32_t> slot_node;
  std::vector<std::vector<std::uint32_t>> slot_sample;  // global ids, ascending
  std::vector<std::array<std::vector<double>, kFieldCount>> slot_alpha;
  Mat<double> slot_un, slot_us, slot_y;

  // Nodes whose features are read; `local` maps global id -> column.
  std::vector<std::uint32_t> nodes;
  std::vector<std::int32_t> local;
  Mat<double> contrib;  // hidden x (nodes * kFieldCount): W_n(field block) . feature block
  Mat<double> logit;    // kFieldCount x nodes: w_f . feature block

  // Layer 2, one column per center.
  std::vector<std::uint32_t> center_slot;
  std::vector<std::vector<std::uint32_t>> center_nbr_slots;
  std::vector<std::array<std::size_t, kFieldCount + 1>> center_bounds;
  std::vector<std::array<std::vector<double>, kFieldCount>> center_alpha;
  Mat<double> concat, yself, un, us, h;
};

BatchEngine::BatchEngine(const HeteroGraph& graph, const ProjectionTable& table,
                         SamplingConfig sampling, unsigned threads)
    : graph_(graph), table_(table), sampling_(sampling), threads_(std::max(1u, threads)) {
  if (sampling_.first == 0 || sampling_.second == 0) {
    throw std::invalid_argument("neighbor sampling budgets must be positive");
  }
  const std::uint32_t n = graph.total_nodes();
  feat_offsets_.assign(static_cast<std::size_t>(n) * kFieldCount + 1, 0);
  const FeatureDims& dims = table.dims();
  for (std::uint32_t g = 0; g < n; ++g) {
    const auto active = active_features(graph, table, graph.node_at(g));
    std::size_t pos = 0;
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      const std::uint32_t end = dims.offset(f) + dims.width[f];
      while (pos < active.size() && active[pos] < end) feat_index_.push_back(active[pos++]);
      feat_offsets_[g * kFieldCount + f + 1] = feat_index_.size();
    }
  }
}

void BatchEngine::run_forward(const ModelParams<double>& params, std::span<const NodeRef> centers,
                              std::uint64_t seed, Pass& pass) const {
  const std::uint32_t n = graph_.total_nodes();
  const Eigen::Index hidden1 = params.layer1.out_dim();
  const Eigen::Index hidden2 = params.layer2.out_dim();
  const double lambda = params.lambda_s;
  const FeatureDims& dims = table_.dims();

  auto to_globals = [&](const std::vector<NodeRef>& refs) {
    std::vector<std::uint32_t> out;
    out.reserve(refs.size());
    for (const auto& r : refs) out.push_back(graph_.global_id(r));
    return out;
  };

  // Slots.
  std::vector<std::int32_t> hop1_slot(n, -1);
  pass.centers.clear();
  pass.center_slot.clear();
  pass.center_nbr_slots.clear();
  for (const NodeRef& c : centers) {
    const std::uint32_t g = graph_.global_id(c);
    pass.centers.push_back(g);
    pass.center_slot.push_back(static_cast<std::uint32_t>(pass.slot_node.size()));
    pass.slot_node.push_back(g);
    pass.slot_sample.push_back(to_globals(hop_sample(graph_, c, sampling_, seed, 0)));
  }
  const std::size_t hop0_slots = pass.slot_node.size();
  for (std::size_t c = 0; c < hop0_slots; ++c) {
    std::vector<std::uint32_t> nbr_slots;
    for (std::uint32_t m : pass.slot_sample[c]) {
      if (hop1_slot[m] < 0) {
        hop1_slot[m] = static_cast<std::int32_t>(pass.slot_node.size());
        pass.slot_node.push_back(m);
        pass.slot_sample.push_back(
            to_globals(hop_sample(graph_, graph_.node_at(m), sampling_, seed, 1)));
      }
      nbr_slots.push_back(static_cast<std::uint32_t>(hop1_slot[m]));
    }
    pass.center_nbr_slots.push_back(std::move(nbr_slots));
  }
  const std::size_t slots = pass.slot_node.size();

  // Nodes whose features are read.
  pass.local.assign(n, -1);
  pass.nodes.clear();
  auto touch = [&](std::uint32_t g) {
    if (pass.local[g] < 0) {
      pass.local[g] = static_cast<std::int32_t>(pass.nodes.size());
      pass.nodes.push_back(g);
    }
  };
  for (std::size_t s = 0; s < slots; ++s) {
    touch(pass.slot_node[s]);
    for (std::uint32_t m : pass.slot_sample[s]) touch(m);
  }
  const std::size_t touched = pass.nodes.size();
  pass.contrib.setZero(hidden1, static_cast<Eigen::Index>(touched * kFieldCount));
  pass.logit.setZero(kFieldCount, static_cast<Eigen::Index>(touched));
  parallel_for(touched, threads_, [&](std::size_t x) {
    const std::uint32_t g = pass.nodes[x];
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      auto col = pass.contrib.col(static_cast<Eigen::Index>(x * kFieldCount + f));
      double l = 0.0;
      for (std::size_t k = feat_offsets_[g * kFieldCount + f];
           k < feat_offsets_[g * kFieldCount + f + 1]; ++k) {
        col += params.layer1.neighbor.col(feat_index_[k]);
        l += params.layer1.attention[f][feat_index_[k] - dims.offset(f)];
      }
      pass.logit(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(x)) = l;
    }
  });

  // Layer 1.
  pass.slot_alpha.assign(slots, {});
  pass.slot_un.setZero(hidden1, static_cast<Eigen::Index>(slots));
  pass.slot_us.setZero(hidden1, static_cast<Eigen::Index>(slots));
  pass.slot_y.resize(hidden1, static_cast<Eigen::Index>(slots));
  parallel_for(slots, threads_, [&](std::size_t s) {
    const auto si = static_cast<Eigen::Index>(s);
    const std::uint32_t g = pass.slot_node[s];
    auto us = pass.slot_us.col(si);
    for (std::size_t k = feat_offsets_[g * kFieldCount]; k < feat_offsets_[(g + 1) * kFieldCount]; ++k) {
      us += params.layer1.self.col(feat_index_[k]);
    }
    auto un = pass.slot_un.col(si);
    const auto& sample = pass.slot_sample[s];
    for (std::size_t f = 0; f < kFieldCount && !sample.empty(); ++f) {
      auto& alpha = pass.slot_alpha[s][f];
      alpha.resize(sample.size());
      for (std::size_t i = 0; i < sample.size(); ++i) {
        alpha[i] = pass.logit(static_cast<Eigen::Index>(f), pass.local[sample[i]]);
      }
      softmax(alpha);
      for (std::size_t i = 0; i < sample.size(); ++i) {
        un += alpha[i] * pass.contrib.col(pass.local[sample[i]] * static_cast<Eigen::Index>(kFieldCount) +
                                          static_cast<Eigen::Index>(f));
      }
    }
    pass.slot_y.col(si) = lambda * us.cwiseMax(0.0) + (1.0 - lambda) * un.cwiseMax(0.0);
  });

  // Layer 2.
  const std::size_t nc = pass.centers.size();
  pass.center_bounds.assign(nc, {});
  pass.center_alpha.assign(nc, {});
  pass.concat.setZero(hidden2 * static_cast<Eigen::Index>(kFieldCount), static_cast<Eigen::Index>(nc));
  pass.yself.resize(params.layer2.self.cols(), static_cast<Eigen::Index>(nc));
  parallel_for(nc, threads_, [&](std::size_t c) {
    const auto ci = static_cast<Eigen::Index>(c);
    pass.yself.col(ci) = pass.slot_y.col(pass.center_slot[c]);
    const auto& nbr = pass.center_nbr_slots[c];
    auto& bounds = pass.center_bounds[c];
    // Samples are ascending by NodeRef, so node types are contiguous.
    std::size_t pos = 0;
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      bounds[f] = pos;
      while (pos < nbr.size() &&
             index_of(graph_.node_at(pass.slot_node[nbr[pos]]).type) == f) {
        ++pos;
      }
    }
    bounds[kFieldCount] = pos;
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      auto& alpha = pass.center_alpha[c][f];
      for (std::size_t i = bounds[f]; i < bounds[f + 1]; ++i) {
        alpha.push_back(params.layer2.attention[f].dot(pass.slot_y.col(nbr[i])));
      }
      softmax(alpha);
      auto block = pass.concat.col(ci).segment(static_cast<Eigen::Index>(f) * hidden2, hidden2);
      for (std::size_t i = bounds[f]; i < bounds[f + 1]; ++i) {
        block += alpha[i - bounds[f]] * pass.slot_y.col(nbr[i]);
      }
    }
  });
  pass.un.noalias() = params.layer2.neighbor * pass.concat;
  pass.us.noalias() = params.layer2.self * pass.yself;
  pass.h = lambda * pass.us.cwiseMax(0.0) + (1.0 - lambda) * pass.un.cwiseMax(0.0);
}

Mat<double> BatchEngine::embed(const ModelParams<double>& params, std::span<const NodeRef> nodes,
                               std::uint64_t seed) const {
  // Distinct centers keep the pass small; duplicates are mapped back.
  std::vector<NodeRef> distinct(nodes.begin(), nodes.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  Pass pass;
  run_forward(params, distinct, seed, pass);
  Mat<double> out(pass.h.rows(), static_cast<Eigen::Index>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto it = std::lower_bound(distinct.begin(), distinct.end(), nodes[i]);
    out.col(static_cast<Eigen::Index>(i)) = pass.h.col(it - distinct.begin());
  }
  return out;
}

namespace {

std::vector<NodeRef> batch_nodes(const TrainBatch& batch) {
  std::vector<NodeRef> nodes;
  for (const auto& s : batch.samples) {
    nodes.push_back(s.center);
    nodes.push_back(s.positive);
    nodes.insert(nodes.end(), s.negatives.begin(), s.negatives.end());
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

Eigen::Index column_of(const std::vector<NodeRef>& nodes, NodeRef n) {
  return std::lower_bound(nodes.begin(), nodes.end(), n) - nodes.begin();
}

// Loss over the batch and, when `gh` is non-null, dJ/dh per center column.
double batch_objective(const TrainBatch& batch, const std::vector<NodeRef>& nodes,
                       const Mat<double>& h, Mat<double>* gh) {
  double total = 0.0;
  std::vector<double> xs;
  if (gh) gh->setZero(h.rows(), h.cols());
  for (std::size_t s = 0; s < batch.samples.size(); ++s) {
    const TrainSample& sample = batch.samples[s];
    const Eigen::Index k = column_of(nodes, sample.center);
    const Eigen::Index i = column_of(nodes, sample.positive);
    const double xi = h.col(k).dot(h.col(i));
    const double n_neg = static_cast<double>(sample.negatives.size());
    if (gh) {
      // d/dx log(sigmoid(x)) = sigmoid(-x)
      const double gxi = -n_neg * sigmoid(-xi);
      gh->col(k) += gxi * h.col(i);
      gh->col(i) += gxi * h.col(k);
    }
    xs.clear();
    for (const NodeRef& neg : sample.negatives) {
      const Eigen::Index j = column_of(nodes, neg);
      const double xj = h.col(k).dot(h.col(j));
      xs.push_back(xj);
      if (gh) {
        const double gxj = sigmoid(-xj);
        gh->col(k) += gxj * h.col(j);
        gh->col(j) += gxj * h.col(k);
      }
    }
    const double js = sample_objective(xi, xs);
    if (!std::isfinite(js)) {
      throw NumericError("non-finite loss at sample " + std::to_string(s));
    }
    total += js;
  }
  return total;
}

}  // namespace

double BatchEngine::loss(const ModelParams<double>& params, const TrainBatch& batch) const {
  const auto nodes = batch_nodes(batch);
  Pass pass;
  run_forward(params, nodes, batch.seed, pass);
  return batch_objective(batch, nodes, pass.h, nullptr);
}

double BatchEngine::loss_and_grad(const ModelParams<double>& params, const TrainBatch& batch,
                                  ModelParams<double>& grad) const {
  const auto nodes = batch_nodes(batch);
  Pass pass;
  run_forward(params, nodes, batch.seed, pass);
  Mat<double> gh;
  const double total = batch_objective(batch, nodes, pass.h, &gh);

  grad = zeros_like(params);
  const double lambda = params.lambda_s;
  const Eigen::Index hidden1 = params.layer1.out_dim();
  const Eigen::Index hidden2 = params.layer2.out_dim();
  const FeatureDims& dims = table_.dims();

  // Layer 2.
  const Mat<double> gus = lambda * gh.cwiseProduct((pass.us.array() > 0.0).cast<double>().matrix());
  const Mat<double> gun =
      (1.0 - lambda) * gh.cwiseProduct((pass.un.array() > 0.0).cast<double>().matrix());
  grad.layer2.self.noalias() = gus * pass.yself.transpose();
  grad.layer2.neighbor.noalias() = gun * pass.concat.transpose();
  const Mat<double> gyself = params.layer2.self.transpose() * gus;
  const Mat<double> gconcat = params.layer2.neighbor.transpose() * gun;

  Mat<double> gy = Mat<double>::Zero(hidden1, static_cast<Eigen::Index>(pass.slot_node.size()));
  for (std::size_t c = 0; c < pass.centers.size(); ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    gy.col(pass.center_slot[c]) += gyself.col(ci);
    const auto& nbr = pass.center_nbr_slots[c];
    const auto& bounds = pass.center_bounds[c];
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      const auto& alpha = pass.center_alpha[c][f];
      if (alpha.empty()) continue;
      const auto gagg = gconcat.col(ci).segment(static_cast<Eigen::Index>(f) * hidden2, hidden2);
      std::vector<double> galpha(alpha.size());
      double mean = 0.0;
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        galpha[i] = gagg.dot(pass.slot_y.col(nbr[bounds[f] + i]));
        mean += alpha[i] * galpha[i];
      }
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        const auto slot = nbr[bounds[f] + i];
        const double glogit = alpha[i] * (galpha[i] - mean);
        gy.col(slot) += alpha[i] * gagg + glogit * params.layer2.attention[f];
        grad.layer2.attention[f] += glogit * pass.slot_y.col(slot);
      }
    }
  }

  // Layer 1: accumulate per touched node, then scatter into the sparse columns once.
  const std::size_t touched = pass.nodes.size();
  Mat<double> gself_acc = Mat<double>::Zero(hidden1, static_cast<Eigen::Index>(touched));
  Mat<double> gcontrib = Mat<double>::Zero(hidden1, static_cast<Eigen::Index>(touched * kFieldCount));
  Mat<double> glogit_acc = Mat<double>::Zero(kFieldCount, static_cast<Eigen::Index>(touched));
  for (std::size_t s = 0; s < pass.slot_node.size(); ++s) {
    const auto si = static_cast<Eigen::Index>(s);
    const Vec<double> g = gy.col(si);
    if (g.isZero(0.0)) continue;
    gself_acc.col(pass.local[pass.slot_node[s]]) +=
        lambda * g.cwiseProduct((pass.slot_us.col(si).array() > 0.0).cast<double>().matrix());
    const Vec<double> gun1 =
        (1.0 - lambda) * g.cwiseProduct((pass.slot_un.col(si).array() > 0.0).cast<double>().matrix());
    const auto& sample = pass.slot_sample[s];
    for (std::size_t f = 0; f < kFieldCount && !sample.empty(); ++f) {
      const auto& alpha = pass.slot_alpha[s][f];
      std::vector<double> galpha(sample.size());
      double mean = 0.0;
      for (std::size_t i = 0; i < sample.size(); ++i) {
        const Eigen::Index col =
            pass.local[sample[i]] * static_cast<Eigen::Index>(kFieldCount) + static_cast<Eigen::Index>(f);
        galpha[i] = gun1.dot(pass.contrib.col(col));
        mean += alpha[i] * galpha[i];
      }
      for (std::size_t i = 0; i < sample.size(); ++i) {
        const Eigen::Index x = pass.local[sample[i]];
        gcontrib.col(x * static_cast<Eigen::Index>(kFieldCount) + static_cast<Eigen::Index>(f)) +=
            alpha[i] * gun1;
        glogit_acc(static_cast<Eigen::Index>(f), x) += alpha[i] * (galpha[i] - mean);
      }
    }
  }
  for (std::size_t x = 0; x < touched; ++x) {
    const std::uint32_t g = pass.nodes[x];
    const auto xi = static_cast<Eigen::Index>(x);
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      const auto gc = gcontrib.col(xi * static_cast<Eigen::Index>(kFieldCount) + static_cast<Eigen::Index>(f));
      const double gl = glogit_acc(static_cast<Eigen::Index>(f), xi);
      for (std::size_t k = feat_offsets_[g * kFieldCount + f];
           k < feat_offsets_[g * kFieldCount + f + 1]; ++k) {
        const std::uint32_t c = feat_index_[k];
        grad.layer1.neighbor.col(c) += gc;
        grad.layer1.attention[f][c - dims.offset(f)] += gl;
        grad.layer1.self.col(c) += gself_acc.col(xi);
      }
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Finite differences, Adam
// ---------------------------------------------------------------------------

std::vector<std::span<double>> tensor_spans(ModelParams<double>& params) {
  std::vector<std::span<double>> out;
  params.for_each_tensor([&](auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
  return out;
}

std::vector<std::span<const double>> tensor_spans(const ModelParams<double>& params) {
  std::vector<std::span<const double>> out;
  params.for_each_tensor(
      [&](const auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
  return out;
}

ModelParams<double> fd_gradient(const std::function<double(const ModelParams<double>&)>& objective,
                                const ModelParams<double>& at, double step) {
  if (at.parameter_count() > 10000) {
    throw std::invalid_argument("fd_gradient is limited to 10^4 parameters");
  }
  ModelParams<double> probe = at;
  ModelParams<double> grad = zeros_like(at);
  auto probe_spans = tensor_spans(probe);
  auto grad_spans = tensor_spans(grad);
  for (std::size_t t = 0; t < probe_spans.size(); ++t) {
    for (std::size_t i = 0; i < probe_spans[t].size(); ++i) {
      double& x = probe_spans[t][i];
      const double saved = x;
      x = saved + step;
      const double up = objective(probe);
      x = saved - step;
      const double down = objective(probe);
      x = saved;
      grad_spans[t][i] = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

Adam::Adam(const ModelParams<double>& like, const TrainConfig& config)
    : m_(zeros_like(like)),
      v_(zeros_like(like)),
      lr_(config.lr),
      beta1_(config.beta1),
      beta2_(config.beta2),
      epsilon_(config.epsilon) {}

void Adam::step(ModelParams<double>& params, const ModelParams<double>& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto p = tensor_spans(params);
  auto g = tensor_spans(grad);
  auto m = tensor_spans(m_);
  auto v = tensor_spans(v_);
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      m[t][i] = beta1_ * m[t][i] + (1.0 - beta1_) * g[t][i];
      v[t][i] = beta2_ * v[t][i] + (1.0 - beta2_) * g[t][i] * g[t][i];
      p[t][i] -= lr_ * (m[t][i] / c1) / (std::sqrt(v[t][i] / c2) + epsilon_);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainResult train(const HeteroGraph& graph, const ProjectionTable& table, const ModelShape& shape,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  return train_from(graph, table, init_params<double>(shape, config.seed), config, on_epoch);
}

TrainResult train_from(const HeteroGraph& graph, const ProjectionTable& table,
                       ModelParams<double> params, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  if (config.batch_size < 1) throw InputError("batch_size must be >= 1");
  const std::size_t edges = graph.edge_count();
  if (edges == 0) throw InputError("cannot train on a graph without edges");

  BatchEngine engine(graph, table, config.sampling, config.threads);
  Adam adam(params, config);
  TrainResult result;
  result.params = params;

  const std::size_t batches = (edges + config.batch_size - 1) / config.batch_size;
  auto batch_size_at = [&](std::size_t b) {
    return std::min(config.batch_size, edges - b * config.batch_size);
  };

  // One fixed evaluation set from a separate stream, scored before the first
  // update and after every epoch.
  std::vector<TrainBatch> eval_set;
  {
    Rng eval_rng(mix_seed(config.seed, 0xE0));
    const std::size_t total = std::min(edges, kCurveSamples);
    for (std::size_t done = 0; done < total; done += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, total - done);
      eval_set.push_back({sample_batch(graph, config, eval_rng, n), eval_rng.next()});
    }
  }
  auto record = [&](std::size_t epoch) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& batch : eval_set) {
      sum += engine.loss(params, batch);
      n += batch.samples.size();
    }
    result.curve.push_back(sum / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch, result.curve.back());
  };
  record(0);

  Rng rng(config.seed);
  ModelParams<double> grad = zeros_like(params);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t b = 0; b < batches; ++b) {
      TrainBatch batch{sample_batch(graph, config, rng, batch_size_at(b)), rng.next()};
      try {
        engine.loss_and_grad(params, batch, grad);
      } catch (const NumericError& e) {
        result.params = params;
        result.aborted = true;
        result.abort_reason = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                              ": " + e.what();
        return result;
      }
      adam.step(params, grad);
      bool finite = true;
      params.for_each_tensor([&](const auto& t) { finite = finite && t.allFinite(); });
      if (!finite) {
        result.aborted = true;
        result.abort_reason = "non-finite parameters after epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(b);
        return result;  // result.params still holds the last finite state
      }
      result.params = params;
    }
    record(epoch);
  }
  result.params = std::move(params);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kCheckpointMagic = "GDRM";

nlohmann::json train_config_json(const Checkpoint& c) {
  const TrainConfig& t = c.train;
  nlohmann::json j;
  j["hidden"] = c.shape.hidden;
  j["feature_widths"] = c.shape.feature.width;
  j["sampling"] = {t.sampling.first, t.sampling.second};
  j["negatives_per_positive"] = t.negatives_per_positive;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["epsilon"] = t.epsilon;
  j["epochs"] = t.epochs;
  j["seed"] = t.seed;
  j["negative_sampling"] = t.negatives == NegativeSampling::Degree ? "degree" : "uniform";
  j["node_counts"] = c.node_counts;
  j["lambda_s"] = c.params.lambda_s;
  return j;
}
}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.magic(kCheckpointMagic);
  w.put<std::uint64_t>(ckpt.config_hash);
  w.put_string(train_config_json(ckpt).dump());
  const ProjectionTable& table = ckpt.table;
  for (auto width : table.dims().width) w.put<std::uint32_t>(width);
  for (auto count : table.counts()) w.put<std::uint32_t>(count);
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(table.basis(f).size()));
    for (auto id : table.basis(f)) w.put<std::uint32_t>(id);
  }
  std::uint32_t tensors = 0;
  ckpt.params.for_each_tensor([&](const auto&) { ++tensors; });
  w.put<std::uint32_t>(tensors);
  ckpt.params.for_each_tensor([&](const auto& t) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) w.put<double>(t.data()[i]);
  });
  return w.take();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes, "checkpoint");
  r.expect_magic(kCheckpointMagic);
  Checkpoint c;
  c.config_hash = r.get<std::uint64_t>();
  nlohmann::json j = nlohmann::json::parse(r.get_string(), nullptr, false);
  if (j.is_discarded()) throw ArtifactError("checkpoint: corrupt config block");
  try {
    c.shape.hidden = j.at("hidden").get<std::uint32_t>();
    c.shape.feature.width = j.at("feature_widths").get<std::array<std::uint32_t, kFieldCount>>();
    c.train.sampling.first = j.at("sampling").at(0).get<std::size_t>();
    c.train.sampling.second = j.at("sampling").at(1).get<std::size_t>();
    c.train.negatives_per_positive = j.at("negatives_per_positive").get<std::size_t>();
    c.train.batch_size = j.at("batch_size").get<std::size_t>();
    c.train.lr = j.at("lr").get<double>();
    c.train.beta1 = j.at("beta1").get<double>();
    c.train.beta2 = j.at("beta2").get<double>();
    c.train.epsilon = j.at("epsilon").get<double>();
    c.train.epochs = j.at("epochs").get<std::size_t>();
    c.train.seed = j.at("seed").get<std::uint64_t>();
    c.train.negatives = j.at("negative_sampling").get<std::string>() == "degree"
                            ? NegativeSampling::Degree
                            : NegativeSampling::Uniform;
    c.node_counts = j.at("node_counts").get<NodeCounts>();
    c.params.lambda_s = j.at("lambda_s").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(std::string("checkpoint: bad config block: ") + e.what());
  }

  FeatureDims dims;
  for (auto& width : dims.width) width = r.get<std::uint32_t>();
  NodeCounts counts{};
  for (auto& count : counts) count = r.get<std::uint32_t>();
  std::array<std::vector<std::uint32_t>, kFieldCount> basis;
  for (auto& b : basis) {
    const auto n = r.get<std::uint32_t>();
    r.need(static_cast<std::size_t>(n) * 4);
    b.resize(n);
    for (auto& id : b) id = r.get<std::uint32_t>();
  }
  try {
    c.table = ProjectionTable(dims, counts, std::move(basis));
  } catch (const std::invalid_argument& e) {
    throw ArtifactError(std::string("checkpoint: ") + e.what());
  }

  c.params = init_params<double>(c.shape, 0);
  const double lambda = c.params.lambda_s;
  std::uint32_t expected = 0;
  c.params.for_each_tensor([&](const auto&) { ++expected; });
  if (r.get<std::uint32_t>() != expected) throw ArtifactError("checkpoint: unexpected tensor count");
  c.params.for_each_tensor([&](auto& t) {
    const auto rows = r.get<std::uint32_t>(), cols = r.get<std::uint32_t>();
    if (rows != t.rows() || cols != t.cols()) throw ArtifactError("checkpoint: tensor shape mismatch");
    r.need(static_cast<std::size_t>(t.size()) * 8);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = r.get<double>();
  });
  c.params.lambda_s = lambda;
  if (r.remaining() != 0) throw ArtifactError("checkpoint: trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path));
}

std::string loss_curve_csv(std::span<const double> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) out << e << ',' << curve[e] << '\n';
  return out.str();
}

}  // namespace divmatch
