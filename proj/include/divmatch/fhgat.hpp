#pragma once

// Two-layer field-level heterogeneous graph attention network.
//
// Every layer owns one attention vector per field, a neighbor-combine
// matrix over the concatenated field aggregates and a self-loop matrix:
//
//   alpha_i = softmax_i(w_f . x_i)          per field f over its inputs x_i
//   y_N     = relu(W_n . concat_f(sum_i alpha_i x_i))
//   y_S     = relu(W_s . self)
//   y       = lambda_s * y_S + (1 - lambda_s) * y_N
//
// Layer 1 attends over the field blocks of the sampled neighbors' multi-hot
// features; layer 2 partitions the sampled neighbors by node type and
// attends over their layer-1 outputs.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "divmatch/common.hpp"
#include "divmatch/featspace.hpp"
#include "divmatch/hetgraph.hpp"

namespace divmatch {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct LayerParams {
  std::array<Vec<Scalar>, kFieldCount> attention;
  Mat<Scalar> neighbor;  // out x sum of field widths
  Mat<Scalar> self;      // out x self input width

  Eigen::Index field_width(std::size_t f) const { return attention[f].size(); }
  Eigen::Index out_dim() const { return self.rows(); }

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& a : attention) f(a);
    f(neighbor);
    f(self);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    for (const auto& a : attention) f(a);
    f(neighbor);
    f(self);
  }
};

template <typename Scalar>
struct ModelParams {
  LayerParams<Scalar> layer1;
  LayerParams<Scalar> layer2;
  Scalar lambda_s = Scalar(0.5);  // fixed, never trained

  template <typename F>
  void for_each_tensor(F&& f) {
    layer1.for_each_tensor(f);
    layer2.for_each_tensor(f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    layer1.for_each_tensor(f);
    layer2.for_each_tensor(f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }
};

struct ModelShape {
  FeatureDims feature;
  std::uint32_t hidden = 120;
};

struct SamplingConfig {
  std::size_t first = 30;   // one-hop sample of the center
  std::size_t second = 20;  // sample of each one-hop neighbor
};

/// Same shapes as `like`, all zeros.
template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& like) {
  ModelParams<Scalar> z = like;
  z.for_each_tensor([](auto& t) { t.setZero(); });
  return z;
}

/// Glorot-uniform matrices, uniform(-0.1, 0.1) attention vectors.
template <typename Scalar = double>
ModelParams<Scalar> init_params(const ModelShape& shape, std::uint64_t seed) {
  Rng rng(seed);
  auto uniform_vec = [&](Eigen::Index n, double a) {
    Vec<Scalar> v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = Scalar(rng.uniform(-a, a));
    return v;
  };
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Mat<Scalar> m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = Scalar(rng.uniform(-a, a));
    return m;
  };
  const Eigen::Index h = shape.hidden;
  ModelParams<Scalar> p;
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    p.layer1.attention[f] = uniform_vec(shape.feature.width[f], 0.1);
  }
  p.layer1.neighbor = glorot(h, shape.feature.total());
  p.layer1.self = glorot(h, shape.feature.total());
  for (std::size_t f = 0; f < kFieldCount; ++f) p.layer2.attention[f] = uniform_vec(h, 0.1);
  p.layer2.neighbor = glorot(h, h * static_cast<Eigen::Index>(kFieldCount));
  p.layer2.self = glorot(h, h);
  return p;
}

template <typename Scalar>
struct FieldAttention {
  Vec<Scalar> aggregate;
  Vec<Scalar> weights;
};

/// Softmax attention of one field over the columns of `inputs`. With no
/// columns the aggregate is zero and the weight vector is empty.
template <typename Scalar, typename Derived>
FieldAttention<Scalar> field_attention(const Vec<Scalar>& w, const Eigen::MatrixBase<Derived>& inputs) {
  if (inputs.rows() != w.size() && inputs.cols() > 0) {
    throw std::invalid_argument("field_attention: input width " + std::to_string(inputs.rows()) +
                                " != attention width " + std::to_string(w.size()));
  }
  FieldAttention<Scalar> out;
  if (inputs.cols() == 0) {
    out.aggregate = Vec<Scalar>::Zero(w.size());
    return out;
  }
  Vec<Scalar> logits = inputs.transpose() * w;
  const Scalar top = logits.maxCoeff();
  out.weights = (logits.array() - top).exp().matrix();
  out.weights /= out.weights.sum();
  out.aggregate = inputs * out.weights;
  return out;
}

template <typename Scalar>
struct LayerOutput {
  Vec<Scalar> y;
  Vec<Scalar> neighbor_part;  // relu(W_n . concat)
  Vec<Scalar> self_part;      // relu(W_s . self)
};

template <typename Scalar>
LayerOutput<Scalar> layer_forward(const LayerParams<Scalar>& layer, const Vec<Scalar>& self_input,
                                  const std::array<Mat<Scalar>, kFieldCount>& neighbor_inputs,
                                  Scalar lambda_s) {
  Eigen::Index total = 0;
  for (std::size_t f = 0; f < kFieldCount; ++f) total += layer.field_width(f);
  if (layer.neighbor.cols() != total) {
    throw std::invalid_argument("layer_forward: neighbor matrix has " +
                                std::to_string(layer.neighbor.cols()) + " columns, fields need " +
                                std::to_string(total));
  }
  if (layer.self.cols() != self_input.size()) {
    throw std::invalid_argument("layer_forward: self input width " +
                                std::to_string(self_input.size()) + " != " +
                                std::to_string(layer.self.cols()));
  }
  Vec<Scalar> concat(total);
  Eigen::Index offset = 0;
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    const auto& in = neighbor_inputs[f];
    if (in.cols() > 0 && in.rows() != layer.field_width(f)) {
      throw std::invalid_argument("layer_forward: field " +
                                  std::string(to_string(kAllNodeTypes[f])) + " input width " +
                                  std::to_string(in.rows()) + " != " +
                                  std::to_string(layer.field_width(f)));
    }
    concat.segment(offset, layer.field_width(f)) = field_attention(layer.attention[f], in).aggregate;
    offset += layer.field_width(f);
  }
  LayerOutput<Scalar> out;
  out.neighbor_part = (layer.neighbor * concat).cwiseMax(Scalar(0));
  out.self_part = (layer.self * self_input).cwiseMax(Scalar(0));
  out.y = lambda_s * out.self_part + (Scalar(1) - lambda_s) * out.neighbor_part;
  return out;
}

/// Seed of the neighbor sample drawn for `node` at `hop` (0: the sample of
/// a center, 1: the sample of a one-hop neighbor).
inline std::uint64_t neighbor_sample_seed(std::uint64_t seed, std::uint32_t global_id, int hop) {
  return mix_seed(seed, (static_cast<std::uint64_t>(global_id) << 1) | static_cast<unsigned>(hop));
}

inline std::vector<NodeRef> hop_sample(const HeteroGraph& graph, NodeRef node,
                                       const SamplingConfig& sampling, std::uint64_t seed, int hop) {
  const std::size_t budget = hop == 0 ? sampling.first : sampling.second;
  return sample_neighbors(graph, node, budget,
                          neighbor_sample_seed(seed, graph.global_id(node), hop));
}

namespace detail {

template <typename Scalar>
Vec<Scalar> layer1_output(const HeteroGraph& graph, const ProjectionTable& table,
                          const ModelParams<Scalar>& params, NodeRef node,
                          const std::vector<NodeRef>& sample) {
  const FeatureDims& dims = table.dims();
  std::array<Mat<Scalar>, kFieldCount> inputs;
  for (std::size_t f = 0; f < kFieldCount; ++f) inputs[f].resize(dims.width[f], sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const Vec<Scalar> feat = feature_of(graph, table, sample[i]).template cast<Scalar>();
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      inputs[f].col(static_cast<Eigen::Index>(i)) = feat.segment(dims.offset(f), dims.width[f]);
    }
  }
  const Vec<Scalar> self = feature_of(graph, table, node).template cast<Scalar>();
  return layer_forward(params.layer1, self, inputs, params.lambda_s).y;
}

}  // namespace detail

/// Aggregated embedding of `node`. Pure in (graph, table, params, seed).
template <typename Scalar>
Vec<Scalar> forward(const HeteroGraph& graph, const ProjectionTable& table,
                    const ModelParams<Scalar>& params, NodeRef node,
                    const SamplingConfig& sampling, std::uint64_t seed) {
  const std::vector<NodeRef> sample = hop_sample(graph, node, sampling, seed, 0);
  const Vec<Scalar> center = detail::layer1_output(graph, table, params, node, sample);

  const Eigen::Index hidden = params.layer2.out_dim();
  std::array<std::vector<Vec<Scalar>>, kFieldCount> groups;
  for (const NodeRef& m : sample) {
    groups[index_of(m.type)].push_back(detail::layer1_output(
        graph, table, params, m, hop_sample(graph, m, sampling, seed, 1)));
  }
  std::array<Mat<Scalar>, kFieldCount> inputs;
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    inputs[f].resize(hidden, static_cast<Eigen::Index>(groups[f].size()));
    for (std::size_t i = 0; i < groups[f].size(); ++i) {
      inputs[f].col(static_cast<Eigen::Index>(i)) = groups[f][i];
    }
  }
  return layer_forward(params.layer2, center, inputs, params.lambda_s).y;
}

}  // namespace divmatch
