#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "divmatch/common.hpp"
#include "divmatch/hetgraph.hpp"

namespace divmatch {

/// Feature fields share the NodeType order: video, tag, media, user group, word.
inline constexpr std::size_t kFieldCount = kNodeTypeCount;

/// Per-field block widths of the multi-hot feature vector.
struct FeatureDims {
  std::array<std::uint32_t, kFieldCount> width = {300, 150, 150, 150, 150};

  std::uint32_t total() const {
    std::uint32_t n = 0;
    for (auto w : width) n += w;
    return n;
  }
  std::uint32_t offset(std::size_t field) const {
    std::uint32_t n = 0;
    for (std::size_t f = 0; f < field; ++f) n += width[f];
    return n;
  }
  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

/// Frozen top-degree basis per field; slot s of field f is the s-th
/// selected node of type f.
class ProjectionTable {
 public:
  ProjectionTable() = default;
  ProjectionTable(FeatureDims dims, NodeCounts counts,
                  std::array<std::vector<std::uint32_t>, kFieldCount> basis);

  const FeatureDims& dims() const { return dims_; }
  const NodeCounts& counts() const { return counts_; }
  const std::vector<std::uint32_t>& basis(std::size_t field) const { return basis_[field]; }

  /// Slot of `node` inside its own field block, if selected.
  std::optional<std::uint32_t> slot(NodeRef node) const;

  friend bool operator==(const ProjectionTable& a, const ProjectionTable& b) {
    return a.dims_ == b.dims_ && a.counts_ == b.counts_ && a.basis_ == b.basis_;
  }

 private:
  FeatureDims dims_;
  NodeCounts counts_{};
  std::array<std::vector<std::uint32_t>, kFieldCount> basis_;
  std::array<std::vector<std::int32_t>, kFieldCount> slot_of_;
};

ProjectionTable fit_projection(const HeteroGraph& graph, const FeatureDims& dims = {});

/// Sorted global indices of the 1-entries of a node's feature vector.
std::vector<std::uint32_t> active_features(const HeteroGraph& graph, const ProjectionTable& table,
                                           NodeRef node);

Eigen::VectorXd feature_of(const HeteroGraph& graph, const ProjectionTable& table, NodeRef node);

}  // namespace divmatch
