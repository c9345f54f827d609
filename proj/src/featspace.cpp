#include "divmatch/featspace.hpp"

#include <algorithm>
#include <numeric>

namespace divmatch {

ProjectionTable::ProjectionTable(FeatureDims dims, NodeCounts counts,
                                 std::array<std::vector<std::uint32_t>, kFieldCount> basis)
    : dims_(dims), counts_(counts), basis_(std::move(basis)) {
  for (std::size_t f = 0; f < kFieldCount; ++f) {
    if (basis_[f].size() > dims_.width[f]) {
      throw std::invalid_argument("projection basis wider than its field");
    }
    slot_of_[f].assign(counts_[f], -1);
    for (std::size_t s = 0; s < basis_[f].size(); ++s) {
      const auto id = basis_[f][s];
      if (id >= counts_[f]) throw std::invalid_argument("projection basis id out of range");
      if (slot_of_[f][id] != -1) throw std::invalid_argument("projection basis has duplicates");
      slot_of_[f][id] = static_cast<std::int32_t>(s);
    }
  }
}

std::optional<std::uint32_t> ProjectionTable::slot(NodeRef node) const {
  const auto& slots = slot_of_[index_of(node.type)];
  if (node.local_id >= slots.size() || slots[node.local_id] < 0) return std::nullopt;
  return static_cast<std::uint32_t>(slots[node.local_id]);
}

ProjectionTable fit_projection(const HeteroGraph& graph, const FeatureDims& dims) {
  if (graph.total_nodes() == 0) throw InputError("cannot fit a projection on an empty graph");
  std::array<std::vector<std::uint32_t>, kFieldCount> basis;
  for (NodeType t : kAllNodeTypes) {
    const std::size_t f = index_of(t);
    std::vector<std::uint32_t> ids(graph.node_count(t));
    std::iota(ids.begin(), ids.end(), 0u);
    const std::size_t keep = std::min<std::size_t>(dims.width[f], ids.size());
    // Highest total degree first, ascending local id on ties.
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep), ids.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                        const auto da = graph.degree({t, a}), db = graph.degree({t, b});
                        return da != db ? da > db : a < b;
                      });
    ids.resize(keep);
    basis[f] = std::move(ids);
  }
  return ProjectionTable(dims, graph.counts(), std::move(basis));
}

std::vector<std::uint32_t> active_features(const HeteroGraph& graph, const ProjectionTable& table,
                                           NodeRef node) {
  if (table.counts() != graph.counts()) {
    throw ArtifactError("projection table was fitted on a different graph");
  }
  std::vector<std::uint32_t> out;
  for (const NodeRef& m : graph.neighbors(node)) {
    if (m == node) continue;
    if (auto s = table.slot(m)) out.push_back(table.dims().offset(index_of(m.type)) + *s);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Eigen::VectorXd feature_of(const HeteroGraph& graph, const ProjectionTable& table, NodeRef node) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(table.dims().total());
  for (auto i : active_features(graph, table, node)) f[i] = 1.0;
  return f;
}

}  // namespace divmatch
