#ifndef KOOPGAS_NETWORK_HPP
#define KOOPGAS_NETWORK_HPP

#include <string>
#include <vector>

#include "koopgas/pipeline.hpp"

namespace koopgas {

enum class NodeRole { Source, Junction, Load };

struct GasNode {
  std::string id;
  NodeRole role = NodeRole::Junction;
  double p_min = 0.0;  // Pa
  double p_max = 0.0;  // Pa
};

struct GasPipelineEdge {
  std::string from;
  std::string to;
  PipelineParams params;  // params.id names the pipeline
};

/// Gas network topology. Pipelines are directed from `from` to `to`;
/// the positive-flow convention follows that direction.
struct GasNetworkSpec {
  std::string name;
  std::vector<GasNode> nodes;
  std::vector<GasPipelineEdge> pipelines;

  int node_index(const std::string& id) const;      // -1 when absent
  int pipeline_index(const std::string& id) const;  // -1 when absent
  std::vector<int> pipelines_from(int node) const;
  std::vector<int> pipelines_to(int node) const;
  std::vector<int> source_indices() const;

  /// Connectivity, unique node ids, role rules, per-pipeline parameter checks.
  void validate() const;
};

}  // namespace koopgas

#endif  // KOOPGAS_NETWORK_HPP
