#include "koopgas/network.hpp"

#include <algorithm>
#include <queue>
#include <set>

#include "koopgas/errors.hpp"

namespace koopgas {

int GasNetworkSpec::node_index(const std::string& id) const {
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return static_cast<int>(i);
  return -1;
}

int GasNetworkSpec::pipeline_index(const std::string& id) const {
  for (size_t i = 0; i < pipelines.size(); ++i)
    if (pipelines[i].params.id == id) return static_cast<int>(i);
  return -1;
}

std::vector<int> GasNetworkSpec::pipelines_from(int node) const {
  std::vector<int> out;
  for (size_t e = 0; e < pipelines.size(); ++e)
    if (node_index(pipelines[e].from) == node) out.push_back(static_cast<int>(e));
  return out;
}

std::vector<int> GasNetworkSpec::pipelines_to(int node) const {
  std::vector<int> out;
  for (size_t e = 0; e < pipelines.size(); ++e)
    if (node_index(pipelines[e].to) == node) out.push_back(static_cast<int>(e));
  return out;
}

std::vector<int> GasNetworkSpec::source_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].role == NodeRole::Source) out.push_back(static_cast<int>(i));
  return out;
}

void GasNetworkSpec::validate() const {
  if (nodes.empty()) throw TopologyError("network '" + name + "': no nodes");
  if (pipelines.empty()) throw TopologyError("network '" + name + "': no pipelines");

  std::set<std::string> ids;
  for (const auto& n : nodes) {
    if (!ids.insert(n.id).second)
      throw TopologyError("network '" + name + "': duplicate node id '" + n.id + "'");
    if (!(n.p_min > 0.0) || !(n.p_min < n.p_max))
      throw SpecError("node '" + n.id + "': pressure bounds must satisfy 0 < p_min < p_max");
  }

  std::set<std::string> pipe_ids;
  for (const auto& e : pipelines) {
    e.params.validate();
    if (!pipe_ids.insert(e.params.id).second)
      throw TopologyError("duplicate pipeline id '" + e.params.id + "'");
    if (node_index(e.from) < 0)
      throw TopologyError("pipeline '" + e.params.id + "': unknown node '" + e.from + "'");
    if (node_index(e.to) < 0)
      throw TopologyError("pipeline '" + e.params.id + "': unknown node '" + e.to + "'");
    if (e.from == e.to)
      throw TopologyError("pipeline '" + e.params.id + "': self-loop");
  }

  if (source_indices().empty())
    throw TopologyError("network '" + name + "': needs at least one source node");
  for (int s : source_indices())
    if (pipelines_from(s).empty())
      throw TopologyError("source '" + nodes[s].id + "' has no outgoing pipeline");

  // undirected connectivity
  std::vector<char> seen(nodes.size(), 0);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = 1;
  while (!frontier.empty()) {
    int n = frontier.front();
    frontier.pop();
    for (const auto& e : pipelines) {
      int a = node_index(e.from), b = node_index(e.to);
      if (a == n && !seen[b]) { seen[b] = 1; frontier.push(b); }
      if (b == n && !seen[a]) { seen[a] = 1; frontier.push(a); }
    }
  }
  if (std::count(seen.begin(), seen.end(), 1) != static_cast<long>(nodes.size()))
    throw TopologyError("network '" + name + "': graph is not connected");
}

}  // namespace koopgas
