#include "hemo/graph_topology.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "hemo/common.hpp"
#include "topology_data.hpp"

namespace hemo {
namespace {

int group_from_name(const std::string& name) {
  if (name == "skeleton") return 0;
  if (name == "face") return 1;
  if (name == "hands") return 2;
  return -1;
}

}  // namespace

Topology parse_topology(std::string_view text, std::string_view origin) {
  Topology topo;
  std::array<std::set<Edge>, 3> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string group;
    int i = 0;
    int j = 0;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (!(ls >> group >> i >> j)) throw ParseError(where + ": expected '<group> <i> <j>'");
    const int g = group_from_name(group);
    if (g < 0) throw ParseError(where + ": unknown group '" + group + "'");
    const std::string edge = group + " (" + std::to_string(i) + ", " + std::to_string(j) + ")";
    const int n = topo.sizes[g];
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw ValidationError(where + ": edge " + edge + " out of range for group of size " + std::to_string(n));
    }
    if (i == j) throw ValidationError(where + ": self edge " + edge);
    if (g == 2 && ((i < kHandKeypoints / 2) != (j < kHandKeypoints / 2))) {
      throw ValidationError(where + ": edge " + edge + " crosses the left/right hand boundary");
    }
    const Edge key{std::min(i, j), std::max(i, j)};
    if (!seen[g].insert(key).second) throw ValidationError(where + ": duplicate edge " + edge);
    topo.edges[g].push_back(key);
  }
  return topo;
}

Topology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open topology file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_topology(buf.str(), path.string());
}

std::string_view default_topology_text() { return detail::kDefaultTopologyText; }

const Topology& default_topology() {
  static const Topology topo = parse_topology(default_topology_text(), "openpose_topology.txt");
  return topo;
}

Matrix adjacency_matrix(const Topology& topology, KeypointGroup group) {
  const int n = topology.group_size(group);
  Matrix a = Matrix::Zero(n, n);
  for (const auto& [i, j] : topology.group_edges(group)) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

NormalizedAdjacency normalize_adjacency(const Matrix& adjacency) {
  const auto n = adjacency.rows();
  Matrix with_loops = adjacency + Matrix::Identity(n, n);
  Eigen::VectorXd inv_sqrt = with_loops.rowwise().sum().cwiseSqrt().cwiseInverse();
  NormalizedAdjacency out;
  out.matrix = inv_sqrt.asDiagonal() * with_loops * inv_sqrt.asDiagonal();
  out.built_with_self_loops = true;
  return out;
}

NormalizedAdjacency build_normalized_adjacency(const Topology& topology, KeypointGroup group) {
  return normalize_adjacency(adjacency_matrix(topology, group));
}

GroupGraph make_group_graph(const Topology& topology, KeypointGroup group) {
  GroupGraph g;
  g.node_count = topology.group_size(group);
  g.adjacency = adjacency_matrix(topology, group);
  g.normalized = normalize_adjacency(g.adjacency).matrix;
  g.neighbors = g.adjacency + Matrix::Identity(g.node_count, g.node_count);
  return g;
}

GroupGraph make_group_graph(int node_count, const std::vector<Edge>& edges) {
  GroupGraph g;
  g.node_count = node_count;
  g.adjacency = Matrix::Zero(node_count, node_count);
  for (const auto& [i, j] : edges) {
    if (i < 0 || j < 0 || i >= node_count || j >= node_count || i == j) {
      throw ValidationError("invalid edge (" + std::to_string(i) + ", " + std::to_string(j) + ")");
    }
    g.adjacency(i, j) = 1.0;
    g.adjacency(j, i) = 1.0;
  }
  g.normalized = normalize_adjacency(g.adjacency).matrix;
  g.neighbors = g.adjacency + Matrix::Identity(g.node_count, g.node_count);
  return g;
}

}  // namespace hemo
