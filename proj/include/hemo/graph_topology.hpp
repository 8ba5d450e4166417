#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hemo/keypoint_features.hpp"
#include "hemo/tensor.hpp"

namespace hemo {

using Edge = std::pair<int, int>;

/// Keypoint connectivity per group, in group-local indices.
struct Topology {
  std::array<std::vector<Edge>, 3> edges;
  std::array<int, 3> sizes{kBodyKeypoints, kFaceKeypoints, kHandKeypoints};

  const std::vector<Edge>& group_edges(KeypointGroup g) const { return edges[static_cast<int>(g)]; }
  int group_size(KeypointGroup g) const { return sizes[static_cast<int>(g)]; }
};

Topology parse_topology(std::string_view text, std::string_view origin = "<memory>");
Topology load_topology(const std::filesystem::path& path);

/// OpenPose BODY_25 / 70-point face / 2x21-point hands, compiled into the binary
/// from data/openpose_topology.txt.
const Topology& default_topology();
std::string_view default_topology_text();

/// Â = D^{-1/2}(A+I)D^{-1/2}.
struct NormalizedAdjacency {
  Matrix matrix;
  bool built_with_self_loops = true;
};

/// Binary adjacency without self loops.
Matrix adjacency_matrix(const Topology& topology, KeypointGroup group);

NormalizedAdjacency build_normalized_adjacency(const Topology& topology, KeypointGroup group);
NormalizedAdjacency normalize_adjacency(const Matrix& adjacency);

/// Everything the graph encoders need for one group.
struct GroupGraph {
  int node_count = 0;
  Matrix adjacency;   // A
  Matrix normalized;  // Â
  Matrix neighbors;   // A + I, attention support
};

GroupGraph make_group_graph(const Topology& topology, KeypointGroup group);
GroupGraph make_group_graph(int node_count, const std::vector<Edge>& edges);

}  // namespace hemo
