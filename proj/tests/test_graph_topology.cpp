#include <cmath>

#include "doctest.h"
#include "hemo/graph_topology.hpp"
#include "test_util.hpp"

using namespace hemo;

TEST_CASE("default topology has the OpenPose group sizes") {
  const auto& topo = default_topology();
  CHECK(topo.group_size(KeypointGroup::skeleton) == 25);
  CHECK(topo.group_size(KeypointGroup::face) == 70);
  CHECK(topo.group_size(KeypointGroup::hands) == 42);
  CHECK(topo.group_edges(KeypointGroup::skeleton).size() == 24);  // BODY_25 is a tree
  for (const auto& [i, j] : topo.group_edges(KeypointGroup::hands)) CHECK((i < 21) == (j < 21));
}

TEST_CASE("shipped topology file matches the compiled-in copy") {
  const auto from_file = load_topology(std::filesystem::path(HEMO_SOURCE_DIR) / "data/openpose_topology.txt");
  for (auto g : kAllGroups) CHECK(from_file.group_edges(g) == default_topology().group_edges(g));
}

TEST_CASE("topology validation errors") {
  CHECK_THROWS_WITH_AS(parse_topology("skeleton 3 200\n"), doctest::Contains("(3, 200)"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_topology("hands 2 25\n"), doctest::Contains("left/right"), ValidationError);
  CHECK_THROWS_AS(parse_topology("face 1 2\nface 2 1\n"), ValidationError);
  CHECK_THROWS_AS(parse_topology("face 4 4\n"), ValidationError);
  CHECK_THROWS_AS(parse_topology("torso 1 2\n"), ParseError);
  CHECK_NOTHROW(parse_topology("# comment only\n\n"));
}

TEST_CASE("normalized adjacency hand-computed cases") {
  auto empty = make_group_graph(4, {});
  CHECK(empty.normalized == Matrix::Identity(4, 4));

  auto pair = make_group_graph(2, {{0, 1}});
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(std::abs(pair.normalized(i, j) - 0.5) <= 1e-12);
  }

  auto path = make_group_graph(3, {{0, 1}, {1, 2}});
  CHECK(std::abs(path.normalized(1, 1) - 1.0 / 3.0) <= 1e-12);
  CHECK(std::abs(path.normalized(0, 1) - 1.0 / std::sqrt(6.0)) <= 1e-12);
  CHECK(std::abs(path.normalized(0, 0) - 0.5) <= 1e-12);
  CHECK(path.normalized(0, 2) == 0.0);
}

TEST_CASE("normalized adjacency is symmetric, bounded, and fixes ones on regular graphs") {
  for (auto g : kAllGroups) {
    const auto adj = build_normalized_adjacency(default_topology(), g).matrix;
    CHECK((adj - adj.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(adj.minCoeff() >= 0.0);
    CHECK(adj.maxCoeff() <= 1.0);
    for (Eigen::Index r = 0; r < adj.rows(); ++r) CHECK(adj.row(r).sum() > 0.0);
  }
  // 6-cycle is 2-regular.
  auto cycle = make_group_graph(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}});
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(6);
  CHECK((cycle.normalized * ones - ones).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("rebuilding from the same topology is bit-identical") {
  const auto a = build_normalized_adjacency(default_topology(), KeypointGroup::face).matrix;
  const auto b = build_normalized_adjacency(parse_topology(default_topology_text()), KeypointGroup::face).matrix;
  CHECK(a == b);
}
