#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace stf::graph {

// Undirected, connected joint graph with a BFS-derived parent map rooted at
// `root` (the root is its own parent).
struct SkeletonGraph {
  int num_joints = 0;
  int root = 0;
  std::vector<std::pair<int, int>> edges;  // normalized (lo, hi), sorted
  std::vector<int> parent;
  std::vector<std::string> joint_names;  // optional; empty or num_joints entries

  bool is_root(int joint) const { return parent[static_cast<std::size_t>(joint)] == joint; }
};

SkeletonGraph build_graph(std::vector<std::pair<int, int>> edges, int num_joints, int root = 0);

// All-pairs shortest hop counts, N*N row-major. BFS per joint.
std::vector<int> graph_distance(const SkeletonGraph& g);

enum class ScaleMode {
  disentangled,  // scale k links pairs at graph distance exactly k
  cumulative,    // scale k links pairs at graph distance 1..k
};

struct MultiScaleAdjacency {
  int num_scales = 0;
  int num_joints = 0;
  std::vector<std::vector<double>> scales;  // each N*N row-major

  const std::vector<double>& at(int k) const { return scales[static_cast<std::size_t>(k)]; }
};

// Raw binary scale matrices, each with self-loops on the diagonal.
MultiScaleAdjacency k_scale_adjacency(const SkeletonGraph& g, int num_scales,
                                      ScaleMode mode = ScaleMode::disentangled);

// Symmetric degree normalization D^{-1/2} A D^{-1/2} of one raw binary matrix
// with unit diagonal.
std::vector<double> normalize_adjacency(const std::vector<double>& raw, int num_joints);

// Applies normalize_adjacency to every scale.
MultiScaleAdjacency normalized(const MultiScaleAdjacency& raw);

// Plain-text graph format: header "N=<int> root=<int>", then one
// "edge <i> <j>" line per edge.
SkeletonGraph parse_graph_text(std::istream& in, const std::string& origin);
SkeletonGraph parse_graph_file(const std::string& path);
void write_graph_file(const std::string& path, const SkeletonGraph& g);

// Default 10-joint synthetic body: a 2-joint spine with four 2-joint limbs.
// Joint 0 is the spine base (root), joint 1 the spine top.
SkeletonGraph body10();

}  // namespace stf::graph
