#include "stf/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include "stf/errors.hpp"

namespace stf::graph {

SkeletonGraph build_graph(std::vector<std::pair<int, int>> edges, int num_joints, int root) {
  if (num_joints <= 0) throw ValueError("build_graph: joint count must be positive");
  if (edges.empty()) throw ValueError("build_graph: empty edge list");
  if (root < 0 || root >= num_joints)
    throw ValueError("build_graph: root joint " + std::to_string(root) + " out of range");

  std::set<std::pair<int, int>> seen;
  for (auto& e : edges) {
    if (e.first < 0 || e.first >= num_joints || e.second < 0 || e.second >= num_joints) {
      throw ValueError("build_graph: edge (" + std::to_string(e.first) + "," +
                       std::to_string(e.second) + ") out of range for " +
                       std::to_string(num_joints) + " joints");
    }
    if (e.first == e.second)
      throw ValueError("build_graph: self-edge at joint " + std::to_string(e.first));
    if (e.first > e.second) std::swap(e.first, e.second);
    if (!seen.insert(e).second)
      throw ValueError("build_graph: duplicate edge (" + std::to_string(e.first) + "," +
                       std::to_string(e.second) + ")");
  }
  std::sort(edges.begin(), edges.end());

  std::vector<std::vector<int>> adj(static_cast<std::size_t>(num_joints));
  for (const auto& e : edges) {
    adj[static_cast<std::size_t>(e.first)].push_back(e.second);
    adj[static_cast<std::size_t>(e.second)].push_back(e.first);
  }
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());

  SkeletonGraph g;
  g.num_joints = num_joints;
  g.root = root;
  g.edges = std::move(edges);
  g.parent.assign(static_cast<std::size_t>(num_joints), -1);
  g.parent[static_cast<std::size_t>(root)] = root;

  std::deque<int> queue{root};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (g.parent[static_cast<std::size_t>(v)] != -1) continue;
      g.parent[static_cast<std::size_t>(v)] = u;
      queue.push_back(v);
    }
  }
  for (int j = 0; j < num_joints; ++j) {
    if (g.parent[static_cast<std::size_t>(j)] == -1) {
      throw ValueError("build_graph: joint " + std::to_string(j) + " unreachable from root " +
                       std::to_string(root));
    }
  }
  return g;
}

std::vector<int> graph_distance(const SkeletonGraph& g) {
  const int n = g.num_joints;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const auto& e : g.edges) {
    adj[static_cast<std::size_t>(e.first)].push_back(e.second);
    adj[static_cast<std::size_t>(e.second)].push_back(e.first);
  }
  std::vector<int> dist(static_cast<std::size_t>(n) * n, -1);
  for (int s = 0; s < n; ++s) {
    int* row = dist.data() + static_cast<std::size_t>(s) * n;
    row[s] = 0;
    std::deque<int> queue{s};
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int v : adj[static_cast<std::size_t>(u)]) {
        if (row[v] != -1) continue;
        row[v] = row[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

MultiScaleAdjacency k_scale_adjacency(const SkeletonGraph& g, int num_scales, ScaleMode mode) {
  const int n = g.num_joints;
  if (num_scales < 1 || num_scales >= n) {
    throw ValueError("k_scale_adjacency: scale count " + std::to_string(num_scales) +
                     " out of range [1," + std::to_string(n) + ")");
  }
  const std::vector<int> dist = graph_distance(g);
  MultiScaleAdjacency out;
  out.num_scales = num_scales;
  out.num_joints = n;
  out.scales.resize(static_cast<std::size_t>(num_scales));
  for (int k = 1; k <= num_scales; ++k) {
    auto& m = out.scales[static_cast<std::size_t>(k - 1)];
    m.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const int d = dist[static_cast<std::size_t>(i) * n + j];
        const bool hit = (mode == ScaleMode::disentangled) ? (d == k) : (d >= 1 && d <= k);
        if (hit || i == j) m[static_cast<std::size_t>(i) * n + j] = 1.0;
      }
    }
  }
  return out;
}

std::vector<double> normalize_adjacency(const std::vector<double>& raw, int num_joints) {
  const int n = num_joints;
  if (raw.size() != static_cast<std::size_t>(n) * n)
    throw ValueError("normalize_adjacency: matrix size does not match joint count");
  for (int i = 0; i < n; ++i) {
    if (raw[static_cast<std::size_t>(i) * n + i] != 1.0)
      throw ValueError("normalize_adjacency: diagonal entry at joint " + std::to_string(i) +
                       " is not 1");
    for (int j = 0; j < n; ++j) {
      const double v = raw[static_cast<std::size_t>(i) * n + j];
      if (v != 0.0 && v != 1.0)
        throw ValueError("normalize_adjacency: matrix is not binary");
      if (v != raw[static_cast<std::size_t>(j) * n + i])
        throw ValueError("normalize_adjacency: matrix is not symmetric");
    }
  }
  std::vector<double> inv_sqrt_deg(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double deg = 0;
    for (int j = 0; j < n; ++j) deg += raw[static_cast<std::size_t>(i) * n + j];
    inv_sqrt_deg[static_cast<std::size_t>(i)] = 1.0 / std::sqrt(deg);
  }
  std::vector<double> out(raw.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = raw[static_cast<std::size_t>(i) * n + j] *
                                                 inv_sqrt_deg[static_cast<std::size_t>(i)] *
                                                 inv_sqrt_deg[static_cast<std::size_t>(j)];
  return out;
}

MultiScaleAdjacency normalized(const MultiScaleAdjacency& raw) {
  MultiScaleAdjacency out;
  out.num_scales = raw.num_scales;
  out.num_joints = raw.num_joints;
  out.scales.reserve(raw.scales.size());
  for (const auto& m : raw.scales) out.scales.push_back(normalize_adjacency(m, raw.num_joints));
  return out;
}

SkeletonGraph parse_graph_text(std::istream& in, const std::string& origin) {
  std::string line;
  int line_no = 0;
  int n = -1, root = -1;
  std::vector<std::pair<int, int>> edges;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok)) continue;  // blank line
    if (line_no == 1 || n < 0) {
      if (tok.rfind("N=", 0) != 0)
        throw ParseError(origin + ": expected header 'N=<int> root=<int>'", line_no);
      std::string rtok;
      if (!(ls >> rtok) || rtok.rfind("root=", 0) != 0)
        throw ParseError(origin + ": expected 'root=<int>' after N", line_no);
      try {
        n = std::stoi(tok.substr(2));
        root = std::stoi(rtok.substr(5));
      } catch (const std::exception&) {
        throw ParseError(origin + ": non-numeric header field", line_no);
      }
      continue;
    }
    if (tok != "edge") throw ParseError(origin + ": expected 'edge <i> <j>'", line_no);
    int i, j;
    if (!(ls >> i >> j)) throw ParseError(origin + ": edge needs two joint indices", line_no);
    edges.emplace_back(i, j);
  }
  if (n < 0) throw ParseError(origin + ": missing header line");
  try {
    return build_graph(std::move(edges), n, root);
  } catch (const ValueError& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

SkeletonGraph parse_graph_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph file " + path);
  return parse_graph_text(in, path);
}

void write_graph_file(const std::string& path, const SkeletonGraph& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph file " + path);
  out << "N=" << g.num_joints << " root=" << g.root << "\n";
  for (const auto& e : g.edges) out << "edge " << e.first << " " << e.second << "\n";
  if (!out) throw IoError("failed writing graph file " + path);
}

SkeletonGraph body10() {
  SkeletonGraph g = build_graph(
      {{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 5}, {0, 6}, {6, 7}, {0, 8}, {8, 9}},
      /*num_joints=*/10, /*root=*/0);
  g.joint_names = {"spine_base", "spine_top", "l_elbow", "l_hand", "r_elbow",
                   "r_hand",     "l_knee",    "l_foot",  "r_knee", "r_foot"};
  return g;
}

}  // namespace stf::graph
