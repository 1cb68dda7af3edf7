#pragma once

// Undirected graphs, generators, and the symmetric normalized Laplacian.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grok/linalg.hpp"

namespace grok {

using Edge = std::pair<std::size_t, std::size_t>;

/// Undirected simple graph with optional node features and labels.
/// Edges are stored once each as (lo, hi), sorted.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  std::optional<Matrix> features;
  std::optional<std::vector<int>> labels;

  /// 1 + max label, or 0 without labels.
  int num_classes() const {
    if (!labels || labels->empty()) return 0;
    return 1 + *std::max_element(labels->begin(), labels->end());
  }

  bool operator==(const Graph&) const = default;
};

/// Bijection on [0, N): node i of the source graph becomes node mapping[i].
struct Permutation {
  std::vector<std::size_t> mapping;

  static Permutation identity(std::size_t n) {
    Permutation p;
    p.mapping.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.mapping[i] = i;
    return p;
  }

  bool valid() const {
    std::vector<std::size_t> sorted = mapping;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != i) return false;
    return true;
  }
};

inline Graph build_graph(std::size_t num_nodes, const std::vector<Edge>& edge_list,
                         std::optional<Matrix> features = std::nullopt,
                         std::optional<std::vector<int>> labels = std::nullopt) {
  if (num_nodes == 0) throw PreconditionError("build_graph: num_nodes must be positive");
  std::set<Edge> unique;
  for (const auto& [i, j] : edge_list) {
    if (i >= num_nodes || j >= num_nodes)
      throw PreconditionError("build_graph: index out of range in edge (" + std::to_string(i) +
                              ", " + std::to_string(j) + ") for " + std::to_string(num_nodes) +
                              " nodes");
    if (i == j) throw PreconditionError("build_graph: self-loop at node " + std::to_string(i));
    unique.emplace(std::min(i, j), std::max(i, j));
  }
  if (features && features->rows() != num_nodes)
    throw PreconditionError("build_graph: feature rows != num_nodes");
  if (labels) {
    if (labels->size() != num_nodes) throw PreconditionError("build_graph: label count != num_nodes");
    for (int l : *labels)
      if (l < 0) throw PreconditionError("build_graph: negative label");
  }
  Graph g;
  g.num_nodes = num_nodes;
  g.edges.assign(unique.begin(), unique.end());
  g.features = std::move(features);
  g.labels = std::move(labels);
  return g;
}

struct AdjacencyDegree {
  Matrix adjacency;
  std::vector<double> degree;
};

inline AdjacencyDegree adjacency_and_degree(const Graph& g) {
  AdjacencyDegree out{Matrix(g.num_nodes, g.num_nodes), std::vector<double>(g.num_nodes, 0.0)};
  for (const auto& [i, j] : g.edges) {
    out.adjacency(i, j) = 1.0;
    out.adjacency(j, i) = 1.0;
    out.degree[i] += 1.0;
    out.degree[j] += 1.0;
  }
  return out;
}

/// L = I − D^{-1/2} A D^{-1/2} on the raw adjacency (no added self-loops).
/// Isolated nodes get an all-zero row and column, diagonal included.
inline Matrix normalized_laplacian(const Graph& g) {
  const auto [adj, deg] = adjacency_and_degree(g);
  const std::size_t n = g.num_nodes;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = deg[i] > 0 ? 1.0 / std::sqrt(deg[i]) : 0.0;
  Matrix lap(n, n);
  for (std::size_t i = 0; i < n; ++i) lap(i, i) = deg[i] > 0 ? 1.0 : 0.0;
  for (const auto& [i, j] : g.edges) {
    const double v = -inv_sqrt[i] * inv_sqrt[j];
    lap(i, j) = v;
    lap(j, i) = v;
  }
  return lap;
}

/// rows × cols lattice with 4-neighbourhood connectivity; node (r, c) has index r·cols + c.
inline Graph grid_graph(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw PreconditionError("grid_graph: rows and cols must be >= 1");
  std::vector<Edge> edges;
  edges.reserve(rows * (cols - 1) + cols * (rows - 1));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t id = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(id, id + 1);
      if (r + 1 < rows) edges.emplace_back(id, id + cols);
    }
  return build_graph(rows * cols, edges);
}

/// Fraction of edges whose endpoints share a label.
inline double homophily_ratio(const Graph& g) {
  if (!g.labels) throw PreconditionError("homophily_ratio: graph has no labels");
  if (g.edges.empty()) throw PreconditionError("homophily_ratio: graph has no edges");
  std::size_t same = 0;
  for (const auto& [i, j] : g.edges)
    if ((*g.labels)[i] == (*g.labels)[j]) ++same;
  return static_cast<double>(same) / static_cast<double>(g.edges.size());
}

/// Row i of x moves to row p.mapping[i].
inline Matrix permute_rows(const Matrix& x, const Permutation& p) {
  if (x.rows() != p.mapping.size()) throw PreconditionError("permute_rows: size mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto src = x.row(i);
    std::copy(src.begin(), src.end(), out.row(p.mapping[i]).begin());
  }
  return out;
}

inline Graph permute_graph(const Graph& g, const Permutation& p) {
  if (p.mapping.size() != g.num_nodes) throw PreconditionError("permute_graph: size mismatch");
  if (!p.valid()) throw PreconditionError("permute_graph: mapping is not a bijection");
  std::vector<Edge> edges;
  edges.reserve(g.edges.size());
  for (const auto& [i, j] : g.edges) edges.emplace_back(p.mapping[i], p.mapping[j]);
  std::optional<Matrix> features;
  if (g.features) features = permute_rows(*g.features, p);
  std::optional<std::vector<int>> labels;
  if (g.labels) {
    labels.emplace(g.num_nodes);
    for (std::size_t i = 0; i < g.num_nodes; ++i) (*labels)[p.mapping[i]] = (*g.labels)[i];
  }
  return build_graph(g.num_nodes, edges, std::move(features), std::move(labels));
}

// ---------------------------------------------------------------------------
// Text formats. Edge list: "i j" per line; feature file: one node per line,
// whitespace-separated reals; label file: one integer per line. Lines starting
// with '#' are ignored in all three.

namespace detail {
inline bool skip_line(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}
inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}
inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << std::setprecision(17);
  return out;
}
}  // namespace detail

inline std::vector<Edge> read_edge_list(const std::string& path) {
  auto in = detail::open_in(path);
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::skip_line(line)) continue;
    std::istringstream ss(line);
    long long i, j;
    if (!(ss >> i >> j) || i < 0 || j < 0)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected two node indices");
    edges.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return edges;
}

/// The N from a "# nodes N" comment, or 0 when the file has none.
inline std::size_t read_node_count_comment(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string hash, word;
    std::size_t n = 0;
    if (ss >> hash >> word >> n && hash == "#" && word == "nodes") return n;
  }
  return 0;
}

inline void write_edge_list(const std::string& path, const Graph& g) {
  auto out = detail::open_out(path);
  out << "# nodes " << g.num_nodes << "\n";
  for (const auto& [i, j] : g.edges) out << i << ' ' << j << '\n';
}

inline Matrix read_features(const std::string& path) {
  auto in = detail::open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::skip_line(line)) continue;
    std::istringstream ss(line);
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError(path + ": ragged feature rows");
    rows.push_back(std::move(row));
  }
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  return m;
}

inline void write_features(const std::string& path, const Matrix& x) {
  auto out = detail::open_out(path);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out << (j ? " " : "") << x(i, j);
    out << '\n';
  }
}

inline std::vector<int> read_labels(const std::string& path) {
  auto in = detail::open_in(path);
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::skip_line(line)) continue;
    std::istringstream ss(line);
    int v;
    if (!(ss >> v)) throw IoError(path + ": expected an integer label");
    labels.push_back(v);
  }
  return labels;
}

inline void write_labels(const std::string& path, const std::vector<int>& labels) {
  auto out = detail::open_out(path);
  for (int l : labels) out << l << '\n';
}

/// Reads an edge list (plus optional feature and label files). The node
/// count is the largest of num_nodes_hint, a "# nodes N" comment, 1 + max
/// edge index, and the feature/label row counts.
inline Graph load_graph(const std::string& edge_path, std::size_t num_nodes_hint = 0,
                        const std::string& feature_path = "", const std::string& label_path = "") {
  const auto edges = read_edge_list(edge_path);
  std::size_t n = std::max(num_nodes_hint, read_node_count_comment(edge_path));
  for (const auto& [i, j] : edges) n = std::max({n, i + 1, j + 1});
  std::optional<Matrix> features;
  std::optional<std::vector<int>> labels;
  if (!feature_path.empty()) {
    features = read_features(feature_path);
    n = std::max(n, features->rows());
  }
  if (!label_path.empty()) {
    labels = read_labels(label_path);
    n = std::max(n, labels->size());
  }
  return build_graph(n, edges, std::move(features), std::move(labels));
}

}  // namespace grok
