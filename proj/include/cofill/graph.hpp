#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cofill/csv.hpp"
#include "cofill/ops.hpp"

namespace cofill {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Static sensor graph: nonnegative N x N adjacency, optional coordinates.
struct Graph {
  std::size_t node_count = 0;
  Tensor adjacency;
  std::vector<Point2> coords;

  static Graph from_adjacency(Tensor a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
      throw DimensionError("adjacency must be square, got " + shape_str(a.shape()));
    for (double v : a.data())
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ContractError("adjacency entries must be finite and nonnegative");
    Graph g;
    g.node_count = a.dim(0);
    g.adjacency = std::move(a);
    return g;
  }

  static Graph empty(std::size_t n) { return from_adjacency(Tensor({n, n})); }

  /// Undirected ring 0-1-...-(n-1)-0.
  static Graph ring(std::size_t n) {
    Tensor a({n, n});
    if (n > 1)
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = (i + 1) % n;
        if (i == j) continue;
        a.at(i, j) = 1.0;
        a.at(j, i) = 1.0;
      }
    return from_adjacency(std::move(a));
  }
};

/// D^{-1/2} (A + I) D^{-1/2} with D_ii = sum_j (A + I)_ij.
struct NormalizedGraph {
  Tensor a_gcn;
  std::size_t node_count() const { return a_gcn.dim(0); }
};

inline NormalizedGraph normalize_adjacency(const Graph& g) {
  const std::size_t n = g.node_count;
  if (n == 0) throw ContractError("normalize_adjacency: graph has no nodes");
  Tensor a = g.adjacency;
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) += 1.0;
  std::vector<double> dinv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.at(i, j);
    dinv[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) *= dinv[i] * dinv[j];
  return {std::move(a)};
}

/// Right-multiplies the node axis of H [C, N, L] by A: (H A)[:, i, :] =
/// sum_j H[:, j, :] A[j, i].
inline Var propagate_nodes(const Var& h, const Tensor& a) {
  const std::size_t n = a.dim(0);
  Tensor at({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) at.at(i, j) = a.at(j, i);
  return linear_along(h, Var::constant(std::move(at)), 1);
}

/// ReLU(W * Concat(H, H A, ..., H A^order) + b): concatenated graph powers
/// fused across channels by a 1x1 convolution. W is [C_out, C*(order+1)].
inline Var graph_conv(const Var& h, const NormalizedGraph& g, std::size_t order,
                      const Var& weight, const Var& bias) {
  if (order < 1) throw ContractError("graph_conv: order must be >= 1");
  if (h.shape().size() != 3 || h.dim(1) != g.node_count())
    throw DimensionError("graph_conv: features " + shape_str(h.shape()) +
                         " do not match graph with " +
                         std::to_string(g.node_count()) + " nodes");
  std::vector<Var> parts{h};
  Var cur = h;
  for (std::size_t k = 0; k < order; ++k) {
    cur = propagate_nodes(cur, g.a_gcn);
    parts.push_back(cur);
  }
  Var fused = linear_along(concat(parts, 0), weight, 0);
  return relu(add_bias(fused, bias, 0));
}

/// Thresholded Gaussian kernel A_ij = exp(-dist^2 / s^2), s the standard
/// deviation of pairwise distances; entries below `threshold` are dropped.
inline Graph build_adjacency_from_coords(const std::vector<Point2>& coords,
                                         double threshold) {
  const std::size_t n = coords.size();
  if (n < 1) throw ContractError("build_adjacency_from_coords: need at least one node");
  std::vector<double> dists;
  Tensor dist({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      dist.at(i, j) = std::hypot(coords[i].x - coords[j].x, coords[i].y - coords[j].y);
      if (i < j) dists.push_back(dist.at(i, j));
    }
  double s = 0.0;
  if (!dists.empty()) {
    double mean = 0.0;
    for (double d : dists) mean += d;
    mean /= static_cast<double>(dists.size());
    for (double d : dists) s += (d - mean) * (d - mean);
    s = std::sqrt(s / static_cast<double>(dists.size()));
  }
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = dist.at(i, j);
      // Degenerate spread: only coincident nodes are connected.
      const double w = s > 0.0 ? std::exp(-(d * d) / (s * s)) : (d == 0.0 ? 1.0 : 0.0);
      a.at(i, j) = w >= threshold ? w : 0.0;
    }
  Graph g = Graph::from_adjacency(std::move(a));
  g.coords = coords;
  return g;
}

/// Edge list CSV `src,dst[,weight]`, 0-based indices, read as undirected.
inline Graph load_edge_list(const std::filesystem::path& path, std::size_t node_count) {
  const auto table = csv::read(path);
  if (table.header.size() < 2 || table.header[0] != "src" || table.header[1] != "dst")
    throw ParseError(path.string() + ": expected header src,dst[,weight]");
  const bool weighted = table.header.size() >= 3;
  Tensor a({node_count, node_count});
  for (const auto& row : table.rows) {
    const std::string where = path.string() + ":" + std::to_string(row.line);
    if (row.cells.size() != table.header.size())
      throw ParseError(where + ": expected " + std::to_string(table.header.size()) +
                       " columns, got " + std::to_string(row.cells.size()));
    const long s = csv::parse_long(row.cells[0], where + " column 1");
    const long d = csv::parse_long(row.cells[1], where + " column 2");
    if (s < 0 || d < 0 || static_cast<std::size_t>(s) >= node_count ||
        static_cast<std::size_t>(d) >= node_count)
      throw ParseError(where + ": node index out of range for " +
                       std::to_string(node_count) + " nodes");
    const double w = weighted ? csv::parse_double(row.cells[2], where + " column 3") : 1.0;
    if (w < 0.0) throw ParseError(where + ": negative edge weight");
    if (s == d) continue;
    a.at(s, d) = w;
    a.at(d, s) = w;
  }
  return Graph::from_adjacency(std::move(a));
}

inline std::string edge_list_csv(const Graph& g) {
  std::string out = "src,dst,weight\n";
  for (std::size_t i = 0; i < g.node_count; ++i)
    for (std::size_t j = i + 1; j < g.node_count; ++j)
      if (g.adjacency.at(i, j) != 0.0)
        out += std::to_string(i) + "," + std::to_string(j) + "," +
               csv::format_double(g.adjacency.at(i, j)) + "\n";
  return out;
}

/// Coordinates CSV `node,x,y`.
inline std::vector<Point2> load_coords(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  if (table.header.size() != 3 || table.header[0] != "node")
    throw ParseError(path.string() + ": expected header node,x,y");
  std::vector<std::optional<Point2>> pts(table.rows.size());
  for (const auto& row : table.rows) {
    const std::string where = path.string() + ":" + std::to_string(row.line);
    if (row.cells.size() != 3) throw ParseError(where + ": expected 3 columns");
    const long id = csv::parse_long(row.cells[0], where + " column 1");
    if (id < 0 || static_cast<std::size_t>(id) >= pts.size() || pts[id])
      throw ParseError(where + ": invalid or duplicate node id");
    pts[id] = Point2{csv::parse_double(row.cells[1], where + " column 2"),
                     csv::parse_double(row.cells[2], where + " column 3")};
  }
  std::vector<Point2> out;
  for (const auto& p : pts) out.push_back(*p);
  return out;
}

}  // namespace cofill
