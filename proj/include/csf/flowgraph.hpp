#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "csf/tensor.hpp"

namespace csf::flow {

struct Station {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    double elevation = 0.0;
    std::string huc8;
    std::string huc4;
    int soil_class = 0;

    bool operator==(const Station&) const = default;
};

using Edge = std::pair<std::size_t, std::size_t>;  // (upstream, downstream)

/**
 * Directed river network over stations. Node i is stations[i]. Every node
 * drains to at most one downstream node and the graph is acyclic; the
 * constructors below are the only way to obtain one.
 */
class FlowGraph {
public:
    FlowGraph() = default;

    std::size_t size() const { return stations_.size(); }
    const std::vector<Station>& stations() const { return stations_; }
    const Station& station(std::size_t i) const { return stations_.at(i); }
    const std::vector<Edge>& edges() const { return edges_; }

    std::optional<std::size_t> downstream(std::size_t node) const;
    const std::vector<std::size_t>& upstream(std::size_t node) const { return upstream_.at(node); }
    /// Upstream nodes before downstream ones; ties by node index.
    const std::vector<std::size_t>& topological_order() const { return topo_; }
    std::vector<std::size_t> outlets() const;
    std::optional<std::size_t> index_of(const std::string& id) const;

    /// Subgraph over `nodes` (kept in the given order) with the edges among them.
    FlowGraph induced(const std::vector<std::size_t>& nodes) const;

    friend FlowGraph make_graph(std::vector<Station> stations, std::vector<Edge> edges);

private:
    std::vector<Station> stations_;
    std::vector<Edge> edges_;
    std::vector<std::optional<std::size_t>> downstream_;
    std::vector<std::vector<std::size_t>> upstream_;
    std::vector<std::size_t> topo_;
};

/// Validates index edges (out-degree <= 1, no self-edges, acyclic) and builds
/// the graph. Throws MultipleDownstream or CycleDetected.
FlowGraph make_graph(std::vector<Station> stations, std::vector<Edge> edges);

/// Builds from id-named edges. Throws UnknownStation for an unknown endpoint.
FlowGraph build_from_edges(std::vector<Station> stations,
                           const std::vector<std::pair<std::string, std::string>>& edges);

/// Row-major elevation grid.
struct Grid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct D8Result {
    FlowGraph graph;
    /// Grid cell (row-major index) of each station node.
    std::vector<std::size_t> cells;
    /// Receiving cell for every grid cell, nullopt for outlets.
    std::vector<std::optional<std::size_t>> receivers;
};

/**
 * Steepest-descent (D8) routing over the grid, contracted onto masked cells.
 * Slopes use unit cardinal and sqrt(2) diagonal spacing; equal slopes resolve
 * to the lexicographically smallest (row, col). Cells without a strictly
 * lower neighbour are outlets, except an interior station cell whose eight
 * neighbours all share its elevation, which throws AllFlat. Station nodes are
 * numbered in row-major order of the mask; ids are "r<row>c<col>" unless
 * `stations` supplies one record per masked cell in that order.
 */
D8Result build_from_d8(const Grid& dem, const std::vector<bool>& station_mask,
                       const std::vector<Station>& stations = {});

/// Dense n x n binary matrix; entry (i, j) = 1 iff edge i -> j.
struct CausalAdjacency {
    std::size_t n = 0;
    num::Tensor entries;

    double at(std::size_t i, std::size_t j) const { return entries.at(i, j); }
};

CausalAdjacency causal_adjacency(const FlowGraph& graph);

/// targets plus every node with a directed path into a target.
std::set<std::size_t> upstream_closure(const FlowGraph& graph, const std::set<std::size_t>& targets);

struct Grouping {
    /// Group id (huc8 code) of each node.
    std::vector<std::string> assignment;
    /// huc8 -> huc4.
    std::map<std::string, std::string> hierarchy;

    std::vector<std::string> groups() const;
    std::vector<std::size_t> members(const std::string& group) const;
};

/// Groups by huc8 under huc4 parents. Throws InconsistentHierarchy when a huc8
/// code does not extend its huc4 parent or maps to two parents.
Grouping hierarchical_groups(const std::vector<Station>& stations);

/**
 * Message-passing matrix: M[i][j] != 0 iff j -> i is an edge, or i == j with
 * self_loops. Node i therefore receives only from its direct upstream
 * neighbours (and itself). With row_normalize every nonzero row sums to 1.
 */
num::Tensor aggregation_matrix(const CausalAdjacency& adj, bool self_loops = true,
                               bool row_normalize = true);

struct ValidationReport {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    bool acyclic = true;
    std::size_t outlets = 0;
    std::map<std::string, std::size_t> group_sizes;
    /// Nodes whose aggregation row is all zero (no upstream, no self-loop).
    std::vector<std::size_t> degenerate_rows;
};

ValidationReport validate(const FlowGraph& graph, const Grouping& grouping,
                          const num::Tensor& aggregation);

}  // namespace csf::flow
