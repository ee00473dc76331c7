#include "csf/flowgraph.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <unordered_map>

#include "csf/error.hpp"

namespace csf::flow {

std::optional<std::size_t> FlowGraph::downstream(std::size_t node) const {
    return downstream_.at(node);
}

std::vector<std::size_t> FlowGraph::outlets() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
        if (!downstream_[i]) out.push_back(i);
    return out;
}

std::optional<std::size_t> FlowGraph::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < stations_.size(); ++i)
        if (stations_[i].id == id) return i;
    return std::nullopt;
}

FlowGraph FlowGraph::induced(const std::vector<std::size_t>& nodes) const {
    std::unordered_map<std::size_t, std::size_t> local;
    std::vector<Station> stations;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        local.emplace(nodes[k], k);
        stations.push_back(stations_.at(nodes[k]));
    }
    std::vector<Edge> edges;
    for (const auto& [up, down] : edges_) {
        auto u = local.find(up);
        auto d = local.find(down);
        if (u != local.end() && d != local.end()) edges.emplace_back(u->second, d->second);
    }
    return make_graph(std::move(stations), std::move(edges));
}

FlowGraph make_graph(std::vector<Station> stations, std::vector<Edge> edges) {
    const std::size_t n = stations.size();
    {
        std::set<std::string> ids;
        for (const Station& s : stations)
            if (!ids.insert(s.id).second) fail(ErrorKind::ParseError, "duplicate station id " + s.id);
    }
    FlowGraph g;
    g.downstream_.assign(n, std::nullopt);
    g.upstream_.assign(n, {});
    for (const auto& [up, down] : edges) {
        if (up >= n || down >= n) fail(ErrorKind::UnknownStation, "edge endpoint out of range");
        if (up == down) fail(ErrorKind::CycleDetected, "self-edge at " + stations[up].id);
        if (g.downstream_[up])
            fail(ErrorKind::MultipleDownstream,
                 stations[up].id + " drains to both " + stations[*g.downstream_[up]].id + " and " +
                     stations[down].id);
        g.downstream_[up] = down;
        g.upstream_[down].push_back(up);
    }
    for (auto& ups : g.upstream_) std::sort(ups.begin(), ups.end());

    // Kahn's algorithm, smallest ready index first.
    std::vector<std::size_t> indegree(n, 0);
    for (std::size_t i = 0; i < n; ++i) indegree[i] = g.upstream_[i].size();
    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    for (std::size_t i = 0; i < n; ++i)
        if (indegree[i] == 0) ready.push(i);
    while (!ready.empty()) {
        const std::size_t i = ready.top();
        ready.pop();
        g.topo_.push_back(i);
        if (auto d = g.downstream_[i]; d && --indegree[*d] == 0) ready.push(*d);
    }
    if (g.topo_.size() != n) {
        std::string member;
        for (std::size_t i = 0; i < n; ++i)
            if (indegree[i] > 0) {
                member = stations[i].id;
                break;
            }
        fail(ErrorKind::CycleDetected, "cycle through station " + member);
    }
    g.stations_ = std::move(stations);
    g.edges_ = std::move(edges);
    return g;
}

FlowGraph build_from_edges(std::vector<Station> stations,
                           const std::vector<std::pair<std::string, std::string>>& edges) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < stations.size(); ++i) index.emplace(stations[i].id, i);
    std::vector<Edge> resolved;
    resolved.reserve(edges.size());
    for (const auto& [up, down] : edges) {
        auto u = index.find(up);
        if (u == index.end()) fail(ErrorKind::UnknownStation, "edge references unknown station " + up);
        auto d = index.find(down);
        if (d == index.end()) fail(ErrorKind::UnknownStation, "edge references unknown station " + down);
        resolved.emplace_back(u->second, d->second);
    }
    return make_graph(std::move(stations), std::move(resolved));
}

D8Result build_from_d8(const Grid& dem, const std::vector<bool>& station_mask,
                       const std::vector<Station>& stations) {
    const std::size_t rows = dem.rows, cols = dem.cols;
    if (rows == 0 || cols == 0 || dem.values.size() != rows * cols)
        fail(ErrorKind::ParseError, "DEM grid is empty or inconsistent");
    if (station_mask.size() != rows * cols)
        fail(ErrorKind::ShapeMismatch, "station mask does not match DEM size");

    D8Result result;
    result.receivers.assign(rows * cols, std::nullopt);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double z = dem.at(r, c);
            double best_slope = 0.0;
            std::optional<std::size_t> best;
            bool all_equal = true;
            std::size_t neighbours = 0;
            // Row-major neighbour scan; a strict '>' keeps the first (smallest
            // (row, col)) neighbour among equal slopes.
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const auto nr = static_cast<std::ptrdiff_t>(r) + dr;
                    const auto nc = static_cast<std::ptrdiff_t>(c) + dc;
                    if (nr < 0 || nc < 0 || nr >= static_cast<std::ptrdiff_t>(rows) ||
                        nc >= static_cast<std::ptrdiff_t>(cols))
                        continue;
                    ++neighbours;
                    const double zn = dem.at(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc));
                    if (zn != z) all_equal = false;
                    const double slope = (z - zn) / ((dr != 0 && dc != 0) ? std::sqrt(2.0) : 1.0);
                    if (slope > best_slope) {
                        best_slope = slope;
                        best = static_cast<std::size_t>(nr) * cols + static_cast<std::size_t>(nc);
                    }
                }
            }
            const std::size_t cell = r * cols + c;
            const bool interior = neighbours == 8;
            if (!best && interior && all_equal && station_mask[cell])
                fail(ErrorKind::AllFlat, "station cell (" + std::to_string(r) + "," + std::to_string(c) +
                                             ") sits inside a flat with no outlet");
            result.receivers[cell] = best;
        }
    }

    std::vector<std::size_t> node_of(rows * cols, SIZE_MAX);
    std::size_t count = 0;
    for (std::size_t cell = 0; cell < rows * cols; ++cell)
        if (station_mask[cell]) {
            node_of[cell] = count++;
            result.cells.push_back(cell);
        }
    if (!stations.empty() && stations.size() != count)
        fail(ErrorKind::IndexMismatch, "station table has " + std::to_string(stations.size()) +
                                           " rows but the mask selects " + std::to_string(count));

    std::vector<Station> nodes;
    nodes.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t cell = result.cells[k];
        if (!stations.empty()) {
            nodes.push_back(stations[k]);
            continue;
        }
        Station s;
        s.id = "r" + std::to_string(cell / cols) + "c" + std::to_string(cell % cols);
        s.lat = static_cast<double>(cell / cols);
        s.lon = static_cast<double>(cell % cols);
        s.elevation = dem.values[cell];
        s.huc4 = "0000";
        s.huc8 = "00000000";
        nodes.push_back(std::move(s));
    }

    std::vector<Edge> edges;
    for (std::size_t k = 0; k < count; ++k) {
        // Receivers strictly descend, so this walk terminates.
        std::optional<std::size_t> cell = result.receivers[result.cells[k]];
        while (cell && node_of[*cell] == SIZE_MAX) cell = result.receivers[*cell];
        if (cell) edges.emplace_back(k, node_of[*cell]);
    }
    result.graph = make_graph(std::move(nodes), std::move(edges));
    return result;
}

CausalAdjacency causal_adjacency(const FlowGraph& graph) {
    CausalAdjacency adj;
    adj.n = graph.size();
    adj.entries = num::Tensor(num::Shape{adj.n, adj.n}, 0.0);
    for (const auto& [up, down] : graph.edges()) adj.entries.at(up, down) = 1.0;
    return adj;
}

std::set<std::size_t> upstream_closure(const FlowGraph& graph, const std::set<std::size_t>& targets) {
    std::set<std::size_t> closure;
    std::vector<std::size_t> stack;
    for (std::size_t t : targets) {
        if (t >= graph.size()) fail(ErrorKind::UnknownStation, "target index out of range");
        if (closure.insert(t).second) stack.push_back(t);
    }
    while (!stack.empty()) {
        const std::size_t node = stack.back();
        stack.pop_back();
        for (std::size_t up : graph.upstream(node))
            if (closure.insert(up).second) stack.push_back(up);
    }
    return closure;
}

std::vector<std::string> Grouping::groups() const {
    std::vector<std::string> out;
    for (const auto& [huc8, huc4] : hierarchy) out.push_back(huc8);
    return out;
}

std::vector<std::size_t> Grouping::members(const std::string& group) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
        if (assignment[i] == group) out.push_back(i);
    return out;
}

Grouping hierarchical_groups(const std::vector<Station>& stations) {
    Grouping g;
    for (const Station& s : stations) {
        if (s.huc8.empty() || s.huc4.empty())
            fail(ErrorKind::InconsistentHierarchy, "station " + s.id + " lacks a HUC code");
        if (s.huc8.rfind(s.huc4, 0) != 0 || s.huc4.size() != 4)
            fail(ErrorKind::InconsistentHierarchy,
                 "station " + s.id + ": huc8 " + s.huc8 + " is not inside huc4 " + s.huc4);
        auto [it, inserted] = g.hierarchy.emplace(s.huc8, s.huc4);
        if (!inserted && it->second != s.huc4)
            fail(ErrorKind::InconsistentHierarchy,
                 "huc8 " + s.huc8 + " maps to both " + it->second + " and " + s.huc4);
        g.assignment.push_back(s.huc8);
    }
    return g;
}

num::Tensor aggregation_matrix(const CausalAdjacency& adj, bool self_loops, bool row_normalize) {
    const std::size_t n = adj.n;
    num::Tensor m(num::Shape{n, n}, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m.at(i, j) = adj.at(j, i);
    if (self_loops)
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    if (row_normalize) {
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) sum += m.at(i, j);
            if (sum > 0.0)
                for (std::size_t j = 0; j < n; ++j) m.at(i, j) /= sum;
        }
    }
    return m;
}

ValidationReport validate(const FlowGraph& graph, const Grouping& grouping, const num::Tensor& aggregation) {
    ValidationReport report;
    report.nodes = graph.size();
    report.edges = graph.edges().size();
    report.acyclic = graph.topological_order().size() == graph.size();
    report.outlets = graph.outlets().size();
    for (const std::string& g : grouping.assignment) ++report.group_sizes[g];
    for (std::size_t i = 0; i < aggregation.rows(); ++i) {
        bool any = false;
        for (std::size_t j = 0; j < aggregation.cols(); ++j) any = any || aggregation.at(i, j) != 0.0;
        if (!any) report.degenerate_rows.push_back(i);
    }
    return report;
}

}  // namespace csf::flow
