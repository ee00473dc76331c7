#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "csf/error.hpp"
#include "csf/flowgraph.hpp"
#include "csf/rng.hpp"

using namespace csf;
using namespace csf::flow;

namespace {

Station st(const std::string& id, const std::string& huc8 = "12070101", const std::string& huc4 = "1207") {
    return Station{id, 30.0, -97.0, 100.0, huc8, huc4, 1};
}

std::vector<Station> named(std::initializer_list<const char*> ids) {
    std::vector<Station> out;
    for (const char* id : ids) out.push_back(st(id));
    return out;
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::Internal;
}

// Random forest: node i > 0 drains to a random earlier node or is an outlet.
FlowGraph random_forest(std::size_t n, Rng& rng) {
    std::vector<Station> s;
    std::vector<Edge> e;
    for (std::size_t i = 0; i < n; ++i) {
        s.push_back(st("N" + std::to_string(i)));
        if (i > 0 && rng.uniform() < 0.85) e.emplace_back(i, rng.below(i));
    }
    return make_graph(s, e);
}

// Brute-force D8 receiver of one cell: scan all 8 neighbours, keep the first
// strictly steepest in row-major order.
std::optional<std::size_t> brute_receiver(const Grid& g, std::size_t r, std::size_t c) {
    double best = 0.0;
    std::optional<std::size_t> pick;
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
            if (!dr && !dc) continue;
            const long rr = long(r) + dr, cc = long(c) + dc;
            if (rr < 0 || cc < 0 || rr >= long(g.rows) || cc >= long(g.cols)) continue;
            const double dist = (dr && dc) ? std::sqrt(2.0) : 1.0;
            const double slope = (g.at(r, c) - g.at(rr, cc)) / dist;
            if (slope > best) {
                best = slope;
                pick = rr * g.cols + cc;
            }
        }
    return pick;
}

}  // namespace

TEST_CASE("build_from_edges examples") {
    FlowGraph chain = build_from_edges(named({"A", "B", "C"}), {{"A", "B"}, {"B", "C"}});
    CHECK(chain.edges() == std::vector<Edge>{{0, 1}, {1, 2}});
    CHECK(chain.topological_order() == std::vector<std::size_t>{0, 1, 2});
    CHECK(chain.outlets() == std::vector<std::size_t>{2});

    CHECK(kind_of([] { build_from_edges(named({"A", "B", "C"}), {{"A", "B"}, {"B", "C"}, {"C", "A"}}); }) ==
          ErrorKind::CycleDetected);

    FlowGraph conf = build_from_edges(named({"A", "B", "C", "D"}), {{"A", "C"}, {"B", "C"}, {"C", "D"}});
    CHECK(conf.upstream(2) == std::vector<std::size_t>{0, 1});

    CHECK(kind_of([] { build_from_edges(named({"A", "B"}), {{"A", "Z"}}); }) == ErrorKind::UnknownStation);
    CHECK(kind_of([] { build_from_edges(named({"A", "B", "C"}), {{"A", "B"}, {"A", "C"}}); }) ==
          ErrorKind::MultipleDownstream);
    CHECK(kind_of([] { build_from_edges(named({"A"}), {{"A", "A"}}); }) == ErrorKind::CycleDetected);
}

TEST_CASE("build_from_d8 examples") {
    std::vector<bool> all3(3, true);
    CHECK(build_from_d8(Grid{1, 3, {30, 20, 10}}, all3).graph.edges() == std::vector<Edge>{{0, 1}, {1, 2}});
    auto rev = build_from_d8(Grid{1, 3, {10, 20, 30}}, all3).graph.edges();
    std::sort(rev.begin(), rev.end());
    CHECK(rev == std::vector<Edge>{{1, 0}, {2, 1}});

    Grid bowl{3, 3, {9, 8, 9, 8, 1, 8, 9, 8, 9}};
    D8Result res = build_from_d8(bowl, std::vector<bool>(9, true));
    CHECK(res.graph.edges().size() == 8);
    for (auto [u, d] : res.graph.edges()) CHECK(d == 4);
    CHECK(res.graph.outlets() == std::vector<std::size_t>{4});
    // Each edge agrees with a brute-force scan.
    for (std::size_t cell = 0; cell < 9; ++cell) CHECK(res.receivers[cell] == brute_receiver(bowl, cell / 3, cell % 3));
}

TEST_CASE("d8 contraction, ties and flats") {
    // Middle cell is not a station; the left station drains through it.
    D8Result res = build_from_d8(Grid{1, 3, {30, 20, 10}}, {true, false, true});
    CHECK(res.graph.size() == 2);
    CHECK(res.graph.edges() == std::vector<Edge>{{0, 1}});
    CHECK(res.cells == std::vector<std::size_t>{0, 2});

    // Equal drops to (0,1) and (1,0): lowest (row, col) wins.
    D8Result tie = build_from_d8(Grid{2, 2, {10, 5, 5, 9}}, std::vector<bool>(4, true));
    CHECK(tie.receivers[0] == std::optional<std::size_t>{1});

    std::vector<double> flat(9, 5.0);
    CHECK(kind_of([&] { build_from_d8(Grid{3, 3, flat}, std::vector<bool>(9, true)); }) == ErrorKind::AllFlat);
    // A pit with a lower neighbourhood is an outlet, not an error.
    CHECK(build_from_d8(Grid{1, 2, {5, 5}}, {true, true}).graph.edges().empty());
}

TEST_CASE("d8 matches brute force on random grids and is deterministic") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t rows = 2 + rng.below(6), cols = 2 + rng.below(6);
        Grid g{rows, cols, {}};
        for (std::size_t i = 0; i < rows * cols; ++i) g.values.push_back(std::round(rng.uniform(0, 20)));
        std::vector<bool> mask(rows * cols);
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.6;
        mask[0] = true;
        D8Result a, b;
        try {
            a = build_from_d8(g, mask);
            b = build_from_d8(g, mask);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::AllFlat);
            continue;
        }
        CHECK(a.graph.edges() == b.graph.edges());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) CHECK(a.receivers[r * cols + c] == brute_receiver(g, r, c));
        // Following receivers from each station reaches its graph successor first.
        for (std::size_t node = 0; node < a.graph.size(); ++node) {
            std::optional<std::size_t> cell = a.receivers[a.cells[node]];
            while (cell && !mask[*cell]) cell = a.receivers[*cell];
            auto down = a.graph.downstream(node);
            CHECK(cell.has_value() == down.has_value());
            if (cell && down) CHECK(a.cells[*down] == *cell);
        }
    }
}

TEST_CASE("causal adjacency") {
    FlowGraph chain = build_from_edges(named({"A", "B", "C"}), {{"A", "B"}, {"B", "C"}});
    CausalAdjacency a = causal_adjacency(chain);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(a.at(i, j) == ((j == i + 1) ? 1.0 : 0.0));

    CausalAdjacency empty = causal_adjacency(make_graph(named({"A", "B"}), {}));
    for (double v : empty.entries.data()) CHECK(v == 0.0);

    FlowGraph conf = build_from_edges(named({"A", "B", "C"}), {{"A", "C"}, {"B", "C"}});
    CausalAdjacency c = causal_adjacency(conf);
    std::vector<double> rows(3), cols(3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            rows[i] += c.at(i, j);
            cols[j] += c.at(i, j);
        }
    CHECK(rows == std::vector<double>{1, 1, 0});
    CHECK(cols == std::vector<double>{0, 0, 2});
}

TEST_CASE("upstream closure") {
    FlowGraph chain = build_from_edges(named({"A", "B", "C"}), {{"A", "B"}, {"B", "C"}});
    CHECK(upstream_closure(chain, {2}) == std::set<std::size_t>{0, 1, 2});
    CHECK(upstream_closure(chain, {0}) == std::set<std::size_t>{0});
    FlowGraph two = build_from_edges(named({"A", "B", "C", "D"}), {{"A", "B"}, {"C", "D"}});
    CHECK(upstream_closure(two, {1}) == std::set<std::size_t>{0, 1});
}

TEST_CASE("hierarchical groups") {
    std::vector<Station> s{st("a", "12070101"), st("b", "12070101"), st("c", "12070102")};
    Grouping g = hierarchical_groups(s);
    CHECK(g.groups().size() == 2);
    CHECK(g.hierarchy.at("12070101") == "1207");
    CHECK(g.hierarchy.at("12070102") == "1207");
    CHECK(g.members("12070101") == std::vector<std::size_t>{0, 1});

    CHECK(hierarchical_groups({st("a"), st("b")}).groups().size() == 1);
    CHECK(kind_of([] { hierarchical_groups({st("a", "12060101", "1207")}); }) == ErrorKind::InconsistentHierarchy);
}

TEST_CASE("aggregation matrix examples") {
    FlowGraph chain = build_from_edges(named({"A", "B", "C"}), {{"A", "B"}, {"B", "C"}});
    num::Tensor m = aggregation_matrix(causal_adjacency(chain));
    CHECK(m.at(1, 0) == 0.5);
    CHECK(m.at(1, 1) == 0.5);
    CHECK(m.at(1, 2) == 0.0);
    CHECK(m.at(0, 0) == 1.0);
    num::Tensor bare = aggregation_matrix(causal_adjacency(chain), false, true);
    for (std::size_t j = 0; j < 3; ++j) CHECK(bare.at(0, j) == 0.0);
    ValidationReport rep = validate(chain, hierarchical_groups(chain.stations()), bare);
    CHECK(rep.degenerate_rows == std::vector<std::size_t>{0});
    CHECK(rep.outlets == 1);
}

TEST_CASE("graph properties on random forests") {
    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        FlowGraph g = random_forest(2 + rng.below(40), rng);
        const std::size_t n = g.size();
        // Topological order puts each edge's source first.
        std::vector<std::size_t> pos(n);
        for (std::size_t k = 0; k < n; ++k) pos[g.topological_order()[k]] = k;
        for (auto [u, d] : g.edges()) CHECK(pos[u] < pos[d]);

        CausalAdjacency a = causal_adjacency(g);
        num::Tensor raw = aggregation_matrix(a, false, false);
        num::Tensor norm = aggregation_matrix(a, true, true);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(raw.at(i, j) == a.at(j, i));
                sum += norm.at(i, j);
            }
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
        // Closure of an outlet is exactly its tree, found here by walking down.
        for (std::size_t outlet : g.outlets()) {
            std::set<std::size_t> tree;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t cur = i;
                while (auto d = g.downstream(cur)) cur = *d;
                if (cur == outlet) tree.insert(i);
            }
            CHECK(upstream_closure(g, {outlet}) == tree);
        }
    }
}
