#include "cadrec/pose_graph.hpp"

#include "cadrec/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <set>

using namespace cadrec;

namespace {

OrientedPointCloud cloud_of(std::initializer_list<Vec3> pts) {
    OrientedPointCloud c;
    for (const Vec3& p : pts) c.push_back(p, Vec3(0, 0, 1));
    return c;
}

// camera clouds as random balls in a shared box, so coverage overlaps
std::vector<std::pair<std::uint32_t, OrientedPointCloud>> random_layout(Rng& rng,
                                                                        std::size_t n_cams,
                                                                        std::size_t pts_per_cam) {
    std::vector<std::pair<std::uint32_t, OrientedPointCloud>> segments;
    for (std::uint32_t cam = 0; cam < n_cams; ++cam) {
        const Vec3 center(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const double radius = rng.uniform(0.5, 1.2);
        OrientedPointCloud cloud;
        for (std::size_t i = 0; i < pts_per_cam; ++i)
            cloud.push_back(center + rng.unit_vector() * radius * std::cbrt(rng.uniform()),
                            Vec3(0, 0, 1));
        segments.emplace_back(cam, cloud);
    }
    return segments;
}

bool bfs_connected(std::size_t n, const std::vector<SelectedEdge>& edges) {
    if (n == 0) return true;
    std::vector<std::vector<std::uint32_t>> adj(n);
    for (const auto& e : edges) {
        adj[e.i].push_back(e.j);
        adj[e.j].push_back(e.i);
    }
    std::vector<bool> seen(n, false);
    std::vector<std::uint32_t> stack{0};
    seen[0] = true;
    std::size_t visited = 1;
    while (!stack.empty()) {
        const std::uint32_t u = stack.back();
        stack.pop_back();
        for (std::uint32_t v : adj[u])
            if (!seen[v]) {
                seen[v] = true;
                ++visited;
                stack.push_back(v);
            }
    }
    return visited == n;
}

std::vector<std::size_t> bfs_component_sizes(std::size_t n,
                                             const std::vector<std::pair<int, int>>& unions) {
    std::vector<std::vector<int>> adj(n);
    for (auto [a, b] : unions) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> sizes;
    for (std::size_t s = 0; s < n; ++s) {
        if (seen[s]) continue;
        std::size_t size = 0;
        std::vector<int> stack{static_cast<int>(s)};
        seen[s] = true;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            ++size;
            for (int v : adj[u])
                if (!seen[v]) {
                    seen[v] = true;
                    stack.push_back(v);
                }
        }
        sizes.push_back(size);
    }
    std::sort(sizes.rbegin(), sizes.rend());
    return sizes;
}

}  // namespace

TEST_CASE("union find") {
    UnionFind uf(5);
    REQUIRE(uf.component_count() == 5);
    REQUIRE(uf.unite(0, 1));
    REQUIRE(uf.component_count() == 4);
    REQUIRE_FALSE(uf.unite(1, 0));  // already joined
    REQUIRE(uf.component_count() == 4);
    REQUIRE(uf.find(0) == uf.find(1));
    REQUIRE(uf.find(2) != uf.find(0));
    uf.unite(2, 3);
    uf.unite(3, 4);
    uf.unite(0, 4);
    REQUIRE(uf.connected());

    SECTION("matches BFS component sizes on random sequences") {
        Rng rng(3);
        for (int t = 0; t < 50; ++t) {
            const std::size_t n = 2 + rng.below(30);
            UnionFind u(n);
            std::vector<std::pair<int, int>> unions;
            const std::size_t k = rng.below(2 * n);
            for (std::size_t i = 0; i < k; ++i) {
                const int a = static_cast<int>(rng.below(n));
                const int b = static_cast<int>(rng.below(n));
                if (a == b) continue;
                unions.emplace_back(a, b);
                u.unite(a, b);
            }
            const auto sizes = bfs_component_sizes(n, unions);
            REQUIRE(u.component_count() == sizes.size());
            REQUIRE(largest_component(u).size() == sizes.front());
        }
    }
}

TEST_CASE("largest component tie breaking") {
    UnionFind uf(5);
    uf.unite(0, 1);
    uf.unite(1, 2);
    uf.unite(3, 4);
    REQUIRE(largest_component(uf) == std::vector<std::uint32_t>{0, 1, 2});

    UnionFind singles(4);
    REQUIRE(largest_component(singles) == std::vector<std::uint32_t>{0});
}

TEST_CASE("voxel camera index") {
    SECTION("one camera, one point") {
        const auto index =
            build_voxel_index({{0u, cloud_of({Vec3(0.1, 0.1, 0.1)})}}, 1.0);
        const auto* cams = index.cell(Vec3(0.1, 0.1, 0.1));
        REQUIRE(cams != nullptr);
        REQUIRE(*cams == std::vector<std::uint32_t>{0});
    }
    SECTION("two cameras on the same point share the cell") {
        const auto index = build_voxel_index({{0u, cloud_of({Vec3(0.1, 0.1, 0.1)})},
                                              {1u, cloud_of({Vec3(0.2, 0.2, 0.2)})}},
                                             1.0);
        const auto* cams = index.cell(Vec3(0.15, 0.15, 0.15));
        REQUIRE(cams != nullptr);
        REQUIRE(*cams == std::vector<std::uint32_t>{0, 1});
    }
    SECTION("duplicate points insert the id once") {
        const auto index = build_voxel_index(
            {{0u, cloud_of({Vec3(0.1, 0.1, 0.1), Vec3(0.3, 0.3, 0.3)})}}, 1.0);
        REQUIRE(index.cell(Vec3(0.1, 0.1, 0.1))->size() == 1);
    }
}

TEST_CASE("hpo enumeration") {
    // engineered cells: {0,1}, {1,2}, {0,1} along x
    std::vector<std::pair<std::uint32_t, OrientedPointCloud>> segments;
    segments.emplace_back(0u, cloud_of({Vec3(0.5, 0, 0), Vec3(2.5, 0, 0)}));
    segments.emplace_back(1u, cloud_of({Vec3(0.5, 0, 0), Vec3(1.5, 0, 0), Vec3(2.5, 0, 0)}));
    segments.emplace_back(2u, cloud_of({Vec3(1.5, 0, 0)}));
    const auto index = build_voxel_index(segments, 1.0);
    const Hpo hpo = compute_hpo(index);
    REQUIRE(hpo.overlap(0, 1) == 2);
    REQUIRE(hpo.overlap(1, 2) == 1);
    REQUIRE(hpo.overlap(0, 2) == 0);
    REQUIRE(hpo.counts.size() == 2);

    SECTION("singleton cells produce an empty histogram") {
        const auto lone = build_voxel_index({{0u, cloud_of({Vec3(0.5, 0, 0)})},
                                             {1u, cloud_of({Vec3(5.5, 0, 0)})}},
                                            1.0);
        REQUIRE(compute_hpo(lone).counts.empty());
    }
    SECTION("a triple cell yields all three pairs") {
        const auto triple = build_voxel_index({{0u, cloud_of({Vec3(0.5, 0, 0)})},
                                               {1u, cloud_of({Vec3(0.5, 0, 0)})},
                                               {2u, cloud_of({Vec3(0.5, 0, 0)})}},
                                              1.0);
        const Hpo h = compute_hpo(triple);
        REQUIRE(h.overlap(0, 1) == 1);
        REQUIRE(h.overlap(0, 2) == 1);
        REQUIRE(h.overlap(1, 2) == 1);
    }
}

TEST_CASE("select_edges hysteresis") {
    SECTION("hand trace") {
        Hpo hpo;
        hpo.counts[Hpo::key(0, 1)] = 10;
        hpo.counts[Hpo::key(1, 2)] = 9;
        hpo.counts[Hpo::key(0, 2)] = 1;
        const EdgeSelection sel = select_edges(hpo, 3, 2.0, 8.0);
        REQUIRE(sel.connected);
        REQUIRE(sel.edges.size() == 2);
        REQUIRE(sel.edges[0].overlap == 10);
        REQUIRE(sel.edges[1].overlap == 9);
        for (const auto& e : sel.edges) REQUIRE_FALSE((e.i == 0 && e.j == 2));
    }
    SECTION("isolated camera leaves the graph disconnected") {
        Hpo hpo;
        hpo.counts[Hpo::key(0, 1)] = 10;
        const EdgeSelection sel = select_edges(hpo, 3, 2.0, 8.0);
        REQUIRE_FALSE(sel.connected);
        REQUIRE(sel.edges.size() == 1);
    }
    SECTION("alpha_h = 0 equals the sorted-prefix oracle") {
        Rng rng(7);
        for (int t = 0; t < 50; ++t) {
            const std::size_t n = 3 + rng.below(8);
            Hpo hpo;
            for (std::uint32_t i = 0; i < n; ++i)
                for (std::uint32_t j = i + 1; j < n; ++j)
                    if (rng.uniform() < 0.7)
                        hpo.counts[Hpo::key(i, j)] = 1 + static_cast<std::uint32_t>(rng.below(50));
            const double alpha_l = 2.0;
            const EdgeSelection sel = select_edges(hpo, n, alpha_l, 0.0);

            // oracle: sorted insertion, stop right after connecting
            std::vector<SelectedEdge> pairs;
            for (const auto& [k, c] : hpo.counts)
                if (c >= alpha_l) {
                    const auto [i, j] = Hpo::unpack(k);
                    pairs.push_back({i, j, c});
                }
            std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
                if (a.overlap != b.overlap) return a.overlap > b.overlap;
                return a.i != b.i ? a.i < b.i : a.j < b.j;
            });
            std::vector<SelectedEdge> expect;
            for (const auto& p : pairs) {
                expect.push_back(p);
                if (bfs_connected(n, expect)) break;
            }
            REQUIRE(sel.edges.size() == expect.size());
            for (std::size_t k = 0; k < expect.size(); ++k) {
                REQUIRE(sel.edges[k].i == expect[k].i);
                REQUIRE(sel.edges[k].j == expect[k].j);
            }
            REQUIRE(sel.connected == bfs_connected(n, sel.edges));
        }
    }
    SECTION("properties on random histograms") {
        Rng rng(11);
        for (int t = 0; t < 100; ++t) {
            const std::size_t n = 3 + rng.below(10);
            Hpo hpo;
            for (std::uint32_t i = 0; i < n; ++i)
                for (std::uint32_t j = i + 1; j < n; ++j)
                    if (rng.uniform() < 0.6)
                        hpo.counts[Hpo::key(i, j)] = 1 + static_cast<std::uint32_t>(rng.below(40));
            const double alpha_l = 1.0 + static_cast<double>(rng.below(10));
            const double alpha_h = alpha_l + static_cast<double>(rng.below(20));
            const EdgeSelection sel = select_edges(hpo, n, alpha_l, alpha_h);

            // never an edge below alpha_l
            for (const auto& e : sel.edges) REQUIRE(static_cast<double>(e.overlap) >= alpha_l);
            // connectivity flag agrees with BFS
            REQUIRE(sel.connected == bfs_connected(n, sel.edges));
            // minimal prefix: when phase 2 connected the graph, dropping
            // the last edge disconnects it
            if (sel.connected && !sel.edges.empty() &&
                static_cast<double>(sel.edges.back().overlap) <= alpha_h) {
                auto trimmed = sel.edges;
                trimmed.pop_back();
                REQUIRE_FALSE(bfs_connected(n, trimmed));
            }
        }
    }
}

TEST_CASE("incremental builder equals batch build") {
    Rng rng(13);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n_cams = 3 + rng.below(8);
        auto segments = random_layout(rng, n_cams, 150);

        GraphParams params;
        params.voxel_size = 0.4;
        params.alpha_l = 2.0;
        params.alpha_h = 10.0;
        params.relative_thresholds = false;

        // batch
        const auto index = build_voxel_index(segments, params.voxel_size);
        const Hpo hpo = compute_hpo(index);
        const EdgeSelection batch =
            select_edges(hpo, n_cams, params.alpha_l, params.alpha_h);

        // incremental, shuffled insertion order
        std::vector<std::size_t> order(segments.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);
        PoseGraphBuilder builder(params);
        for (std::size_t k : order)
            builder.insert_view(segments[k].first, segments[k].second);

        // HPO must match exactly
        REQUIRE(builder.hpo().counts.size() == hpo.counts.size());
        for (const auto& [key, count] : hpo.counts) {
            auto it = builder.hpo().counts.find(key);
            REQUIRE(it != builder.hpo().counts.end());
            REQUIRE(it->second == count);
        }
        // and so must the selected edges
        REQUIRE(builder.selection().edges.size() == batch.edges.size());
        for (std::size_t k = 0; k < batch.edges.size(); ++k) {
            REQUIRE(builder.selection().edges[k].i == batch.edges[k].i);
            REQUIRE(builder.selection().edges[k].j == batch.edges[k].j);
            REQUIRE(builder.selection().edges[k].overlap == batch.edges[k].overlap);
        }
        REQUIRE(builder.selection().connected == batch.connected);
    }
}

TEST_CASE("insert_view specifics") {
    GraphParams params;
    params.voxel_size = 1.0;
    params.alpha_l = 1.0;
    params.alpha_h = 3.0;
    params.relative_thresholds = false;

    SECTION("duplicate camera rejected") {
        PoseGraphBuilder builder(params);
        builder.insert_view(0, cloud_of({Vec3(0.5, 0, 0)}));
        try {
            builder.insert_view(0, cloud_of({Vec3(0.5, 0, 0)}));
            FAIL("expected DuplicateCamera");
        } catch (const Error& e) {
            REQUIRE(e.code == ErrorCode::DuplicateCamera);
        }
    }
    SECTION("zero-overlap view adds no edges") {
        PoseGraphBuilder builder(params);
        builder.insert_view(0, cloud_of({Vec3(0.5, 0, 0)}));
        const auto res = builder.insert_view(1, cloud_of({Vec3(10.5, 0, 0)}));
        REQUIRE(res.new_edges.empty());
        REQUIRE_FALSE(res.connected);
    }
    SECTION("bridging view connects two components") {
        PoseGraphBuilder builder(params);
        builder.insert_view(0, cloud_of({Vec3(0.5, 0, 0)}));
        builder.insert_view(1, cloud_of({Vec3(10.5, 0, 0)}));
        REQUIRE_FALSE(builder.selection().connected);
        const auto res =
            builder.insert_view(2, cloud_of({Vec3(0.5, 0, 0), Vec3(10.5, 0, 0)}));
        REQUIRE(res.connected);
        REQUIRE(res.new_edges.size() == 2);
    }
}

TEST_CASE("coverage feedback") {
    OrientedPointCloud samples;
    for (int i = 0; i < 10; ++i) samples.push_back(Vec3(i + 0.5, 0.5, 0.5), Vec3(0, 0, 1));

    SECTION("full coverage") {
        VoxelCameraIndex index(1.0);
        for (const Vec3& p : samples.points) index.insert(0, p);
        const CoverageFeedback fb = coverage_feedback(index, samples);
        REQUIRE(fb.fraction == 1.0);
        REQUIRE(fb.uncovered.empty());
    }
    SECTION("empty index covers nothing") {
        const CoverageFeedback fb = coverage_feedback(VoxelCameraIndex(1.0), samples);
        REQUIRE(fb.fraction == 0.0);
        REQUIRE(fb.uncovered.size() == samples.size());
    }
    SECTION("half coverage") {
        VoxelCameraIndex index(1.0);
        for (int i = 0; i < 5; ++i) index.insert(0, samples.points[i]);
        const CoverageFeedback fb = coverage_feedback(index, samples);
        REQUIRE(fb.fraction == Catch::Approx(0.5));
        REQUIRE(fb.uncovered == std::vector<std::uint32_t>{5, 6, 7, 8, 9});
    }
}

TEST_CASE("clutter metric") {
    REQUIRE(clutter_metric(1.0, 0.0, 2.0).value == Catch::Approx(0.5));
    REQUIRE(clutter_metric(1.0, 1.0, 2.0).value == Catch::Approx(1.0));
    const ClutterMetric clamped = clutter_metric(5.0, 0.0, 2.0);
    REQUIRE(clamped.value == 0.0);
    REQUIRE(clamped.clamped);
    REQUIRE_THROWS_AS(clutter_metric(1.0, 0.0, 0.0), Error);
}
