#pragma once

#include "cadrec/geometry.hpp"
#include "cadrec/voxel_grid.hpp"

#include <map>
#include <unordered_map>
#include <unordered_set>

namespace cadrec {

// Disjoint sets over camera ids with union by rank and path compression.
class UnionFind {
public:
    explicit UnionFind(std::size_t n = 0) { reset(n); }

    void reset(std::size_t n) {
        parent_.resize(n);
        rank_.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) parent_[i] = static_cast<std::uint32_t>(i);
        components_ = n;
    }

    std::size_t size() const { return parent_.size(); }
    std::size_t component_count() const { return components_; }

    std::uint32_t find(std::uint32_t x) const {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    bool unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (rank_[a] < rank_[b]) std::swap(a, b);
        parent_[b] = a;
        if (rank_[a] == rank_[b]) ++rank_[a];
        --components_;
        return true;
    }

    bool connected() const { return components_ <= 1; }

private:
    mutable std::vector<std::uint32_t> parent_;
    std::vector<std::uint8_t> rank_;
    std::size_t components_ = 0;
};

// Largest component's member ids; equal sizes break toward the component
// containing the smallest id.
inline std::vector<std::uint32_t> largest_component(const UnionFind& uf) {
    std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> groups;
    for (std::uint32_t i = 0; i < uf.size(); ++i) groups[uf.find(i)].push_back(i);
    const std::vector<std::uint32_t>* best = nullptr;
    for (const auto& [root, members] : groups) {
        if (!best || members.size() > best->size() ||
            (members.size() == best->size() && members.front() < best->front()))
            best = &members;
    }
    return best ? *best : std::vector<std::uint32_t>{};
}

// Sparse voxel index over model space: each touched cell keeps the set of
// cameras that observed a point inside it.
class VoxelCameraIndex {
public:
    VoxelCameraIndex() = default;
    explicit VoxelCameraIndex(double voxel_size, const Vec3& origin = Vec3::Zero())
        : voxel_size_(voxel_size), origin_(origin) {}

    double voxel_size() const { return voxel_size_; }

    // Inserts one model-frame point of a camera; the id is added at most
    // once per cell. Returns true when the cell gained a new camera.
    bool insert(std::uint32_t camera, const Vec3& p) {
        auto& cams = cells_[voxel_coord(p, origin_, voxel_size_)];
        for (std::uint32_t c : cams)
            if (c == camera) return false;
        cams.push_back(camera);
        return true;
    }

    const std::vector<std::uint32_t>* cell(const Vec3& p) const {
        auto it = cells_.find(voxel_coord(p, origin_, voxel_size_));
        return it == cells_.end() ? nullptr : &it->second;
    }

    const std::unordered_map<VoxelCoord, std::vector<std::uint32_t>, VoxelCoordHash>& cells()
        const {
        return cells_;
    }

    // Number of cells each camera covers.
    std::unordered_map<std::uint32_t, std::size_t> coverage_counts() const {
        std::unordered_map<std::uint32_t, std::size_t> counts;
        for (const auto& [coord, cams] : cells_)
            for (std::uint32_t c : cams) ++counts[c];
        return counts;
    }

private:
    double voxel_size_ = 1.0;
    Vec3 origin_ = Vec3::Zero();
    std::unordered_map<VoxelCoord, std::vector<std::uint32_t>, VoxelCoordHash> cells_;
};

inline VoxelCameraIndex build_voxel_index(
    const std::vector<std::pair<std::uint32_t, OrientedPointCloud>>& segments,
    double voxel_size) {
    if (voxel_size <= 0.0) throw Error(ErrorCode::InvalidConfig, "voxel_size must be > 0");
    VoxelCameraIndex index(voxel_size);
    for (const auto& [camera, cloud] : segments)
        for (const Vec3& p : cloud.points) index.insert(camera, p);
    return index;
}

// Histogram of pairwise overlaps: unordered camera pair -> number of
// voxels both observe.
struct Hpo {
    std::unordered_map<std::uint64_t, std::uint32_t> counts;

    static std::uint64_t key(std::uint32_t i, std::uint32_t j) {
        if (i > j) std::swap(i, j);
        return (static_cast<std::uint64_t>(i) << 32) | j;
    }
    static std::pair<std::uint32_t, std::uint32_t> unpack(std::uint64_t k) {
        return {static_cast<std::uint32_t>(k >> 32), static_cast<std::uint32_t>(k & 0xffffffffu)};
    }

    void increment(std::uint32_t i, std::uint32_t j) { ++counts[key(i, j)]; }

    std::uint32_t overlap(std::uint32_t i, std::uint32_t j) const {
        auto it = counts.find(key(i, j));
        return it == counts.end() ? 0 : it->second;
    }
};

inline Hpo compute_hpo(const VoxelCameraIndex& index) {
    Hpo hpo;
    for (const auto& [coord, cams] : index.cells())
        for (std::size_t a = 0; a < cams.size(); ++a)
            for (std::size_t b = a + 1; b < cams.size(); ++b) hpo.increment(cams[a], cams[b]);
    return hpo;
}

struct SelectedEdge {
    std::uint32_t i = 0, j = 0;
    std::uint32_t overlap = 0;
};

struct EdgeSelection {
    std::vector<SelectedEdge> edges;
    bool connected = false;
    UnionFind uf;
};

// Hysteresis edge selection. Pairs below alpha_l are discarded. Pairs
// above alpha_h are linked immediately; if that leaves the graph
// disconnected, the remaining pairs are inserted in decreasing-overlap
// order, stopping right after the edge that connects it. alpha_h == 0
// disables the immediate tier, so selection is the pure sorted prefix.
inline EdgeSelection select_edges(const Hpo& hpo, std::size_t n_cameras, double alpha_l,
                                  double alpha_h) {
    EdgeSelection sel;
    sel.uf.reset(n_cameras);

    std::vector<SelectedEdge> pairs;
    pairs.reserve(hpo.counts.size());
    for (const auto& [k, count] : hpo.counts) {
        if (static_cast<double>(count) < alpha_l) continue;
        const auto [i, j] = Hpo::unpack(k);
        pairs.push_back({i, j, count});
    }
    std::sort(pairs.begin(), pairs.end(), [](const SelectedEdge& a, const SelectedEdge& b) {
        if (a.overlap != b.overlap) return a.overlap > b.overlap;
        return a.i != b.i ? a.i < b.i : a.j < b.j;
    });

    std::size_t pos = 0;
    if (alpha_h > 0.0) {
        for (; pos < pairs.size() && static_cast<double>(pairs[pos].overlap) > alpha_h; ++pos) {
            sel.edges.push_back(pairs[pos]);
            sel.uf.unite(pairs[pos].i, pairs[pos].j);
        }
    }
    if (!sel.uf.connected()) {
        for (; pos < pairs.size(); ++pos) {
            sel.edges.push_back(pairs[pos]);
            sel.uf.unite(pairs[pos].i, pairs[pos].j);
            if (sel.uf.connected()) {
                ++pos;
                break;
            }
        }
    }
    sel.connected = sel.uf.connected();
    return sel;
}

struct GraphNode {
    std::uint32_t id = 0;
    Pose pose;  // camera/local frame -> model frame
};

struct GraphEdge {
    std::uint32_t i = 0, j = 0;
    std::uint32_t overlap = 0;
    Pose relative;  // = pose_i^-1 * pose_j, maps j-local into i-local
};

struct PoseGraph {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;

    std::size_t node_index(std::uint32_t id) const {
        for (std::size_t k = 0; k < nodes.size(); ++k)
            if (nodes[k].id == id) return k;
        throw Error(ErrorCode::InvalidConfig, "pose graph: unknown node id");
    }
};

inline PoseGraph make_pose_graph(const std::vector<GraphNode>& nodes,
                                 const std::vector<SelectedEdge>& edges) {
    PoseGraph g;
    g.nodes = nodes;
    for (const SelectedEdge& e : edges) {
        const Pose& pi = g.nodes[g.node_index(e.i)].pose;
        const Pose& pj = g.nodes[g.node_index(e.j)].pose;
        g.edges.push_back({e.i, e.j, e.overlap, pi.inverse() * pj});
    }
    return g;
}

struct GraphParams {
    double voxel_size = 0.0;   // required by the builder
    double alpha_l = 0.05;     // as fraction of min per-camera coverage...
    double alpha_h = 0.3;
    bool relative_thresholds = true;  // ...unless this is off (absolute counts)
};

// Incremental pose-graph construction. Views stream in one at a time;
// each insertion updates the voxel index and the overlap histogram in
// O(points of the view) and re-runs hysteresis selection on the compact
// pair histogram, so the final edge set always equals a batch build.
class PoseGraphBuilder {
public:
    explicit PoseGraphBuilder(const GraphParams& params) : params_(params) {
        if (params.voxel_size <= 0.0)
            throw Error(ErrorCode::InvalidConfig, "PoseGraphBuilder: voxel_size must be > 0");
        index_ = VoxelCameraIndex(params.voxel_size);
    }

    struct InsertResult {
        std::vector<SelectedEdge> new_edges;
        bool connected = false;
    };

    InsertResult insert_view(std::uint32_t camera, const OrientedPointCloud& model_frame_cloud) {
        if (cameras_.count(camera))
            throw Error(ErrorCode::DuplicateCamera,
                        "insert_view: camera " + std::to_string(camera) + " already present");
        cameras_.insert(camera);
        max_camera_ = std::max(max_camera_, camera);
        auto& covered = coverage_[camera];
        for (const Vec3& p : model_frame_cloud.points) {
            if (index_.insert(camera, p)) {
                ++covered;
                // the cell gained this camera: new overlaps with the
                // cameras already there
                for (std::uint32_t other : *index_.cell(p))
                    if (other != camera) hpo_.increment(camera, other);
            }
        }
        const auto before = selection_.edges;
        reselect();
        InsertResult result;
        result.connected = selection_.connected;
        for (const SelectedEdge& e : selection_.edges) {
            bool had = false;
            for (const SelectedEdge& old : before)
                if (old.i == e.i && old.j == e.j) {
                    had = true;
                    break;
                }
            if (!had) result.new_edges.push_back(e);
        }
        return result;
    }

    const EdgeSelection& selection() const { return selection_; }
    const VoxelCameraIndex& index() const { return index_; }
    const Hpo& hpo() const { return hpo_; }
    std::size_t camera_count() const { return cameras_.size(); }

    std::pair<double, double> absolute_thresholds() const {
        if (!params_.relative_thresholds) return {params_.alpha_l, params_.alpha_h};
        std::size_t min_cov = 0;
        bool first = true;
        for (const auto& [cam, count] : coverage_) {
            if (first || count < min_cov) min_cov = count;
            first = false;
        }
        const double base = static_cast<double>(min_cov);
        return {params_.alpha_l * base, params_.alpha_h * base};
    }

private:
    void reselect() {
        const auto [al, ah] = absolute_thresholds();
        selection_ = select_edges(hpo_, static_cast<std::size_t>(max_camera_) + 1, al, ah);
        // report connectivity over the cameras actually inserted; ids not
        // seen yet would otherwise count as isolated singletons
        bool connected = !cameras_.empty();
        bool first = true;
        std::uint32_t root = 0;
        for (std::uint32_t c : cameras_) {
            const std::uint32_t r = selection_.uf.find(c);
            if (first) {
                root = r;
                first = false;
            } else if (r != root) {
                connected = false;
                break;
            }
        }
        selection_.connected = connected;
    }

    GraphParams params_;
    VoxelCameraIndex index_;
    Hpo hpo_;
    EdgeSelection selection_;
    std::unordered_set<std::uint32_t> cameras_;
    std::unordered_map<std::uint32_t, std::size_t> coverage_;
    std::uint32_t max_camera_ = 0;
};

struct CoverageFeedback {
    double fraction = 0.0;
    std::vector<std::uint32_t> uncovered;  // model sample indices
};

// A model sample counts as scanned when some camera observed its voxel.
inline CoverageFeedback coverage_feedback(const VoxelCameraIndex& index,
                                          const OrientedPointCloud& model_samples) {
    CoverageFeedback fb;
    if (model_samples.empty()) return fb;
    std::size_t covered = 0;
    for (std::uint32_t i = 0; i < model_samples.size(); ++i) {
        const auto* cams = index.cell(model_samples.points[i]);
        if (cams && !cams->empty())
            ++covered;
        else
            fb.uncovered.push_back(i);
    }
    fb.fraction = static_cast<double>(covered) / static_cast<double>(model_samples.size());
    return fb;
}

struct ClutterMetric {
    double value = 0.0;
    bool clamped = false;
};

inline ClutterMetric clutter_metric(double model_area, double occlusion, double scene_area) {
    if (scene_area <= 0.0)
        throw Error(ErrorCode::NonPositiveSceneArea, "clutter_metric: scene_area <= 0");
    ClutterMetric m;
    m.value = 1.0 - model_area * (1.0 - occlusion) / scene_area;
    if (m.value < 0.0 || m.value > 1.0) {
        m.clamped = true;
        m.value = std::clamp(m.value, 0.0, 1.0);
    }
    return m;
}

}  // namespace cadrec
