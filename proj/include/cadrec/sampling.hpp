#pragma once

#include "cadrec/geometry.hpp"
#include "cadrec/kdtree.hpp"
#include "cadrec/voxel_grid.hpp"

#include <Eigen/Eigenvalues>

#include <unordered_map>

namespace cadrec {

// Per-point PCA normals from the k nearest neighbors, flipped so that
// n . (viewpoint - p) >= 0. Neighborhoods of rank < 2 get an arbitrary
// unit normal and are flagged in `degenerate` when provided.
inline OrientedPointCloud estimate_normals(const std::vector<Vec3>& points, int k,
                                           const Vec3& viewpoint,
                                           std::vector<std::uint8_t>* degenerate = nullptr) {
    if (k < 3) throw Error(ErrorCode::InvalidConfig, "estimate_normals: k must be >= 3");
    if (points.size() < static_cast<std::size_t>(k))
        throw Error(ErrorCode::EmptyCloud, "estimate_normals: fewer points than k");

    KdIndex index(points);
    OrientedPointCloud out;
    out.points = points;
    out.normals.resize(points.size());
    if (degenerate) degenerate->assign(points.size(), 0);

    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto nb = index.knn(points[i], static_cast<std::size_t>(k));
        Vec3 mean = Vec3::Zero();
        for (const auto& h : nb) mean += points[h.index];
        mean /= static_cast<double>(nb.size());
        Mat3 cov = Mat3::Zero();
        for (const auto& h : nb) {
            const Vec3 d = points[h.index] - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        const Vec3 evals = eig.eigenvalues();  // ascending
        Vec3 n = eig.eigenvectors().col(0);
        // rank < 2: the two smallest eigenvalues both vanish
        if (evals[1] <= 1e-12 * std::max(evals[2], 1e-300)) {
            n = Vec3(0, 0, 1);
            if (degenerate) (*degenerate)[i] = 1;
        }
        if (n.dot(viewpoint - points[i]) < 0.0) n = -n;
        out.normals[i] = n;
    }
    return out;
}

// Greedy poisson-disk thinning over a voxel hash. Deterministic in input
// order: a point survives iff it is at least min_dist from every earlier
// survivor, so every input point ends up within min_dist of a survivor.
inline std::vector<std::uint32_t> sample_uniform_indices(const std::vector<Vec3>& points,
                                                         double min_dist) {
    if (min_dist <= 0.0) throw Error(ErrorCode::InvalidConfig, "sample_uniform: min_dist <= 0");
    std::unordered_map<VoxelCoord, std::vector<std::uint32_t>, VoxelCoordHash> grid;
    grid.reserve(points.size());
    const Vec3 origin = Vec3::Zero();
    const double d2 = min_dist * min_dist;
    std::vector<std::uint32_t> kept;
    for (std::uint32_t i = 0; i < points.size(); ++i) {
        const VoxelCoord c = voxel_coord(points[i], origin, min_dist);
        bool blocked = false;
        for (std::int64_t dx = -1; dx <= 1 && !blocked; ++dx)
            for (std::int64_t dy = -1; dy <= 1 && !blocked; ++dy)
                for (std::int64_t dz = -1; dz <= 1 && !blocked; ++dz) {
                    auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == grid.end()) continue;
                    for (std::uint32_t j : it->second)
                        if ((points[i] - points[j]).squaredNorm() < d2) {
                            blocked = true;
                            break;
                        }
                }
        if (!blocked) {
            kept.push_back(i);
            grid[c].push_back(i);
        }
    }
    return kept;
}

inline OrientedPointCloud sample_uniform(const OrientedPointCloud& cloud, double min_dist) {
    const auto kept = sample_uniform_indices(cloud.points, min_dist);
    OrientedPointCloud out;
    out.points.reserve(kept.size());
    out.normals.reserve(kept.size());
    for (std::uint32_t i : kept) out.push_back(cloud.points[i], cloud.normals[i]);
    return out;
}

// Deterministic barycentric-lattice surface sampling: each face is covered
// by a triangular lattice with spacing <= step; normals are face normals.
inline OrientedPointCloud sample_mesh_surface(const TriMesh& mesh, double step) {
    if (mesh.empty() || mesh.faces.empty())
        throw Error(ErrorCode::EmptyMesh, "sample_mesh_surface: empty mesh");
    if (step <= 0.0) throw Error(ErrorCode::InvalidConfig, "sample_mesh_surface: step <= 0");
    OrientedPointCloud out;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& tri = mesh.faces[f];
        const Vec3& a = mesh.vertices[tri[0]];
        const Vec3& b = mesh.vertices[tri[1]];
        const Vec3& c = mesh.vertices[tri[2]];
        const Vec3 n = face_normal(mesh, f);
        const double longest =
            std::max({(b - a).norm(), (c - b).norm(), (a - c).norm()});
        const int div = std::max(1, static_cast<int>(std::ceil(longest / step)));
        for (int i = 0; i <= div; ++i) {
            for (int j = 0; j <= div - i; ++j) {
                const int k = div - i - j;
                const Vec3 p = (a * i + b * j + c * k) / static_cast<double>(div);
                out.push_back(p, n);
            }
        }
    }
    return out;
}

// Surface sampling at a target spacing: dense lattice then greedy thinning.
inline OrientedPointCloud sample_mesh_uniform(const TriMesh& mesh, double min_dist) {
    const OrientedPointCloud dense = sample_mesh_surface(mesh, min_dist * 0.5);
    return sample_uniform(dense, min_dist);
}

}  // namespace cadrec
