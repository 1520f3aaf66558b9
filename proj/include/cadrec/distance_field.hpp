#pragma once

#include "cadrec/geometry.hpp"
#include "cadrec/kdtree.hpp"
#include "cadrec/voxel_grid.hpp"

namespace cadrec {

// Distance transform over the model bounding box (padded 10%): each voxel
// stores the nearest sampled model point, propagated Danielsson-style in
// two raster sweeps. Queries return the exact distance to the recorded
// candidate, so the field is accurate near the surface and monotone far
// from it.
class DistanceField {
public:
    struct Cell {
        float dist = std::numeric_limits<float>::infinity();
        std::uint32_t nearest = 0xffffffffu;
    };

    DistanceField() = default;

    DistanceField(const std::vector<Vec3>& samples, double voxel_size) : samples_(samples) {
        if (samples.empty())
            throw Error(ErrorCode::EmptyModel, "DistanceField: no samples");
        Vec3 lo = samples[0], hi = samples[0];
        for (const Vec3& p : samples) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        const Vec3 extent = hi - lo;
        const Vec3 pad = 0.1 * extent + Vec3::Constant(2.0 * voxel_size);
        lo -= pad;
        hi += pad;
        std::array<int, 3> dims;
        for (int k = 0; k < 3; ++k)
            dims[k] = std::max(1, static_cast<int>(std::ceil((hi[k] - lo[k]) / voxel_size)));
        grid_ = VoxelGrid<Cell>(lo, voxel_size, dims);

        for (std::uint32_t i = 0; i < samples.size(); ++i) {
            const auto v = grid_.voxel_of(samples[i]);
            if (!v) continue;
            consider(*v, i);
        }
        const std::array<int, 3> d = grid_.dims();
        // forward and backward raster sweeps over the 26-neighborhood
        for (int pass = 0; pass < 2; ++pass) {
            sweep(d, /*forward=*/true);
            sweep(d, /*forward=*/false);
        }
    }

    const VoxelGrid<Cell>& grid() const { return grid_; }

    struct Lookup {
        double dist = std::numeric_limits<double>::infinity();
        std::uint32_t nearest = 0xffffffffu;
    };

    // Nearest-voxel lookup, refined over the 3x3x3 neighborhood; distance
    // is measured from the query point to the recorded sample, so it
    // stays continuous across cells.
    Lookup query(const Vec3& p) const {
        const auto v = grid_.clamped_voxel_of(p);
        const auto& d = grid_.dims();
        Lookup best;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int x = v[0] + dx, y = v[1] + dy, z = v[2] + dz;
                    if (x < 0 || y < 0 || z < 0 || x >= d[0] || y >= d[1] || z >= d[2])
                        continue;
                    const Cell& c = grid_.at({x, y, z});
                    if (c.nearest == 0xffffffffu) continue;
                    const double dist = (p - samples_[c.nearest]).norm();
                    if (dist < best.dist ||
                        (dist == best.dist && c.nearest < best.nearest)) {
                        best.dist = dist;
                        best.nearest = c.nearest;
                    }
                }
        return best;
    }

    double distance(const Vec3& p) const { return query(p).dist; }

private:
    void consider(const std::array<int, 3>& v, std::uint32_t candidate) {
        Cell& cell = grid_.at(v);
        const double d = (grid_.center(v) - samples_[candidate]).norm();
        if (d < cell.dist) {
            cell.dist = static_cast<float>(d);
            cell.nearest = candidate;
        }
    }

    void sweep(const std::array<int, 3>& d, bool forward) {
        auto visit = [&](int x, int y, int z) {
            const std::array<int, 3> v{x, y, z};
            const int dir = forward ? -1 : 1;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0 && dz == 0) continue;
                        // only pull from voxels already visited this sweep
                        if ((dz != 0 ? dz : (dy != 0 ? dy : dx)) != dir) continue;
                        const int nx = x + dx, ny = y + dy, nz = z + dz;
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= d[0] || ny >= d[1] ||
                            nz >= d[2])
                            continue;
                        const Cell& nb = grid_.at({nx, ny, nz});
                        if (nb.nearest != 0xffffffffu) consider(v, nb.nearest);
                    }
        };
        if (forward) {
            for (int z = 0; z < d[2]; ++z)
                for (int y = 0; y < d[1]; ++y)
                    for (int x = 0; x < d[0]; ++x) visit(x, y, z);
        } else {
            for (int z = d[2] - 1; z >= 0; --z)
                for (int y = d[1] - 1; y >= 0; --y)
                    for (int x = d[0] - 1; x >= 0; --x) visit(x, y, z);
        }
    }

    VoxelGrid<Cell> grid_;
    std::vector<Vec3> samples_;
};

inline DistanceField build_distance_field(const OrientedPointCloud& model_samples,
                                          double voxel_size) {
    return DistanceField(model_samples.points, voxel_size);
}

}  // namespace cadrec
