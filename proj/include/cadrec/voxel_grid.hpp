#pragma once

#include "cadrec/geometry.hpp"

#include <array>
#include <cstdint>
#include <optional>

namespace cadrec {

// Integer voxel coordinate, also usable as a sparse hash key.
struct VoxelCoord {
    std::int64_t x = 0, y = 0, z = 0;
    bool operator==(const VoxelCoord&) const = default;
};

struct VoxelCoordHash {
    std::size_t operator()(const VoxelCoord& c) const {
        // splitmix-style mix of the three lanes
        std::uint64_t h = 0x9e3779b97f4a7c15ull;
        for (std::int64_t v : {c.x, c.y, c.z}) {
            std::uint64_t x = static_cast<std::uint64_t>(v) + h;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
            h = x ^ (x >> 31);
        }
        return static_cast<std::size_t>(h);
    }
};

inline VoxelCoord voxel_coord(const Vec3& p, const Vec3& origin, double voxel_size) {
    const Vec3 rel = (p - origin) / voxel_size;
    return {static_cast<std::int64_t>(std::floor(rel.x())),
            static_cast<std::int64_t>(std::floor(rel.y())),
            static_cast<std::int64_t>(std::floor(rel.z()))};
}

// Dense axis-aligned voxel grid with a payload per cell.
// Mapping is floor((p - origin)/voxel_size); out-of-range points are
// rejected (voxel_of returns nullopt), never clamped.
template <typename Cell>
class VoxelGrid {
public:
    VoxelGrid() = default;

    VoxelGrid(const Vec3& origin, double voxel_size, const std::array<int, 3>& dims)
        : origin_(origin), voxel_size_(voxel_size), dims_(dims),
          cells_(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]) {}

    const Vec3& origin() const { return origin_; }
    double voxel_size() const { return voxel_size_; }
    const std::array<int, 3>& dims() const { return dims_; }
    std::size_t cell_count() const { return cells_.size(); }

    std::optional<std::array<int, 3>> voxel_of(const Vec3& p) const {
        const VoxelCoord c = voxel_coord(p, origin_, voxel_size_);
        if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= dims_[0] || c.y >= dims_[1] ||
            c.z >= dims_[2])
            return std::nullopt;
        return std::array<int, 3>{static_cast<int>(c.x), static_cast<int>(c.y),
                                  static_cast<int>(c.z)};
    }

    std::array<int, 3> clamped_voxel_of(const Vec3& p) const {
        const VoxelCoord c = voxel_coord(p, origin_, voxel_size_);
        auto clamp = [](std::int64_t v, int n) {
            return static_cast<int>(v < 0 ? 0 : (v >= n ? n - 1 : v));
        };
        return {clamp(c.x, dims_[0]), clamp(c.y, dims_[1]), clamp(c.z, dims_[2])};
    }

    Vec3 center(const std::array<int, 3>& v) const {
        return origin_ + voxel_size_ * Vec3(v[0] + 0.5, v[1] + 0.5, v[2] + 0.5);
    }

    std::size_t flat(const std::array<int, 3>& v) const {
        return (static_cast<std::size_t>(v[2]) * dims_[1] + v[1]) * dims_[0] + v[0];
    }

    Cell& at(const std::array<int, 3>& v) { return cells_[flat(v)]; }
    const Cell& at(const std::array<int, 3>& v) const { return cells_[flat(v)]; }

    Cell& at_flat(std::size_t i) { return cells_[i]; }
    const Cell& at_flat(std::size_t i) const { return cells_[i]; }

private:
    Vec3 origin_ = Vec3::Zero();
    double voxel_size_ = 1.0;
    std::array<int, 3> dims_ = {0, 0, 0};
    std::vector<Cell> cells_;
};

}  // namespace cadrec
