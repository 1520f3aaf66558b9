#pragma once

#include "cadrec/geometry.hpp"
#include "cadrec/sampling.hpp"
#include "cadrec/voxel_grid.hpp"

#include <numeric>

namespace cadrec {

// Fixed-algorithm PRNG (splitmix64) so seeded outputs are bit-identical
// across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Box-Muller; standard-library distributions are implementation-defined
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * kPi * u2);
        have_spare_ = true;
        return mag * std::cos(2.0 * kPi * u2);
    }

    Vec3 unit_vector() {
        while (true) {
            const Vec3 v(gaussian(), gaussian(), gaussian());
            const double n = v.norm();
            if (n > 1e-12) return v / n;
        }
    }

    Mat3 rotation() {
        Eigen::Vector4d q(gaussian(), gaussian(), gaussian(), gaussian());
        while (q.norm() < 1e-12) q = {gaussian(), gaussian(), gaussian(), gaussian()};
        return rotation_from_quaternion(q / q.norm());
    }

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        Rng r(seed ^ (0x632be59bd9b4e019ull * (stream + 1)));
        return r.next_u64();
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

struct SynthSpec {
    int n_views = 8;
    double noise_sigma = 0.0;      // along the surface normal
    double clutter_ratio = 0.0;    // clutter fraction of the final cloud, [0, 1)
    double occlusion_ratio = 0.0;  // contiguous patch removed from the visible part
    bool dynamic = false;          // re-randomize object placement and clutter per view
    bool object_present = true;    // false: clutter-only negative scenes
    std::uint64_t seed = 0;
    double sample_rel = 0.01;      // surface sampling spacing, relative to diam
};

struct SynthScene {
    OrientedPointCloud cloud;  // scene frame: object points first, then clutter
    Pose gt_pose;              // model -> scene
    std::vector<std::uint8_t> visibility_mask;  // per base model sample
    std::size_t n_object_points = 0;
};

inline std::vector<Vec3> fibonacci_directions(int n) {
    std::vector<Vec3> dirs;
    dirs.reserve(n);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
    return dirs;
}

namespace detail {

inline Pose random_pose(Rng& rng, double diam) {
    Pose p;
    p.rotation = rng.rotation();
    p.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)) * diam;
    return p;
}

// Clutter from seeded planes and boxes around the posed object.
inline OrientedPointCloud make_clutter(Rng& rng, std::size_t n_points, const Vec3& center,
                                       double diam) {
    struct Patch {
        Vec3 origin;
        Vec3 u, v, n;  // orthonormal in-plane axes and normal
        double hu, hv;
    };
    std::vector<Patch> patches;
    const int n_prim = 4 + static_cast<int>(rng.below(4));
    for (int k = 0; k < n_prim; ++k) {
        const bool box = rng.uniform() < 0.4;
        const Vec3 c = center + rng.unit_vector() * rng.uniform(0.6, 1.6) * diam;
        const Mat3 r = rng.rotation();
        if (box) {
            const Vec3 he(rng.uniform(0.1, 0.3) * diam, rng.uniform(0.1, 0.3) * diam,
                          rng.uniform(0.1, 0.3) * diam);
            for (int axis = 0; axis < 3; ++axis)
                for (int sign = -1; sign <= 1; sign += 2) {
                    Patch p;
                    p.n = sign * r.col(axis);
                    p.origin = c + p.n * he[axis];
                    p.u = r.col((axis + 1) % 3);
                    p.v = r.col((axis + 2) % 3);
                    p.hu = he[(axis + 1) % 3];
                    p.hv = he[(axis + 2) % 3];
                    patches.push_back(p);
                }
        } else {
            Patch p;
            p.origin = c;
            p.u = r.col(0);
            p.v = r.col(1);
            p.n = r.col(2) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
            p.hu = rng.uniform(0.2, 0.6) * diam;
            p.hv = rng.uniform(0.2, 0.6) * diam;
            patches.push_back(p);
        }
    }
    OrientedPointCloud out;
    out.points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
        const Patch& p = patches[rng.below(patches.size())];
        const Vec3 pt = p.origin + p.u * rng.uniform(-p.hu, p.hu) + p.v * rng.uniform(-p.hv, p.hv);
        out.push_back(pt, p.n);
    }
    return out;
}

inline SynthScene view_from_base(const OrientedPointCloud& base, const Vec3& camera_dir,
                                 const SynthSpec& spec, double diam, const Pose& gt,
                                 std::uint64_t view_seed) {
    Rng rng(view_seed);
    SynthScene scene;
    scene.gt_pose = gt;
    scene.visibility_mask.assign(base.size(), 0);

    // back-face culling as the visibility proxy
    std::vector<std::uint32_t> visible;
    if (spec.object_present)
        for (std::uint32_t i = 0; i < base.size(); ++i)
            if (base.normals[i].dot(-camera_dir) > 0.0) visible.push_back(i);

    if (spec.occlusion_ratio > 0.0 && !visible.empty()) {
        const Vec3 center = base.points[visible[rng.below(visible.size())]];
        std::vector<std::pair<double, std::uint32_t>> by_dist;
        by_dist.reserve(visible.size());
        for (std::uint32_t idx : visible)
            by_dist.emplace_back((base.points[idx] - center).squaredNorm(), idx);
        std::sort(by_dist.begin(), by_dist.end());
        const auto n_drop =
            static_cast<std::size_t>(std::ceil(spec.occlusion_ratio * visible.size()));
        visible.clear();
        for (std::size_t k = n_drop; k < by_dist.size(); ++k) visible.push_back(by_dist[k].second);
        std::sort(visible.begin(), visible.end());
    }

    for (std::uint32_t idx : visible) {
        scene.visibility_mask[idx] = 1;
        Vec3 p = base.points[idx];
        if (spec.noise_sigma > 0.0) p += base.normals[idx] * (spec.noise_sigma * rng.gaussian());
        scene.cloud.push_back(gt.apply(p), gt.rotate(base.normals[idx]));
    }
    scene.n_object_points = scene.cloud.size();

    if (spec.clutter_ratio > 0.0 || !spec.object_present) {
        const double ratio = std::min(spec.clutter_ratio, 0.99);
        std::size_t n_clutter;
        if (scene.n_object_points > 0) {
            n_clutter = static_cast<std::size_t>(
                std::llround(ratio / (1.0 - ratio) * static_cast<double>(scene.n_object_points)));
        } else {
            // pure-clutter scene: population comparable to a typical scan
            n_clutter = base.size();
        }
        const Vec3 center = gt.apply(Vec3::Zero());
        const OrientedPointCloud clutter = make_clutter(rng, n_clutter, center, diam);
        for (std::size_t i = 0; i < clutter.size(); ++i)
            scene.cloud.push_back(clutter.points[i], clutter.normals[i]);
    }
    return scene;
}

}  // namespace detail

// Standalone clutter cloud (seeded planes and boxes), the same generator
// the views use; handy for negative-control scenes.
inline OrientedPointCloud make_clutter_cloud(std::uint64_t seed, std::size_t n_points,
                                             const Vec3& center, double diam) {
    Rng rng(seed);
    return detail::make_clutter(rng, n_points, center, diam);
}

inline OrientedPointCloud synth_base_samples(const TriMesh& mesh, const SynthSpec& spec) {
    const double diam = diameter(mesh);
    return sample_mesh_uniform(mesh, spec.sample_rel * diam);
}

// One partial view: back-face-culled surface samples, a contiguous
// occlusion patch removed, normal-direction Gaussian noise, clutter from
// seeded primitives, everything under a seeded ground-truth pose.
inline SynthScene synth_view(const TriMesh& mesh, const Vec3& camera_dir,
                             const SynthSpec& spec) {
    const OrientedPointCloud base = synth_base_samples(mesh, spec);
    const double diam = diameter(mesh);
    Rng pose_rng(Rng::mix(spec.seed, 0xa11ce));
    const Pose gt = detail::random_pose(pose_rng, diam);
    return detail::view_from_base(base, camera_dir, spec, diam, gt, Rng::mix(spec.seed, 1));
}

// n_views quasi-uniform directions (Fibonacci sphere). Static scenes keep
// one object placement for the whole dataset; dynamic ones redraw it and
// the clutter for every view.
inline std::vector<SynthScene> synth_dataset(const TriMesh& mesh, const SynthSpec& spec) {
    if (spec.n_views < 2)
        throw Error(ErrorCode::InvalidConfig, "synth_dataset: need at least 2 views");
    const OrientedPointCloud base = synth_base_samples(mesh, spec);
    const double diam = diameter(mesh);
    const auto dirs = fibonacci_directions(spec.n_views);

    Rng pose_rng(Rng::mix(spec.seed, 0xa11ce));
    const Pose static_pose = detail::random_pose(pose_rng, diam);

    std::vector<SynthScene> views;
    views.reserve(spec.n_views);
    for (int i = 0; i < spec.n_views; ++i) {
        const Pose gt = spec.dynamic ? detail::random_pose(pose_rng, diam) : static_pose;
        views.push_back(detail::view_from_base(base, dirs[i], spec, diam, gt,
                                               Rng::mix(spec.seed, 100 + i)));
    }

    // post-hoc overlap check between adjacent directions
    for (int i = 0; spec.object_present && i < spec.n_views; ++i) {
        int nearest = -1;
        double best = -2.0;
        for (int j = 0; j < spec.n_views; ++j) {
            if (j == i) continue;
            const double c = dirs[i].dot(dirs[j]);
            if (c > best) {
                best = c;
                nearest = j;
            }
        }
        std::size_t shared = 0, ni = 0, nj = 0;
        for (std::size_t k = 0; k < base.size(); ++k) {
            ni += views[i].visibility_mask[k];
            nj += views[nearest].visibility_mask[k];
            shared += views[i].visibility_mask[k] & views[nearest].visibility_mask[k];
        }
        const double denom = static_cast<double>(std::min(ni, nj));
        if (denom > 0.0 && static_cast<double>(shared) / denom < 0.15)
            throw Error(ErrorCode::InvalidConfig,
                        "synth_dataset: adjacent views " + std::to_string(i) + "/" +
                            std::to_string(nearest) + " overlap below 15%");
    }
    return views;
}

struct EvalStats {
    double mean = 0.0;
    double stddev = 0.0;
    double rms = 0.0;
    std::size_t count = 0;
};

namespace detail {

inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                      const Vec3& c) {
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;
    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;
    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;
    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    const double denom = 1.0 / (va + vb + vc);
    return a + ab * (vb * denom) + ac * (vc * denom);
}

}  // namespace detail

// Exact point-to-mesh distance queries over a triangle-partitioned grid.
class MeshDistance {
public:
    explicit MeshDistance(const TriMesh& mesh) : mesh_(mesh) {
        if (mesh.empty() || mesh.faces.empty())
            throw Error(ErrorCode::EmptyMesh, "MeshDistance: empty mesh");
        lo_ = hi_ = mesh.vertices[0];
        for (const Vec3& v : mesh.vertices) {
            lo_ = lo_.cwiseMin(v);
            hi_ = hi_.cwiseMax(v);
        }
        cell_ = std::max((hi_ - lo_).norm() / 48.0, 1e-12);
        for (int k = 0; k < 3; ++k)
            dims_[k] = std::max<std::int64_t>(
                1, static_cast<std::int64_t>(std::ceil((hi_[k] - lo_[k]) / cell_)) + 1);
        cells_.resize(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]));
        for (std::uint32_t f = 0; f < mesh.faces.size(); ++f) {
            Vec3 tlo = mesh.vertices[mesh.faces[f][0]], thi = tlo;
            for (int k = 1; k < 3; ++k) {
                const Vec3& v = mesh.vertices[mesh.faces[f][k]];
                tlo = tlo.cwiseMin(v);
                thi = thi.cwiseMax(v);
            }
            const auto c0 = coord(tlo), c1 = coord(thi);
            for (std::int64_t z = c0[2]; z <= c1[2]; ++z)
                for (std::int64_t y = c0[1]; y <= c1[1]; ++y)
                    for (std::int64_t x = c0[0]; x <= c1[0]; ++x)
                        cells_[flat({x, y, z})].push_back(f);
        }
    }

    double distance(const Vec3& p) const {
        const Vec3 rel = (p - lo_) / cell_;
        const std::array<std::int64_t, 3> c{static_cast<std::int64_t>(std::floor(rel.x())),
                                            static_cast<std::int64_t>(std::floor(rel.y())),
                                            static_cast<std::int64_t>(std::floor(rel.z()))};
        double best = std::numeric_limits<double>::infinity();
        const std::int64_t max_shell =
            4 + std::max({dims_[0], dims_[1], dims_[2]}) +
            static_cast<std::int64_t>(((p - 0.5 * (lo_ + hi_)).norm()) / cell_);
        for (std::int64_t shell = 0; shell <= max_shell; ++shell) {
            if (best <= static_cast<double>(shell - 1) * cell_) break;
            visit_shell(c, shell, [&](const std::array<std::int64_t, 3>& v) {
                for (std::uint32_t f : cells_[flat(v)]) {
                    const auto& tri = mesh_.faces[f];
                    const Vec3 q = detail::closest_point_on_triangle(
                        p, mesh_.vertices[tri[0]], mesh_.vertices[tri[1]], mesh_.vertices[tri[2]]);
                    best = std::min(best, (p - q).norm());
                }
            });
        }
        return best;
    }

private:
    std::array<std::int64_t, 3> coord(const Vec3& p) const {
        const Vec3 rel = (p - lo_) / cell_;
        std::array<std::int64_t, 3> c;
        for (int k = 0; k < 3; ++k) {
            c[k] = static_cast<std::int64_t>(std::floor(rel[k]));
            c[k] = std::clamp<std::int64_t>(c[k], 0, dims_[k] - 1);
        }
        return c;
    }

    std::size_t flat(const std::array<std::int64_t, 3>& v) const {
        return static_cast<std::size_t>((v[2] * dims_[1] + v[1]) * dims_[0] + v[0]);
    }

    template <typename Fn>
    void visit_shell(const std::array<std::int64_t, 3>& c, std::int64_t shell, Fn&& fn) const {
        const auto in_range = [&](const std::array<std::int64_t, 3>& v) {
            return v[0] >= 0 && v[1] >= 0 && v[2] >= 0 && v[0] < dims_[0] && v[1] < dims_[1] &&
                   v[2] < dims_[2];
        };
        if (shell == 0) {
            if (in_range(c)) fn(c);
            return;
        }
        for (std::int64_t z = c[2] - shell; z <= c[2] + shell; ++z)
            for (std::int64_t y = c[1] - shell; y <= c[1] + shell; ++y)
                for (std::int64_t x = c[0] - shell; x <= c[0] + shell; ++x) {
                    const std::int64_t cheb = std::max(
                        {std::llabs(x - c[0]), std::llabs(y - c[1]), std::llabs(z - c[2])});
                    if (cheb != shell) continue;
                    const std::array<std::int64_t, 3> v{x, y, z};
                    if (in_range(v)) fn(v);
                }
    }

    const TriMesh& mesh_;
    Vec3 lo_, hi_;
    double cell_ = 1.0;
    std::array<std::int64_t, 3> dims_{1, 1, 1};
    std::vector<std::vector<std::uint32_t>> cells_;
};

inline EvalStats eval_reconstruction(const OrientedPointCloud& recon, const TriMesh& mesh) {
    if (recon.empty()) throw Error(ErrorCode::EmptyCloud, "eval_reconstruction: empty cloud");
    const MeshDistance dist(mesh);
    double sum = 0.0, sum2 = 0.0;
    for (const Vec3& p : recon.points) {
        const double d = dist.distance(p);
        sum += d;
        sum2 += d * d;
    }
    EvalStats stats;
    stats.count = recon.size();
    const double n = static_cast<double>(recon.size());
    stats.mean = sum / n;
    stats.rms = std::sqrt(sum2 / n);
    stats.stddev = std::sqrt(std::max(0.0, sum2 / n - stats.mean * stats.mean));
    return stats;
}

}  // namespace cadrec
