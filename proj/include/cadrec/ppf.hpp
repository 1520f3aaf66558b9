#pragma once

#include "cadrec/geometry.hpp"

#include <cstdint>
#include <functional>

namespace cadrec {

// Point pair feature of an oriented point pair: segment length plus the
// three angles (n1,d), (n2,d), (n1,n2) with d = p1 - p2. Invariant under
// rigid motion of the pair.
struct PPF {
    double dist = 0.0;
    double angle_nd1 = 0.0;
    double angle_nd2 = 0.0;
    double angle_nn = 0.0;
};

inline PPF compute_ppf(const Vec3& p1, const Vec3& n1, const Vec3& p2, const Vec3& n2) {
    const Vec3 d = p1 - p2;
    const double len = d.norm();
    if (len < 1e-12) throw Error(ErrorCode::CoincidentPoints, "compute_ppf: coincident points");
    PPF f;
    f.dist = len;
    f.angle_nd1 = std::acos(clamp_unit(n1.dot(d) / len));
    f.angle_nd2 = std::acos(clamp_unit(n2.dot(d) / len));
    f.angle_nn = std::acos(clamp_unit(n1.dot(n2)));
    return f;
}

struct QuantizedPPF {
    std::uint32_t dist_bin = 0;
    std::uint32_t nd1_bin = 0;
    std::uint32_t nd2_bin = 0;
    std::uint32_t nn_bin = 0;
    bool operator==(const QuantizedPPF&) const = default;
};

struct QuantizedPPFHash {
    std::size_t operator()(const QuantizedPPF& q) const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        for (std::uint32_t v : {q.dist_bin, q.nd1_bin, q.nd2_bin, q.nn_bin}) {
            h ^= v;
            h *= 0x100000001b3ull;
            h ^= h >> 29;
        }
        return static_cast<std::size_t>(h);
    }
};

inline std::uint32_t angle_bin_count(double angle_step) {
    return static_cast<std::uint32_t>(std::max(1.0, std::round(kPi / angle_step)));
}

// Floor quantization per component; the angle value pi lands in the top
// bin instead of one past it.
inline QuantizedPPF quantize(const PPF& f, double dist_step, double angle_step) {
    if (dist_step <= 0.0 || angle_step <= 0.0)
        throw Error(ErrorCode::InvalidConfig, "quantize: steps must be positive");
    const std::uint32_t n_angle = angle_bin_count(angle_step);
    auto abin = [&](double a) {
        auto b = static_cast<std::int64_t>(std::floor(a / angle_step));
        if (b < 0) b = 0;
        if (b >= n_angle) b = n_angle - 1;
        return static_cast<std::uint32_t>(b);
    };
    QuantizedPPF q;
    q.dist_bin = static_cast<std::uint32_t>(std::max(0.0, std::floor(f.dist / dist_step)));
    q.nd1_bin = abin(f.angle_nd1);
    q.nd2_bin = abin(f.angle_nd2);
    q.nn_bin = abin(f.angle_nn);
    return q;
}

// Rotation taking the unit vector n onto +x. Any fixed choice works as
// long as model and scene use the same one; the residual spin about x is
// exactly what alpha parameterizes.
inline Mat3 rotation_to_x_axis(const Vec3& n) {
    const Vec3 ex(1, 0, 0);
    const Vec3 axis = n.cross(ex);
    const double s = axis.norm();
    const double c = n.dot(ex);
    if (s < 1e-12) {
        if (c > 0.0) return Mat3::Identity();
        Mat3 r = Mat3::Identity();  // n == -x: half turn about z
        r(0, 0) = -1.0;
        r(1, 1) = -1.0;
        return r;
    }
    return Eigen::AngleAxisd(std::atan2(s, c), axis / s).toRotationMatrix();
}

// Local coordinate frame of an oriented point: the point goes to the
// origin, its normal to +x.
inline Pose local_frame(const Vec3& p, const Vec3& n) {
    const Mat3 r = rotation_to_x_axis(n);
    return {r, -(r * p)};
}

// Spin angle of the paired point about the reference normal, measured in
// the reference LCF. Returns atan2(-z, y): rotating the paired point by
// alpha about +x lands it in the y>0 half of the x-y plane. Range (-pi, pi].
inline double compute_alpha(const Vec3& ref_p, const Vec3& ref_n, const Vec3& paired_p) {
    const Pose lcf = local_frame(ref_p, ref_n);
    const Vec3 q = lcf.apply(paired_p);
    if (std::hypot(q.y(), q.z()) < 1e-9)
        throw Error(ErrorCode::DegeneratePair, "compute_alpha: paired point on the normal axis");
    return std::atan2(-q.z(), q.y());
}

}  // namespace cadrec
