#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cadrec {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

enum class ErrorCode {
    EmptyMesh,
    EmptyModel,
    EmptyCloud,
    TooFewSamples,
    CoincidentPoints,
    DegeneratePair,
    EmptySpace,
    NoHypotheses,
    DuplicateCamera,
    DisconnectedGraph,
    SingularNormalEquations,
    NonPositiveSceneArea,
    MalformedFile,
    InvalidConfig,
};

struct Error : std::runtime_error {
    Error(ErrorCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
    ErrorCode code;
};

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    if (a > kPi) a -= 2.0 * kPi;
    return a;
}

inline double clamp_unit(double x) { return x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x); }

// Angle between two vectors, in [0, pi]. Inputs need not be unit length.
inline double angle_between(const Vec3& a, const Vec3& b) {
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::acos(clamp_unit(a.dot(b) / (na * nb)));
}

// Rodrigues exponential: rotation by |w| radians about w/|w|.
inline Mat3 rotation_from_angle_axis(const Vec3& w) {
    const double phi = w.norm();
    if (phi < 1e-12) {
        Mat3 r = Mat3::Identity();
        // first-order term keeps the map smooth near zero
        r(0, 1) = -w.z(); r(1, 0) = w.z();
        r(0, 2) = w.y();  r(2, 0) = -w.y();
        r(1, 2) = -w.x(); r(2, 1) = w.x();
        return r;
    }
    const Vec3 axis = w / phi;
    return Eigen::AngleAxisd(phi, axis).toRotationMatrix();
}

// Log map, returns w with |w| in [0, pi].
inline Vec3 angle_axis_from_rotation(const Mat3& r) {
    Eigen::AngleAxisd aa(r);
    double phi = aa.angle();
    Vec3 axis = aa.axis();
    if (phi > kPi) {  // Eigen may return angle in [0, 2pi)
        phi = 2.0 * kPi - phi;
        axis = -axis;
    }
    return axis * phi;
}

// Rigid transform: x -> rotation * x + translation.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }

    static Pose from_angle_axis(const Vec3& w, const Vec3& t) {
        return {rotation_from_angle_axis(w), t};
    }

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
    Vec3 rotate(const Vec3& v) const { return rotation * v; }

    Pose inverse() const {
        Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }

    // Composition: (a * b).apply(x) == a.apply(b.apply(x)).
    Pose operator*(const Pose& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }

    Vec3 angle_axis() const { return angle_axis_from_rotation(rotation); }
};

inline Pose compose(const Pose& a, const Pose& b) { return a * b; }

// Rotation angle of ra * rb^T, in [0, pi].
inline double rotation_distance(const Mat3& ra, const Mat3& rb) {
    const double tr = (ra * rb.transpose()).trace();
    return std::acos(clamp_unit((tr - 1.0) * 0.5));
}

inline double rotation_distance(const Pose& a, const Pose& b) {
    return rotation_distance(a.rotation, b.rotation);
}

inline double translation_distance(const Pose& a, const Pose& b) {
    return (a.translation - b.translation).norm();
}

// Quaternion as (w, x, y, z); used for pose cluster averaging.
inline Eigen::Vector4d quaternion_from_rotation(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    return {q.w(), q.x(), q.y(), q.z()};
}

inline Mat3 rotation_from_quaternion(const Eigen::Vector4d& q) {
    Eigen::Quaterniond qq(q[0], q[1], q[2], q[3]);
    qq.normalize();
    return qq.toRotationMatrix();
}

// Point set with a unit normal per point.
struct OrientedPointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }

    void push_back(const Vec3& p, const Vec3& n) {
        points.push_back(p);
        normals.push_back(n);
    }

    OrientedPointCloud transformed(const Pose& pose) const {
        OrientedPointCloud out;
        out.points.reserve(points.size());
        out.normals.reserve(normals.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            out.points.push_back(pose.apply(points[i]));
            out.normals.push_back(pose.rotate(normals[i]));
        }
        return out;
    }
};

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> faces;

    bool empty() const { return vertices.empty(); }
};

inline Vec3 face_normal(const TriMesh& mesh, std::size_t f) {
    const auto& tri = mesh.faces[f];
    const Vec3 e1 = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
    const Vec3 e2 = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
    Vec3 n = e1.cross(e2);
    const double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3(0, 0, 1);
}

inline double face_area(const TriMesh& mesh, std::size_t f) {
    const auto& tri = mesh.faces[f];
    const Vec3 e1 = mesh.vertices[tri[1]] - mesh.vertices[tri[0]];
    const Vec3 e2 = mesh.vertices[tri[2]] - mesh.vertices[tri[0]];
    return 0.5 * e1.cross(e2).norm();
}

inline double surface_area(const TriMesh& mesh) {
    double area = 0.0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) area += face_area(mesh, f);
    return area;
}

// Max pairwise vertex distance. Exact for meshes up to 5000 vertices;
// above that a farthest-point double sweep is used, which in 3D is
// guaranteed to return at least diameter/sqrt(3).
inline double diameter(const TriMesh& mesh) {
    const auto& v = mesh.vertices;
    if (v.size() < 2) throw Error(ErrorCode::EmptyMesh, "diameter: need at least 2 vertices");
    if (v.size() <= 5000) {
        double best = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i)
            for (std::size_t j = i + 1; j < v.size(); ++j)
                best = std::max(best, (v[i] - v[j]).squaredNorm());
        return std::sqrt(best);
    }
    auto farthest = [&](const Vec3& from) {
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            double d = (v[i] - from).squaredNorm();
            if (d > best) { best = d; arg = i; }
        }
        return arg;
    };
    std::size_t a = farthest(v[0]);
    double best = 0.0;
    for (int sweep = 0; sweep < 4; ++sweep) {
        std::size_t b = farthest(v[a]);
        double d = (v[a] - v[b]).norm();
        if (d <= best) break;
        best = d;
        a = b;
    }
    return best;
}

}  // namespace cadrec
