#pragma once

#include "cadrec/codebook.hpp"
#include "cadrec/parallel.hpp"

#include <algorithm>

namespace cadrec {

struct DetectorParams {
    int soft_bins = 4;            // K: base bin + K-1 nearest-boundary neighbors
    int n_alpha_bins = 30;        // alpha discretization over (-pi, pi]
    double ref_fraction = 0.2;    // fraction of scene samples used as references
    double cluster_rot_thresh = 12.0 * kPi / 180.0;
    double cluster_trans_thresh = 0.0;  // 0: auto = 0.1 * model diameter
};

// Local 2D accumulator of one scene reference point: rows are sampled
// model points, columns are alpha bins.
struct VoteSpace {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> mass;

    VoteSpace(std::size_t r, std::size_t c) : rows(r), cols(c), mass(r * c, 0.0) {}

    double& at(std::size_t m, std::size_t a) { return mass[m * cols + a]; }
    double at(std::size_t m, std::size_t a) const { return mass[m * cols + a]; }

    double total() const {
        double s = 0.0;
        for (double v : mass) s += v;
        return s;
    }
};

struct PoseHypothesis {
    Pose pose;  // maps model coordinates into scene coordinates
    double vote_mass = 0.0;
    std::uint32_t source_ref_index = 0;
    std::uint32_t model_index = 0;
};

struct PoseCluster {
    Pose mean_pose;  // model -> scene
    double total_mass = 0.0;
    std::size_t member_count = 0;
};

// Circular binning of the spin angle over (-pi, pi] with bin centers on
// the lattice -pi + k * width, so an exact-zero angle sits on a center
// instead of a boundary.
inline std::uint32_t alpha_bin(double alpha, int n_alpha_bins) {
    const double u = (wrap_angle(alpha) + kPi) * n_alpha_bins / (2.0 * kPi);
    auto b = static_cast<std::int64_t>(std::floor(u + 0.5));
    b %= n_alpha_bins;
    if (b < 0) b += n_alpha_bins;
    return static_cast<std::uint32_t>(b);
}

inline double alpha_bin_center(std::uint32_t bin, int n_alpha_bins) {
    return wrap_angle(-kPi + bin * 2.0 * kPi / n_alpha_bins);
}

// Soft quantization: the base bin plus up to K-1 single-dimension
// neighbors, picked where the un-floored coordinate sits closest to a bin
// boundary. Weights are uniform; duplicates from clamping at the grid
// edge are merged and the weights renormalized to sum 1.
inline std::vector<std::pair<QuantizedPPF, double>> soft_quantize(const PPF& f,
                                                                  double dist_step,
                                                                  double angle_step, int k) {
    if (k < 1) throw Error(ErrorCode::InvalidConfig, "soft_quantize: K must be >= 1");
    const std::uint32_t n_angle = angle_bin_count(angle_step);
    const double coords[4] = {f.dist / dist_step, f.angle_nd1 / angle_step,
                              f.angle_nd2 / angle_step, f.angle_nn / angle_step};
    const double hi[4] = {-1.0, static_cast<double>(n_angle) - 1.0,
                          static_cast<double>(n_angle) - 1.0,
                          static_cast<double>(n_angle) - 1.0};  // -1: unbounded

    std::int64_t base[4];
    double frac[4];
    for (int d = 0; d < 4; ++d) {
        double b = std::floor(coords[d]);
        if (b < 0.0) b = 0.0;
        if (hi[d] >= 0.0 && b > hi[d]) b = hi[d];
        base[d] = static_cast<std::int64_t>(b);
        frac[d] = coords[d] - b;
    }

    struct Neighbor {
        double proximity;
        int dim;
        std::int64_t bin;
    };
    Neighbor nb[4];
    for (int d = 0; d < 4; ++d) {
        const bool up = frac[d] >= 0.5;
        nb[d].proximity = up ? 1.0 - frac[d] : frac[d];
        nb[d].dim = d;
        nb[d].bin = base[d] + (up ? 1 : -1);
    }
    std::sort(nb, nb + 4, [](const Neighbor& a, const Neighbor& b) {
        return a.proximity != b.proximity ? a.proximity < b.proximity : a.dim < b.dim;
    });

    auto make_key = [&](int dim, std::int64_t bin) {
        std::int64_t v[4] = {base[0], base[1], base[2], base[3]};
        if (dim >= 0) {
            if (bin < 0) bin = 0;
            if (hi[dim] >= 0.0 && bin > static_cast<std::int64_t>(hi[dim]))
                bin = static_cast<std::int64_t>(hi[dim]);
            v[dim] = bin;
        }
        return QuantizedPPF{static_cast<std::uint32_t>(v[0]), static_cast<std::uint32_t>(v[1]),
                            static_cast<std::uint32_t>(v[2]), static_cast<std::uint32_t>(v[3])};
    };

    std::vector<std::pair<QuantizedPPF, double>> out;
    out.reserve(static_cast<std::size_t>(k));
    auto push_unique = [&](const QuantizedPPF& key) {
        for (const auto& [existing, w] : out)
            if (existing == key) return;
        out.emplace_back(key, 0.0);
    };
    push_unique(make_key(-1, 0));
    for (int n = 0; n < std::min(k - 1, 4); ++n) push_unique(make_key(nb[n].dim, nb[n].bin));
    const double w = 1.0 / static_cast<double>(out.size());
    for (auto& kv : out) kv.second = w;
    return out;
}

// Casts the probabilistic votes of one reference point: every other scene
// sample pairs with it, activates K buckets, and each bucket entry adds
// (1/K)(1/N_b) at (model row, alpha-difference bin).
inline VoteSpace vote_reference(const OrientedPointCloud& scene, std::uint32_t ref,
                                const Codebook& cb, const DetectorParams& params) {
    if (scene.size() < 2) throw Error(ErrorCode::EmptyCloud, "vote_reference: need >= 2 points");
    VoteSpace votes(cb.sampled_model.size(), static_cast<std::size_t>(params.n_alpha_bins));
    const Vec3& rp = scene.points[ref];
    const Vec3& rn = scene.normals[ref];
    const double astep = cb.angle_step();
    for (std::uint32_t i = 0; i < scene.size(); ++i) {
        if (i == ref) continue;
        if ((scene.points[i] - rp).squaredNorm() < 1e-24) continue;
        const PPF f = compute_ppf(rp, rn, scene.points[i], scene.normals[i]);
        if (f.dist > cb.model_diameter + cb.dist_step) continue;  // cannot be a model pair
        double alpha_scene;
        try {
            alpha_scene = compute_alpha(rp, rn, scene.points[i]);
        } catch (const Error&) {
            continue;
        }
        for (const auto& [key, weight] : soft_quantize(f, cb.dist_step, astep, params.soft_bins)) {
            const auto* bucket = cb.lookup(key);
            if (!bucket) continue;
            const double w = weight / static_cast<double>(bucket->size());
            for (const CodebookEntry& e : *bucket) {
                // spin that maps the model pair onto the scene pair under
                // the atan2(-z, y) alpha convention
                const double a = wrap_angle(e.alpha_model - alpha_scene);
                votes.at(e.model_ref_index, alpha_bin(a, params.n_alpha_bins)) += w;
            }
        }
    }
    return votes;
}

struct VotePeak {
    std::uint32_t model_index = 0;
    std::uint32_t alpha_bin = 0;
    double alpha = 0.0;  // bin center
    double mass = 0.0;
};

// Global argmax of the accumulator; ties go to the lowest (row, col).
inline VotePeak extract_local_max(const VoteSpace& v, int n_alpha_bins) {
    VotePeak peak;
    peak.mass = 0.0;
    bool any = false;
    for (std::size_t m = 0; m < v.rows; ++m)
        for (std::size_t a = 0; a < v.cols; ++a) {
            const double val = v.at(m, a);
            if (val > 0.0) any = true;
            if (val > peak.mass) {
                peak.mass = val;
                peak.model_index = static_cast<std::uint32_t>(m);
                peak.alpha_bin = static_cast<std::uint32_t>(a);
            }
        }
    if (!any) throw Error(ErrorCode::EmptySpace, "extract_local_max: empty vote space");
    peak.alpha = alpha_bin_center(peak.alpha_bin, n_alpha_bins);
    return peak;
}

// Pose from one matched oriented pair plus the spin angle:
// inv(LCF(scene)) * Rx(alpha) * LCF(model). Maps model to scene.
inline Pose pose_from_correspondence(const Vec3& scene_p, const Vec3& scene_n,
                                     const Vec3& model_p, const Vec3& model_n, double alpha) {
    const Pose lcf_s = local_frame(scene_p, scene_n);
    const Pose lcf_m = local_frame(model_p, model_n);
    Pose rx;
    rx.rotation = Eigen::AngleAxisd(alpha, Vec3::UnitX()).toRotationMatrix();
    return lcf_s.inverse() * rx * lcf_m;
}

namespace detail {

struct ClusterAccum {
    std::vector<std::pair<Pose, double>> members;
    Pose mean;
    double total_mass = 0.0;

    void add(const Pose& p, double mass) {
        members.emplace_back(p, mass);
        total_mass += mass;
        Eigen::Vector4d q_ref = quaternion_from_rotation(members.front().first.rotation);
        Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
        Vec3 t_sum = Vec3::Zero();
        for (const auto& [pose, w] : members) {
            Eigen::Vector4d q = quaternion_from_rotation(pose.rotation);
            if (q.dot(q_ref) < 0.0) q = -q;  // sign alignment
            q_sum += w * q;
            t_sum += w * pose.translation;
        }
        mean.rotation = rotation_from_quaternion(q_sum / total_mass);
        mean.translation = t_sum / total_mass;
    }
};

}  // namespace detail

// Greedy mass-ordered agglomeration: each hypothesis joins the first
// cluster whose mean is within both thresholds, else starts a new one.
inline std::vector<PoseCluster> cluster_poses(std::vector<PoseHypothesis> hypotheses,
                                              double rot_thresh, double trans_thresh) {
    std::stable_sort(hypotheses.begin(), hypotheses.end(),
                     [](const PoseHypothesis& a, const PoseHypothesis& b) {
                         return a.vote_mass > b.vote_mass;
                     });
    std::vector<detail::ClusterAccum> accums;
    for (const PoseHypothesis& h : hypotheses) {
        bool placed = false;
        for (auto& c : accums) {
            if (rotation_distance(h.pose, c.mean) < rot_thresh &&
                translation_distance(h.pose, c.mean) < trans_thresh) {
                c.add(h.pose, h.vote_mass);
                placed = true;
                break;
            }
        }
        if (!placed) {
            accums.emplace_back();
            accums.back().add(h.pose, h.vote_mass);
        }
    }
    std::vector<PoseCluster> out;
    out.reserve(accums.size());
    for (const auto& c : accums)
        out.push_back({c.mean, c.total_mass, c.members.size()});
    std::stable_sort(out.begin(), out.end(), [](const PoseCluster& a, const PoseCluster& b) {
        return a.total_mass > b.total_mass;
    });
    return out;
}

struct DetectionResult {
    OrientedPointCloud sampled_scene;
    std::vector<PoseHypothesis> hypotheses;
    std::vector<PoseCluster> clusters;
};

// Full LISM detection pass: sample the scene at the codebook spacing,
// vote per reference point, take per-reference argmax poses and cluster.
inline DetectionResult detect(const OrientedPointCloud& scene, const Codebook& cb,
                              const DetectorParams& params) {
    if (scene.empty()) throw Error(ErrorCode::EmptyCloud, "detect: empty scene");
    DetectionResult result;
    result.sampled_scene = sample_uniform(scene, cb.dist_step);
    const std::size_t n = result.sampled_scene.size();
    const auto stride =
        static_cast<std::size_t>(std::max(1.0, std::ceil(1.0 / params.ref_fraction)));

    std::vector<std::uint32_t> refs;
    for (std::size_t i = 0; i < n; i += stride) refs.push_back(static_cast<std::uint32_t>(i));

    std::vector<std::optional<PoseHypothesis>> per_ref(refs.size());
    parallel_for(refs.size(), [&](std::size_t idx) {
        const std::uint32_t r = refs[idx];
        const VoteSpace votes = vote_reference(result.sampled_scene, r, cb, params);
        VotePeak peak;
        try {
            peak = extract_local_max(votes, params.n_alpha_bins);
        } catch (const Error&) {
            return;  // no activation for this reference
        }
        PoseHypothesis h;
        h.pose = pose_from_correspondence(
            result.sampled_scene.points[r], result.sampled_scene.normals[r],
            cb.sampled_model.points[peak.model_index], cb.sampled_model.normals[peak.model_index],
            peak.alpha);
        h.vote_mass = peak.mass;
        h.source_ref_index = r;
        h.model_index = peak.model_index;
        per_ref[idx] = h;
    });
    for (const auto& h : per_ref)
        if (h) result.hypotheses.push_back(*h);
    if (result.hypotheses.empty())
        throw Error(ErrorCode::NoHypotheses, "detect: all vote spaces empty");

    const double trans_thresh = params.cluster_trans_thresh > 0.0
                                    ? params.cluster_trans_thresh
                                    : 0.1 * cb.model_diameter;
    result.clusters = cluster_poses(result.hypotheses, params.cluster_rot_thresh, trans_thresh);
    return result;
}

}  // namespace cadrec
