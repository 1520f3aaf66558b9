#pragma once

#include "cadrec/detector.hpp"
#include "cadrec/distance_field.hpp"

#include <Eigen/Cholesky>

namespace cadrec {

struct VerifierParams {
    double tau_theta = 0.0;          // inlier distance; 0: auto = 0.01 * model extent
    double score_threshold = 0.25;   // final acceptance bound on the score
    double normal_threshold = 0.6;   // fraction of agreeing normals
    double normal_angle_max = 30.0 * kPi / 180.0;
    int pyramid_levels = 3;
    std::vector<double> level_sample_factors = {0.25, 0.5, 1.0};
    std::vector<int> icp_max_iters = {50, 50, 50};
    int final_icp_iters = 15;
    double lm_lambda_init = 1e-3;
    double lm_lambda_factor = 10.0;
    double field_voxel_size = 0.0;  // 0: auto = half the model sample spacing
    double dedup_rot_thresh = 0.1;
    double dedup_trans_factor = 5.0;  // times tau_theta
};

struct VerifiedPose {
    Pose pose;  // model -> scene
    double score = 0.0;
    double normal_consistency = 0.0;
    bool accepted = false;
};

// Fraction of model points that land within tau_theta of their nearest
// sampled scene point under the pose. The exact index is used here, not
// the distance field.
inline double score(const Pose& pose, const OrientedPointCloud& model_samples,
                    const KdIndex& scene_index, double tau_theta) {
    if (model_samples.empty())
        throw Error(ErrorCode::EmptyModel, "score: no model samples");
    const double t2 = tau_theta * tau_theta;
    std::size_t hits = 0;
    for (const Vec3& m : model_samples.points)
        if (scene_index.nearest(pose.apply(m)).dist2 < t2) ++hits;
    return static_cast<double>(hits) / static_cast<double>(model_samples.size());
}

// Fraction of segment points whose normal, brought into the model frame,
// agrees with the nearest model sample normal within normal_angle_max.
inline double normal_consistency(const Pose& pose, const OrientedPointCloud& scene_segment,
                                 const OrientedPointCloud& model_samples,
                                 const KdIndex& model_index, double normal_angle_max) {
    if (scene_segment.empty())
        throw Error(ErrorCode::EmptyCloud, "normal_consistency: empty segment");
    const Pose inv = pose.inverse();
    std::size_t agree = 0;
    for (std::size_t i = 0; i < scene_segment.size(); ++i) {
        const Vec3 pm = inv.apply(scene_segment.points[i]);
        const Vec3 nm = inv.rotate(scene_segment.normals[i]);
        const auto hit = model_index.nearest(pm);
        if (angle_between(nm, model_samples.normals[hit.index]) <= normal_angle_max) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(scene_segment.size());
}

// Indices of scene points within tau_theta of the model under the pose.
inline std::vector<std::uint32_t> segment_inliers(const Pose& pose,
                                                  const OrientedPointCloud& scene,
                                                  const KdIndex& model_index,
                                                  double tau_theta) {
    const Pose inv = pose.inverse();
    const double t2 = tau_theta * tau_theta;
    std::vector<std::uint32_t> out;
    for (std::uint32_t i = 0; i < scene.size(); ++i)
        if (model_index.nearest(inv.apply(scene.points[i])).dist2 <= t2) out.push_back(i);
    return out;
}

struct IcpResult {
    Pose pose;  // model -> scene
    bool diverged = false;
    double initial_mean = 0.0;
    double final_mean = 0.0;
    int iterations = 0;
};

// LM-ICP of the scene against the model distance field. Scene points are
// mapped into model space by the inverse pose; residuals are field
// distances, gradients come from central differences on the field.
// Truncation anneals from the initial residual scale down to 3*tau_theta
// so poses several tau away still see a gradient while far clutter never
// does. Point-to-point only: normals are kept out of this stage so they
// stay available for verification.
inline IcpResult sparse_lm_icp(const OrientedPointCloud& scene_samples, const Pose& init,
                               const DistanceField& field, const VerifierParams& params,
                               int level) {
    if (scene_samples.empty())
        throw Error(ErrorCode::EmptyCloud, "sparse_lm_icp: empty scene");
    const double cap_final = 3.0 * params.tau_theta;
    const int max_iters =
        params.icp_max_iters.empty()
            ? 25
            : params.icp_max_iters[std::min<std::size_t>(level, params.icp_max_iters.size() - 1)];
    const double h = 0.5 * field.grid().voxel_size();

    Pose inv = init.inverse();  // scene -> model
    auto truncated_cost = [&](const Pose& phi, double cap) {
        double sum = 0.0;
        for (const Vec3& s : scene_samples.points) {
            const double d = std::min(field.distance(phi.apply(s)), cap);
            sum += d * d;
        }
        return sum;
    };
    auto mean_residual = [&](const Pose& phi) {
        double sum = 0.0;
        for (const Vec3& s : scene_samples.points)
            sum += std::min(field.distance(phi.apply(s)), cap_final);
        return sum / static_cast<double>(scene_samples.size());
    };

    IcpResult result;
    result.initial_mean = mean_residual(inv);

    // Truncation adapts to the current fit: twice the median residual of
    // the near band, clamped to [3, 12] * tau_theta. Wide while badly
    // aligned, tight once converged, and far clutter never contributes.
    const double cap_max = 4.0 * cap_final;
    std::vector<double> res;
    res.reserve(scene_samples.size());
    auto adaptive_cap = [&]() {
        res.clear();
        for (const Vec3& s : scene_samples.points) {
            const double r = field.distance(inv.apply(s));
            if (r <= cap_max) res.push_back(r);
        }
        if (res.size() < scene_samples.size() / 10) return cap_max;
        std::nth_element(res.begin(), res.begin() + res.size() / 2, res.end());
        return std::clamp(2.0 * res[res.size() / 2], cap_final, cap_max);
    };

    double lambda = params.lm_lambda_init;
    double cap = adaptive_cap();
    for (int it = 0; it < max_iters; ++it) {
        cap = std::max(cap_final, std::min(cap, adaptive_cap()));  // non-increasing
        Eigen::Matrix<double, 6, 6> hess = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> grad = Eigen::Matrix<double, 6, 1>::Zero();
        for (const Vec3& s : scene_samples.points) {
            const Vec3 x = inv.apply(s);
            const double r = field.distance(x);
            if (r > cap || r <= 0.0) continue;
            // stencil narrower than the residual so it never straddles
            // the kink at the surface
            const double hs = std::min(h, 0.5 * r);
            Vec3 g;
            for (int k = 0; k < 3; ++k) {
                Vec3 dp = Vec3::Zero();
                dp[k] = hs;
                g[k] = (field.distance(x + dp) - field.distance(x - dp)) / (2.0 * hs);
            }
            Eigen::Matrix<double, 6, 1> jac;
            jac.head<3>() = x.cross(g);  // d r / d delta_w
            jac.tail<3>() = g;           // d r / d delta_t
            hess += jac * jac.transpose();
            grad += jac * r;
        }
        const double cost = truncated_cost(inv, cap);
        bool stepped = false;
        for (int attempt = 0; attempt < 8; ++attempt) {
            Eigen::Matrix<double, 6, 6> damped = hess;
            for (int k = 0; k < 6; ++k)
                damped(k, k) += lambda * std::max(hess(k, k), 1e-12);
            const Eigen::Matrix<double, 6, 1> delta = damped.ldlt().solve(-grad);
            if (!delta.allFinite()) {
                lambda *= params.lm_lambda_factor;
                continue;
            }
            Pose trial;
            const Mat3 rot = rotation_from_angle_axis(delta.head<3>());
            trial.rotation = rot * inv.rotation;
            trial.translation = rot * inv.translation + delta.tail<3>();
            const double trial_cost = truncated_cost(trial, cap);
            if (trial_cost < cost) {
                inv = trial;
                lambda = std::max(lambda / params.lm_lambda_factor, 1e-12);
                stepped = true;
                result.iterations = it + 1;
                if (delta.norm() < 1e-7 && cap <= cap_final) it = max_iters;  // converged
                break;
            }
            lambda *= params.lm_lambda_factor;
        }
        if (!stepped) {
            if (cap <= cap_final) break;
            // stuck at a wide cap: tighten it and retry
            cap = std::max(cap_final, 0.5 * cap);
            lambda = params.lm_lambda_init;
        }
    }

    result.final_mean = mean_residual(inv);
    result.diverged = result.final_mean > 2.0 * result.initial_mean;
    result.pose = inv.inverse();
    return result;
}

namespace detail {

// Rigid alignment minimizing sum |R a_i + t - b_i|^2 (Horn / Kabsch).
inline Pose absolute_orientation(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
    for (std::size_t i = 0; i < a.size(); ++i) {
        ca += a[i];
        cb += b[i];
    }
    ca /= static_cast<double>(a.size());
    cb /= static_cast<double>(a.size());
    Mat3 cov = Mat3::Zero();
    for (std::size_t i = 0; i < a.size(); ++i) cov += (b[i] - cb) * (a[i] - ca).transpose();
    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
    Pose out;
    out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
    out.translation = cb - out.rotation * ca;
    return out;
}

// Point-to-point ICP with exact nearest neighbors, trimmed at 3*tau.
inline Pose dense_icp(const OrientedPointCloud& model_samples, const KdIndex& scene_index,
                      Pose pose, double tau_theta, int max_iters) {
    const double trim2 = 9.0 * tau_theta * tau_theta;
    for (int it = 0; it < max_iters; ++it) {
        std::vector<Vec3> src, dst;
        src.reserve(model_samples.size());
        dst.reserve(model_samples.size());
        for (const Vec3& m : model_samples.points) {
            const auto hit = scene_index.nearest(pose.apply(m));
            if (hit.dist2 <= trim2) {
                src.push_back(m);
                dst.push_back(scene_index.points()[hit.index]);
            }
        }
        if (src.size() < 3) break;
        const Pose updated = absolute_orientation(src, dst);
        const double change = rotation_distance(updated, pose) +
                              translation_distance(updated, pose) / std::max(tau_theta, 1e-12);
        pose = updated;
        if (change < 1e-9) break;
    }
    return pose;
}

inline double estimate_spacing(const OrientedPointCloud& cloud) {
    KdIndex index(cloud.points);
    double sum = 0.0;
    std::size_t count = 0;
    const std::size_t stride = std::max<std::size_t>(1, cloud.size() / 200);
    for (std::size_t i = 0; i < cloud.size(); i += stride) {
        const auto nb = index.knn(cloud.points[i], 2);
        if (nb.size() == 2) {
            sum += std::sqrt(nb[1].dist2);
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 1.0;
}

}  // namespace detail

// Coarse-to-fine verification of pose clusters: sparse LM-ICP against the
// distance transform at increasing scene density, a linear-ramp score
// cull after each level, then a dense exact-NN registration, final score
// and normal-consistency check.
inline std::vector<VerifiedPose> verify_all(const std::vector<PoseCluster>& clusters,
                                            const OrientedPointCloud& scene,
                                            const OrientedPointCloud& model_samples,
                                            VerifierParams params) {
    std::vector<VerifiedPose> out;
    if (clusters.empty() || scene.empty() || model_samples.empty()) return out;

    const double spacing = detail::estimate_spacing(model_samples);
    if (params.tau_theta <= 0.0) params.tau_theta = spacing;  // conservative fallback
    const double voxel =
        params.field_voxel_size > 0.0 ? params.field_voxel_size : 0.5 * spacing;

    const DistanceField field = build_distance_field(model_samples, voxel);
    const KdIndex scene_index(scene.points);
    const KdIndex model_index(model_samples.points);

    struct Candidate {
        Pose pose;
        double score = 0.0;
        bool alive = true;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(clusters.size());
    for (const auto& c : clusters) candidates.push_back({c.mean_pose, 0.0, true});

    const int levels = std::max(1, params.pyramid_levels);
    for (int level = 0; level < levels; ++level) {
        const double factor =
            level < static_cast<int>(params.level_sample_factors.size())
                ? params.level_sample_factors[level]
                : 1.0;
        const auto stride = static_cast<std::size_t>(std::max(1.0, std::round(1.0 / factor)));
        OrientedPointCloud sub;
        for (std::size_t i = 0; i < scene.size(); i += stride)
            sub.push_back(scene.points[i], scene.normals[i]);

        parallel_for(candidates.size(), [&](std::size_t i) {
            if (!candidates[i].alive) return;
            const IcpResult icp = sparse_lm_icp(sub, candidates[i].pose, field, params, level);
            if (icp.diverged) {
                candidates[i].alive = false;
                return;
            }
            candidates[i].pose = icp.pose;
            candidates[i].score = score(icp.pose, model_samples, scene_index, params.tau_theta);
        });

        const double cull =
            params.score_threshold * (0.5 + 0.5 * static_cast<double>(level + 1) / levels);
        for (auto& c : candidates)
            if (c.alive && c.score < cull) c.alive = false;
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) {
                             if (a.alive != b.alive) return a.alive;
                             return a.score > b.score;
                         });
        while (!candidates.empty() && !candidates.back().alive) candidates.pop_back();
        if (candidates.empty()) return out;
    }

    std::vector<VerifiedPose> verified(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) {
        VerifiedPose v;
        v.pose = detail::dense_icp(model_samples, scene_index, candidates[i].pose,
                                   params.tau_theta, params.final_icp_iters);
        v.score = score(v.pose, model_samples, scene_index, params.tau_theta);
        const auto inliers = segment_inliers(v.pose, scene, model_index, params.tau_theta);
        if (!inliers.empty()) {
            OrientedPointCloud segment;
            for (std::uint32_t idx : inliers)
                segment.push_back(scene.points[idx], scene.normals[idx]);
            v.normal_consistency = normal_consistency(v.pose, segment, model_samples,
                                                      model_index, params.normal_angle_max);
        }
        v.accepted = v.score >= params.score_threshold &&
                     v.normal_consistency >= params.normal_threshold;
        verified[i] = v;
    });

    std::stable_sort(verified.begin(), verified.end(),
                     [](const VerifiedPose& a, const VerifiedPose& b) { return a.score > b.score; });
    // duplicates converge to the same pose; keep the best-scoring one
    const double dpos = params.dedup_trans_factor * params.tau_theta;
    for (const VerifiedPose& v : verified) {
        bool dup = false;
        for (const VerifiedPose& kept : out)
            if (rotation_distance(v.pose, kept.pose) < params.dedup_rot_thresh &&
                translation_distance(v.pose, kept.pose) < dpos) {
                dup = true;
                break;
            }
        if (!dup) out.push_back(v);
    }
    return out;
}

}  // namespace cadrec
