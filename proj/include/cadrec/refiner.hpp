#pragma once

#include "cadrec/kdtree.hpp"
#include "cadrec/parallel.hpp"
#include "cadrec/pose_graph.hpp"

#include <Eigen/Cholesky>

namespace cadrec {

enum class RobustKernel { Huber, Quadratic };

struct RefineParams {
    RobustKernel kernel = RobustKernel::Huber;
    double kernel_scale = 0.0;  // 0: auto from the initial residual spread
    double reject_dist = 0.0;   // 0: auto = 2% of the joint bounding-box diagonal
    int outer_iters = 20;
    int inner_iters = 10;
    double lm_lambda_init = 1e-4;
    double lm_lambda_factor = 10.0;
    int max_solver_retries = 10;
    int fixed_frame = -1;  // node id; -1: auto = cloud with the most points
    double converge_rel = 1e-6;
};

// rho over the squared residual s = r^2; Huber is quadratic up to the
// scale and linear in |r| beyond it.
inline double robust_rho(RobustKernel kernel, double scale, double s) {
    if (kernel == RobustKernel::Quadratic) return s;
    const double s2 = scale * scale;
    return s <= s2 ? s : 2.0 * scale * std::sqrt(s) - s2;
}

// IRLS weight drho/ds.
inline double robust_weight(RobustKernel kernel, double scale, double s) {
    if (kernel == RobustKernel::Quadratic) return 1.0;
    const double s2 = scale * scale;
    return s <= s2 ? 1.0 : scale / std::sqrt(s);
}

// Signed point-to-plane distance (R p + t - q) . n_q.
inline double point_to_plane(const Vec3& p, const Vec3& q, const Vec3& n_q, const Mat3& r,
                             const Vec3& t) {
    return (r * p + t - q).dot(n_q);
}

struct Correspondence {
    Vec3 p;    // point in frame h
    Vec3 q;    // its nearest neighbor in frame k
    Vec3 n_q;  // unit normal at q, frame k
};

using CorrespondenceSet = std::vector<Correspondence>;

inline double pair_energy(const Pose& theta_h, const Pose& theta_k,
                          const CorrespondenceSet& corr, RobustKernel kernel, double scale) {
    const Pose rel = theta_k.inverse() * theta_h;
    double e = 0.0;
    for (const Correspondence& c : corr) {
        const double r = point_to_plane(c.p, c.q, c.n_q, rel.rotation, rel.translation);
        e += robust_rho(kernel, scale, r * r);
    }
    return e;
}

// Point-to-plane residual of one correspondence plus its gradient with
// respect to left perturbations (dw_h, dt_h, dw_k, dt_k) of the two
// absolute poses: R <- Exp(dw) R, t <- t + dt.
inline double residual_and_jacobian(const Pose& theta_h, const Pose& theta_k, const Vec3& p,
                                    const Vec3& q, const Vec3& n_q,
                                    Eigen::Matrix<double, 12, 1>* jac = nullptr) {
    const Vec3 a = theta_h.apply(p);
    const Vec3 b = theta_k.apply(q);
    const Vec3 n_g = theta_k.rotate(n_q);
    const double r = (a - b).dot(n_g);
    if (jac) {
        const Vec3 rp = theta_h.rotation * p;
        const Vec3 rq = theta_k.rotation * q;
        jac->segment<3>(0) = rp.cross(n_g);                   // d r / d dw_h
        jac->segment<3>(3) = n_g;                             // d r / d dt_h
        jac->segment<3>(6) = -rq.cross(n_g) + n_g.cross(a - b);  // d r / d dw_k
        jac->segment<3>(9) = -n_g;                            // d r / d dt_k
    }
    return r;
}

struct RefineReport {
    std::vector<double> outer_energy;  // energy after each outer iteration
    std::vector<std::vector<double>> accepted_energies;  // per outer, per accepted LM step
    std::vector<std::vector<std::size_t>> edge_corr_counts;  // per outer, per directed edge
    int kd_builds = 0;
    int solver_retries = 0;
    std::uint32_t fixed_frame = 0;
    int outer_iterations = 0;
};

struct RefineResult {
    std::vector<GraphNode> nodes;  // updated absolute poses
    RefineReport report;
};

namespace detail {

struct DirectedEdge {
    std::size_t h = 0, k = 0;  // node indices
    CorrespondenceSet corr;
};

inline CorrespondenceSet find_correspondences(const OrientedPointCloud& cloud_h,
                                              const OrientedPointCloud& cloud_k,
                                              const KdIndex& index_k, const Pose& rel,
                                              double reject_dist) {
    CorrespondenceSet corr;
    corr.reserve(cloud_h.size());
    const double r2 = reject_dist * reject_dist;
    for (const Vec3& p : cloud_h.points) {
        const auto hit = index_k.nearest(rel.apply(p));
        if (hit.dist2 > r2) continue;
        corr.push_back({p, cloud_k.points[hit.index], cloud_k.normals[hit.index]});
    }
    return corr;
}

}  // namespace detail

// Energy of Eq-style stacked pairs over the symmetrized adjacency: each
// undirected graph edge contributes both directions, with correspondences
// built from fresh per-cloud KD indices.
inline double total_energy(const std::vector<GraphNode>& nodes, const PoseGraph& graph,
                           const std::vector<OrientedPointCloud>& clouds,
                           const RefineParams& params) {
    double diag = 1.0;
    {
        bool any = false;
        Vec3 lo = Vec3::Zero(), hi = Vec3::Zero();
        for (std::size_t i = 0; i < clouds.size(); ++i)
            for (const Vec3& p : clouds[i].points) {
                const Vec3 g = nodes[i].pose.apply(p);
                if (!any) {
                    lo = hi = g;
                    any = true;
                } else {
                    lo = lo.cwiseMin(g);
                    hi = hi.cwiseMax(g);
                }
            }
        if (any) diag = (hi - lo).norm();
    }
    const double reject = params.reject_dist > 0.0 ? params.reject_dist : 0.02 * diag;
    const double scale = params.kernel_scale > 0.0 ? params.kernel_scale : 0.1 * reject;

    std::vector<KdIndex> indices;
    indices.reserve(clouds.size());
    for (const auto& c : clouds) indices.emplace_back(c.points);

    double energy = 0.0;
    for (const GraphEdge& e : graph.edges) {
        const std::size_t hi_ = graph.node_index(e.i);
        const std::size_t ki_ = graph.node_index(e.j);
        for (auto [h, k] : {std::pair{hi_, ki_}, std::pair{ki_, hi_}}) {
            const Pose rel = nodes[k].pose.inverse() * nodes[h].pose;
            const auto corr =
                detail::find_correspondences(clouds[h], clouds[k], indices[k], rel, reject);
            energy += pair_energy(nodes[h].pose, nodes[k].pose, corr, params.kernel, scale);
        }
    }
    return energy;
}

// Joint LM refinement of all absolute poses against the robust multiview
// point-to-plane energy. KD indices are built once per cloud; outer
// iterations rebuild correspondences, inner iterations take IRLS-weighted
// LM steps. The fixed frame's pose is never touched.
inline RefineResult refine(const PoseGraph& graph,
                           const std::vector<OrientedPointCloud>& clouds,
                           const RefineParams& params) {
    const std::size_t n = graph.nodes.size();
    if (n == 0 || clouds.size() != n)
        throw Error(ErrorCode::InvalidConfig, "refine: node/cloud count mismatch");

    {
        UnionFind uf(n);
        for (const GraphEdge& e : graph.edges)
            uf.unite(static_cast<std::uint32_t>(graph.node_index(e.i)),
                     static_cast<std::uint32_t>(graph.node_index(e.j)));
        if (!uf.connected())
            throw Error(ErrorCode::DisconnectedGraph, "refine: pose graph is not connected");
    }

    RefineResult result;
    result.nodes = graph.nodes;
    RefineReport& report = result.report;

    // fixed gauge frame: requested id, or the cloud with the most points
    std::size_t fixed = 0;
    if (params.fixed_frame >= 0) {
        fixed = graph.node_index(static_cast<std::uint32_t>(params.fixed_frame));
    } else {
        for (std::size_t i = 1; i < n; ++i)
            if (clouds[i].size() > clouds[fixed].size()) fixed = i;
    }
    report.fixed_frame = graph.nodes[fixed].id;

    std::vector<KdIndex> indices;
    indices.reserve(n);
    for (const auto& c : clouds) {
        indices.emplace_back(c.points);
        ++report.kd_builds;
    }

    std::vector<detail::DirectedEdge> dir_edges;
    for (const GraphEdge& e : graph.edges) {
        const std::size_t h = graph.node_index(e.i);
        const std::size_t k = graph.node_index(e.j);
        dir_edges.push_back({h, k, {}});
        dir_edges.push_back({k, h, {}});
    }
    if (dir_edges.empty()) {
        if (n > 1) throw Error(ErrorCode::DisconnectedGraph, "refine: no edges");
        return result;  // single view: nothing to align
    }

    double reject = params.reject_dist;
    if (reject <= 0.0) {
        // 2% of the merged extent, measured rotation-invariantly by a
        // farthest-point double sweep so the choice is gauge-independent
        std::vector<Vec3> merged;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t stride = std::max<std::size_t>(1, clouds[i].size() / 400);
            for (std::size_t k = 0; k < clouds[i].size(); k += stride)
                merged.push_back(result.nodes[i].pose.apply(clouds[i].points[k]));
        }
        double extent = 0.0;
        if (merged.size() >= 2) {
            auto farthest = [&](const Vec3& from) {
                std::size_t arg = 0;
                double best = -1.0;
                for (std::size_t i = 0; i < merged.size(); ++i) {
                    const double d = (merged[i] - from).squaredNorm();
                    if (d > best) {
                        best = d;
                        arg = i;
                    }
                }
                return arg;
            };
            std::size_t a = farthest(merged[0]);
            for (int sweep = 0; sweep < 3; ++sweep) {
                const std::size_t b = farthest(merged[a]);
                const double d = (merged[a] - merged[b]).norm();
                if (d <= extent) break;
                extent = d;
                a = b;
            }
        }
        reject = extent > 0.0 ? 0.02 * extent : 1.0;
    }

    // parameter layout: 6 per non-fixed node
    std::vector<int> param_of(n, -1);
    {
        int slot = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (i != fixed) param_of[i] = 6 * slot++;
    }
    const int n_params = static_cast<int>(6 * (n - 1));

    double kernel_scale = params.kernel_scale;
    double prev_energy = std::numeric_limits<double>::infinity();

    for (int outer = 0; outer < params.outer_iters; ++outer) {
        // correspondences in the current poses, parallel over edges
        parallel_for(dir_edges.size(), [&](std::size_t e) {
            auto& edge = dir_edges[e];
            const Pose rel =
                result.nodes[edge.k].pose.inverse() * result.nodes[edge.h].pose;
            edge.corr = detail::find_correspondences(clouds[edge.h], clouds[edge.k],
                                                     indices[edge.k], rel, reject);
        });
        report.edge_corr_counts.emplace_back();
        for (const auto& edge : dir_edges)
            report.edge_corr_counts.back().push_back(edge.corr.size());

        if (params.kernel_scale <= 0.0) {
            // 3x the robust noise estimate (MAD) of the current residuals,
            // re-estimated every outer iteration as alignment improves
            std::vector<double> abs_r;
            for (const auto& edge : dir_edges) {
                const Pose rel =
                    result.nodes[edge.k].pose.inverse() * result.nodes[edge.h].pose;
                for (const Correspondence& c : edge.corr)
                    abs_r.push_back(std::abs(
                        point_to_plane(c.p, c.q, c.n_q, rel.rotation, rel.translation)));
            }
            if (abs_r.empty()) {
                kernel_scale = 0.1 * reject;
            } else {
                std::nth_element(abs_r.begin(), abs_r.begin() + abs_r.size() / 2, abs_r.end());
                const double sigma = 1.4826 * abs_r[abs_r.size() / 2];
                kernel_scale = std::max(3.0 * sigma, 1e-9 * reject);
            }
        }

        auto energy_at = [&](const std::vector<GraphNode>& nodes) {
            double e = 0.0;
            for (const auto& edge : dir_edges)
                e += pair_energy(nodes[edge.h].pose, nodes[edge.k].pose, edge.corr,
                                 params.kernel, kernel_scale);
            return e;
        };

        double energy = energy_at(result.nodes);
        report.accepted_energies.emplace_back();
        report.accepted_energies.back().push_back(energy);

        double lambda = params.lm_lambda_init;
        for (int inner = 0; inner < params.inner_iters; ++inner) {
            // assemble normal equations; per-edge blocks are accumulated
            // in edge order so the result is run-to-run identical
            Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(n_params, n_params);
            Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
            std::vector<Eigen::Matrix<double, 12, 12>> edge_h(dir_edges.size());
            std::vector<Eigen::Matrix<double, 12, 1>> edge_g(dir_edges.size());
            parallel_for(dir_edges.size(), [&](std::size_t e) {
                const auto& edge = dir_edges[e];
                Eigen::Matrix<double, 12, 12> hacc = Eigen::Matrix<double, 12, 12>::Zero();
                Eigen::Matrix<double, 12, 1> gacc = Eigen::Matrix<double, 12, 1>::Zero();
                const Pose& th = result.nodes[edge.h].pose;
                const Pose& tk = result.nodes[edge.k].pose;
                Eigen::Matrix<double, 12, 1> jac;
                for (const Correspondence& c : edge.corr) {
                    const double r = residual_and_jacobian(th, tk, c.p, c.q, c.n_q, &jac);
                    const double w = robust_weight(params.kernel, kernel_scale, r * r);
                    hacc += w * jac * jac.transpose();
                    gacc += w * jac * r;
                }
                edge_h[e] = hacc;
                edge_g[e] = gacc;
            });
            for (std::size_t e = 0; e < dir_edges.size(); ++e) {
                const int ph = param_of[dir_edges[e].h];
                const int pk = param_of[dir_edges[e].k];
                const int offs[2] = {ph, pk};
                for (int bi = 0; bi < 2; ++bi) {
                    if (offs[bi] < 0) continue;
                    grad.segment<6>(offs[bi]) += edge_g[e].segment<6>(6 * bi);
                    for (int bj = 0; bj < 2; ++bj) {
                        if (offs[bj] < 0) continue;
                        hess.block<6, 6>(offs[bi], offs[bj]) +=
                            edge_h[e].block<6, 6>(6 * bi, 6 * bj);
                    }
                }
            }

            bool stepped = false;
            for (int attempt = 0; attempt <= params.max_solver_retries; ++attempt) {
                Eigen::MatrixXd damped = hess;
                for (int d = 0; d < n_params; ++d)
                    damped(d, d) += lambda * std::max(hess(d, d), 1e-12);
                const Eigen::VectorXd delta = damped.ldlt().solve(-grad);
                if (!delta.allFinite()) {
                    lambda *= params.lm_lambda_factor;
                    ++report.solver_retries;
                    if (attempt == params.max_solver_retries)
                        throw Error(ErrorCode::SingularNormalEquations,
                                    "refine: normal equations unsolvable after " +
                                        std::to_string(report.solver_retries) + " retries");
                    continue;
                }
                std::vector<GraphNode> trial = result.nodes;
                for (std::size_t i = 0; i < n; ++i) {
                    if (param_of[i] < 0) continue;
                    const Vec3 dw = delta.segment<3>(param_of[i]);
                    const Vec3 dt = delta.segment<3>(param_of[i] + 3);
                    trial[i].pose.rotation =
                        rotation_from_angle_axis(dw) * trial[i].pose.rotation;
                    trial[i].pose.translation += dt;
                }
                const double trial_energy = energy_at(trial);
                if (trial_energy < energy) {
                    result.nodes = std::move(trial);
                    energy = trial_energy;
                    report.accepted_energies.back().push_back(energy);
                    lambda = std::max(lambda / params.lm_lambda_factor, 1e-15);
                    stepped = true;
                    break;
                }
                lambda *= params.lm_lambda_factor;
            }
            if (!stepped) break;
        }

        report.outer_energy.push_back(energy);
        report.outer_iterations = outer + 1;
        if (prev_energy < std::numeric_limits<double>::infinity()) {
            const double rel =
                (prev_energy - energy) / std::max(std::abs(prev_energy), 1e-300);
            if (rel >= 0.0 && rel < params.converge_rel) break;
        }
        prev_energy = energy;
    }
    return result;
}

}  // namespace cadrec
