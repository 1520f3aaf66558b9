#pragma once

#include "cadrec/detector.hpp"
#include "cadrec/json_io.hpp"
#include "cadrec/pose_graph.hpp"
#include "cadrec/refiner.hpp"
#include "cadrec/verifier.hpp"

namespace cadrec {

// Pipeline-wide settings. Length-valued fields set to 0 resolve to the
// model-relative defaults noted inline once the model scale is known.
struct PipelineConfig {
    double unit_scale = 1.0;  // applied to every loaded geometry
    double tau = 0.05;        // model/scene sampling distance, relative to diam
    double angle_step = kPi / 15.0;

    DetectorParams detector;
    VerifierParams verifier;  // tau_theta 0: 0.01 * diam
    RefineParams refiner;

    double graph_voxel_rel = 2.0;  // voxel = rel * sampling distance
    double graph_alpha_l = 0.05;
    double graph_alpha_h = 0.3;
    bool graph_relative_thresholds = true;

    double refine_sample_rel = 0.5;  // refine cloud spacing = rel * sampling distance

    void validate() const {
        auto check = [](bool ok, const std::string& what) {
            if (!ok) throw Error(ErrorCode::InvalidConfig, "config: " + what);
        };
        check(unit_scale > 0.0, "unit_scale must be > 0");
        check(tau > 0.0 && tau < 0.2, "tau must be in (0, 0.2)");
        check(angle_step > 0.0 && angle_step <= kPi, "angle_step must be in (0, pi]");
        check(detector.soft_bins >= 1, "detector.soft_bins must be >= 1");
        check(detector.n_alpha_bins >= 8, "detector.n_alpha_bins must be >= 8");
        check(detector.ref_fraction > 0.0 && detector.ref_fraction <= 1.0,
              "detector.ref_fraction must be in (0, 1]");
        check(verifier.score_threshold > 0.0 && verifier.score_threshold <= 1.0,
              "verifier.score_threshold must be in (0, 1]");
        check(verifier.normal_threshold > 0.0 && verifier.normal_threshold <= 1.0,
              "verifier.normal_threshold must be in (0, 1]");
        check(verifier.pyramid_levels >= 1, "verifier.pyramid_levels must be >= 1");
        check(graph_alpha_l >= 0.0 && graph_alpha_h >= graph_alpha_l,
              "graph thresholds must satisfy 0 <= alpha_l <= alpha_h");
        check(refiner.outer_iters >= 1, "refiner.outer_iters must be >= 1");
    }
};

inline PipelineConfig config_from_json(const Json& j) {
    PipelineConfig c;
    c.unit_scale = j.value("unit_scale", c.unit_scale);
    c.tau = j.value("tau", c.tau);
    if (j.contains("angle_step_deg")) c.angle_step = j["angle_step_deg"].get<double>() * kPi / 180.0;

    if (j.contains("detector")) {
        const Json& d = j["detector"];
        c.detector.soft_bins = d.value("soft_bins", c.detector.soft_bins);
        c.detector.n_alpha_bins = d.value("n_alpha_bins", c.detector.n_alpha_bins);
        c.detector.ref_fraction = d.value("ref_fraction", c.detector.ref_fraction);
        if (d.contains("cluster_rot_deg"))
            c.detector.cluster_rot_thresh = d["cluster_rot_deg"].get<double>() * kPi / 180.0;
        c.detector.cluster_trans_thresh =
            d.value("cluster_trans_thresh", c.detector.cluster_trans_thresh);
    }
    if (j.contains("verifier")) {
        const Json& v = j["verifier"];
        c.verifier.tau_theta = v.value("tau_theta", c.verifier.tau_theta);
        c.verifier.score_threshold = v.value("score_threshold", c.verifier.score_threshold);
        c.verifier.normal_threshold = v.value("normal_threshold", c.verifier.normal_threshold);
        if (v.contains("normal_angle_max_deg"))
            c.verifier.normal_angle_max = v["normal_angle_max_deg"].get<double>() * kPi / 180.0;
        c.verifier.pyramid_levels = v.value("pyramid_levels", c.verifier.pyramid_levels);
        if (v.contains("level_sample_factors"))
            c.verifier.level_sample_factors =
                v["level_sample_factors"].get<std::vector<double>>();
        if (v.contains("icp_max_iters"))
            c.verifier.icp_max_iters = v["icp_max_iters"].get<std::vector<int>>();
        c.verifier.final_icp_iters = v.value("final_icp_iters", c.verifier.final_icp_iters);
        c.verifier.lm_lambda_init = v.value("lm_lambda_init", c.verifier.lm_lambda_init);
        c.verifier.lm_lambda_factor = v.value("lm_lambda_factor", c.verifier.lm_lambda_factor);
        c.verifier.field_voxel_size = v.value("field_voxel_size", c.verifier.field_voxel_size);
    }
    if (j.contains("graph")) {
        const Json& g = j["graph"];
        c.graph_voxel_rel = g.value("voxel_rel", c.graph_voxel_rel);
        c.graph_alpha_l = g.value("alpha_l", c.graph_alpha_l);
        c.graph_alpha_h = g.value("alpha_h", c.graph_alpha_h);
        c.graph_relative_thresholds = g.value("relative_thresholds", c.graph_relative_thresholds);
    }
    if (j.contains("refiner")) {
        const Json& r = j["refiner"];
        const std::string kernel = r.value("kernel", std::string{"huber"});
        if (kernel == "huber")
            c.refiner.kernel = RobustKernel::Huber;
        else if (kernel == "quadratic")
            c.refiner.kernel = RobustKernel::Quadratic;
        else
            throw Error(ErrorCode::InvalidConfig, "config: unknown kernel '" + kernel + "'");
        c.refiner.kernel_scale = r.value("kernel_scale", c.refiner.kernel_scale);
        c.refiner.reject_dist = r.value("reject_dist", c.refiner.reject_dist);
        c.refiner.outer_iters = r.value("outer_iters", c.refiner.outer_iters);
        c.refiner.inner_iters = r.value("inner_iters", c.refiner.inner_iters);
        c.refiner.fixed_frame = r.value("fixed_frame", c.refiner.fixed_frame);
        c.refine_sample_rel = r.value("sample_rel", c.refine_sample_rel);
    }
    c.validate();
    return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    return config_from_json(load_json(path));
}

}  // namespace cadrec
