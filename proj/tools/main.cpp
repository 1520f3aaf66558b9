// cadrec: reconstruct an object instance from unordered cluttered scans
// using a CAD proxy. Subcommands cover the whole pipeline:
//   train -> detect -> verify -> graph -> refine -> reconstruct -> eval
// plus a synthetic data generator. Diagnostics go to stderr, machine
// output only to files. Exit codes: 0 ok, 1 usage, 2 bad data, 3 pipeline
// failure.

#include "cadrec/cadrec.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace fs = std::filesystem;
using namespace cadrec;

namespace {

int exit_code_for(const Error& e) {
    switch (e.code) {
        case ErrorCode::NoHypotheses:
        case ErrorCode::DisconnectedGraph:
        case ErrorCode::SingularNormalEquations:
            return 3;
        default:
            return 2;
    }
}

PipelineConfig load_config_opt(const std::string& path) {
    if (path.empty()) return PipelineConfig{};
    return load_config(path);
}

TriMesh load_scaled_mesh(const std::string& path, double unit_scale) {
    TriMesh mesh = load_mesh(path);
    if (unit_scale != 1.0)
        for (Vec3& v : mesh.vertices) v *= unit_scale;
    return mesh;
}

OrientedPointCloud load_scaled_cloud(const std::string& path, double unit_scale) {
    OrientedPointCloud cloud = load_cloud(path).cloud;
    if (unit_scale != 1.0)
        for (Vec3& p : cloud.points) p *= unit_scale;
    return cloud;
}

std::vector<fs::path> list_ply(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw Error(ErrorCode::MalformedFile, dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".ply") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

double resolve_tau_theta(const PipelineConfig& cfg, const Codebook& cb) {
    return cfg.verifier.tau_theta > 0.0 ? cfg.verifier.tau_theta : 0.01 * cb.model_diameter;
}

VerifierParams resolve_verifier(const PipelineConfig& cfg, const Codebook& cb) {
    VerifierParams v = cfg.verifier;
    v.tau_theta = resolve_tau_theta(cfg, cb);
    if (v.field_voxel_size <= 0.0) v.field_voxel_size = 0.5 * cb.dist_step;
    return v;
}

int run_train(const std::string& model_path, const std::string& out_path, double tau_flag,
              const std::string& config_path) {
    PipelineConfig cfg = load_config_opt(config_path);
    if (tau_flag > 0.0) cfg.tau = tau_flag;
    cfg.validate();
    const TriMesh mesh = load_scaled_mesh(model_path, cfg.unit_scale);
    std::cerr << "training on " << mesh.vertices.size() << " vertices, tau=" << cfg.tau << "\n";
    const Codebook cb = train(mesh, cfg.tau, cfg.angle_step);
    std::cerr << "codebook: " << cb.sampled_model.size() << " samples, " << cb.table.size()
              << " buckets, " << cb.total_entries() << " entries\n";
    save_codebook(cb, out_path);
    return 0;
}

int run_detect(const std::string& codebook_path, const std::string& scene_path,
               const std::string& out_path, const std::string& config_path) {
    const PipelineConfig cfg = load_config_opt(config_path);
    const Codebook cb = load_codebook(codebook_path);
    const OrientedPointCloud scene = load_scaled_cloud(scene_path, cfg.unit_scale);
    const DetectionResult result = detect(scene, cb, cfg.detector);
    std::cerr << scene_path << ": " << result.sampled_scene.size() << " samples, "
              << result.hypotheses.size() << " hypotheses, " << result.clusters.size()
              << " clusters\n";
    save_json(clusters_to_json(result.clusters), out_path);
    return 0;
}

int run_verify(const std::string& codebook_path, const std::string& scene_path,
               const std::string& hyps_path, const std::string& out_path,
               const std::string& config_path) {
    const PipelineConfig cfg = load_config_opt(config_path);
    const Codebook cb = load_codebook(codebook_path);
    const OrientedPointCloud scene = load_scaled_cloud(scene_path, cfg.unit_scale);
    const auto clusters = clusters_from_json(load_json(hyps_path));
    const VerifierParams vp = resolve_verifier(cfg, cb);
    // verification needs the scene at least as fine as the inlier
    // distance, otherwise the score cannot saturate at a true pose
    const OrientedPointCloud sampled =
        sample_uniform(scene, std::min(cb.dist_step, vp.tau_theta));
    const auto verified = verify_all(clusters, sampled, cb.sampled_model, vp);
    std::size_t accepted = 0;
    for (const auto& v : verified) accepted += v.accepted ? 1 : 0;
    std::cerr << scene_path << ": " << verified.size() << " verified poses, " << accepted
              << " accepted\n";
    save_json(verified_to_json(verified), out_path);
    return 0;
}

int run_graph(const std::string& codebook_path, const std::string& scenes_dir,
              const std::string& verified_dir, const std::string& out_path,
              const std::string& config_path) {
    const PipelineConfig cfg = load_config_opt(config_path);
    const Codebook cb = load_codebook(codebook_path);
    const double tau_theta = resolve_tau_theta(cfg, cb);
    const KdIndex model_index(cb.sampled_model.points);

    GraphParams gp;
    gp.voxel_size = cfg.graph_voxel_rel * cb.dist_step;
    gp.alpha_l = cfg.graph_alpha_l;
    gp.alpha_h = cfg.graph_alpha_h;
    gp.relative_thresholds = cfg.graph_relative_thresholds;
    PoseGraphBuilder builder(gp);

    GraphArtifact art;
    std::vector<GraphNode> nodes;
    std::uint32_t camera = 0;
    for (const fs::path& scene_file : list_ply(scenes_dir)) {
        const fs::path verified_file =
            fs::path(verified_dir) / (scene_file.stem().string() + ".json");
        if (!fs::exists(verified_file)) {
            std::cerr << "skip " << scene_file << ": no " << verified_file << "\n";
            continue;
        }
        const auto verified = verified_from_json(load_json(verified_file));
        const VerifiedPose* best = nullptr;
        for (const auto& v : verified)
            if (v.accepted) {
                best = &v;
                break;  // already sorted by score
            }
        if (!best) {
            std::cerr << "skip " << scene_file << ": no accepted pose\n";
            continue;
        }
        const OrientedPointCloud scene = load_scaled_cloud(scene_file.string(), cfg.unit_scale);
        const auto segment = segment_inliers(best->pose, scene, model_index, tau_theta);
        if (segment.empty()) {
            std::cerr << "skip " << scene_file << ": empty segment\n";
            continue;
        }
        const Pose to_model = best->pose.inverse();  // camera -> model frame
        OrientedPointCloud model_frame;
        model_frame.points.reserve(segment.size());
        for (std::uint32_t idx : segment)
            model_frame.push_back(to_model.apply(scene.points[idx]),
                                  to_model.rotate(scene.normals[idx]));
        const auto ins = builder.insert_view(camera, model_frame);
        std::cerr << scene_file.filename().string() << ": camera " << camera << ", "
                  << segment.size() << " segment points, " << ins.new_edges.size()
                  << " new edges\n";
        nodes.push_back({camera, to_model});
        art.files.push_back(scene_file.filename().string());
        art.segments.push_back(segment);
        ++camera;
    }
    if (nodes.empty())
        throw Error(ErrorCode::NoHypotheses, "graph: no scene produced an accepted pose");

    art.graph = make_pose_graph(nodes, builder.selection().edges);
    const CoverageFeedback fb = coverage_feedback(builder.index(), cb.sampled_model);
    art.coverage = fb.fraction;
    art.uncovered_count = fb.uncovered.size();
    art.refine_sample_dist = cfg.refine_sample_rel * cb.dist_step;

    std::cerr << "graph: " << art.graph.nodes.size() << " cameras, " << art.graph.edges.size()
              << " edges, " << (builder.selection().connected ? "connected" : "DISCONNECTED")
              << "\n";
    std::cerr << "coverage: " << fb.fraction << " (" << fb.uncovered.size()
              << " unscanned model samples)\n";
    save_json(graph_to_json(art), out_path);
    return 0;
}

int run_refine(const std::string& graph_path, const std::string& scenes_dir,
               const std::string& out_path, const std::string& report_path,
               const std::string& config_path) {
    const PipelineConfig cfg = load_config_opt(config_path);
    GraphArtifact art = graph_from_json(load_json(graph_path));
    if (art.graph.nodes.empty())
        throw Error(ErrorCode::NoHypotheses, "refine: graph has no nodes");

    // largest-connected-subgraph fallback
    {
        UnionFind uf(art.graph.nodes.size());
        for (const GraphEdge& e : art.graph.edges)
            uf.unite(static_cast<std::uint32_t>(art.graph.node_index(e.i)),
                     static_cast<std::uint32_t>(art.graph.node_index(e.j)));
        if (!uf.connected()) {
            const auto keep = largest_component(uf);
            std::cerr << "refine: graph disconnected, keeping largest component of "
                      << keep.size() << " cameras\n";
            GraphArtifact pruned;
            std::vector<bool> mask(art.graph.nodes.size(), false);
            for (std::uint32_t k : keep) mask[k] = true;
            for (std::size_t k = 0; k < art.graph.nodes.size(); ++k)
                if (mask[k]) {
                    pruned.graph.nodes.push_back(art.graph.nodes[k]);
                    pruned.files.push_back(art.files[k]);
                    pruned.segments.push_back(art.segments[k]);
                }
            for (const GraphEdge& e : art.graph.edges)
                if (mask[art.graph.node_index(e.i)] && mask[art.graph.node_index(e.j)])
                    pruned.graph.edges.push_back(e);
            pruned.coverage = art.coverage;
            pruned.refine_sample_dist = art.refine_sample_dist;
            art = std::move(pruned);
        }
    }

    std::vector<OrientedPointCloud> clouds;
    for (std::size_t k = 0; k < art.graph.nodes.size(); ++k) {
        const OrientedPointCloud scene =
            load_scaled_cloud((fs::path(scenes_dir) / art.files[k]).string(), cfg.unit_scale);
        OrientedPointCloud segment;
        segment.points.reserve(art.segments[k].size());
        for (std::uint32_t idx : art.segments[k]) {
            if (idx >= scene.size())
                throw Error(ErrorCode::MalformedFile, "refine: segment index out of range");
            segment.push_back(scene.points[idx], scene.normals[idx]);
        }
        double spacing = art.refine_sample_dist;
        OrientedPointCloud sampled =
            spacing > 0.0 ? sample_uniform(segment, spacing) : segment;
        while (sampled.size() > 30000) {  // keep within the per-scan budget
            spacing = spacing > 0.0 ? spacing * 1.5 : 1e-6;
            sampled = sample_uniform(segment, spacing);
        }
        clouds.push_back(std::move(sampled));
    }

    const RefineResult result = refine(art.graph, clouds, cfg.refiner);
    std::cerr << "refine: " << result.report.outer_iterations << " outer iterations, energy ";
    for (double e : result.report.outer_energy) std::cerr << e << " ";
    std::cerr << "\n";

    PosesArtifact poses;
    poses.nodes = result.nodes;
    poses.files = art.files;
    poses.segments = art.segments;
    save_json(poses_to_json(poses), out_path);
    if (!report_path.empty()) save_json(report_to_json(result.report), report_path);
    return 0;
}

int run_reconstruct(const std::string& poses_path, const std::string& scenes_dir,
                    const std::string& out_path, const std::string& config_path) {
    const PipelineConfig cfg = load_config_opt(config_path);
    const PosesArtifact poses = poses_from_json(load_json(poses_path));
    if (poses.nodes.empty())
        throw Error(ErrorCode::NoHypotheses, "reconstruct: no poses");
    OrientedPointCloud recon;
    for (std::size_t k = 0; k < poses.nodes.size(); ++k) {
        const OrientedPointCloud scene =
            load_scaled_cloud((fs::path(scenes_dir) / poses.files[k]).string(), cfg.unit_scale);
        const Pose& to_model = poses.nodes[k].pose;
        for (std::uint32_t idx : poses.segments[k]) {
            if (idx >= scene.size())
                throw Error(ErrorCode::MalformedFile, "reconstruct: segment index out of range");
            recon.push_back(to_model.apply(scene.points[idx]),
                            to_model.rotate(scene.normals[idx]));
        }
    }
    if (recon.empty()) throw Error(ErrorCode::NoHypotheses, "reconstruct: empty union");
    std::cerr << "reconstruct: " << recon.size() << " points from " << poses.nodes.size()
              << " views\n";
    save_cloud(recon, out_path);
    return 0;
}

int run_synth(const std::string& mesh_path, const std::string& spec_path,
              const std::string& out_dir) {
    const Json sj = load_json(spec_path);
    SynthSpec spec;
    spec.n_views = sj.value("n_views", spec.n_views);
    spec.noise_sigma = sj.value("noise_sigma", spec.noise_sigma);
    spec.clutter_ratio = sj.value("clutter_ratio", spec.clutter_ratio);
    spec.occlusion_ratio = sj.value("occlusion_ratio", spec.occlusion_ratio);
    spec.dynamic = sj.value("dynamic", spec.dynamic);
    spec.object_present = sj.value("object_present", spec.object_present);
    spec.seed = sj.value("seed", spec.seed);
    spec.sample_rel = sj.value("sample_rel", spec.sample_rel);
    if (spec.clutter_ratio < 0.0 || spec.clutter_ratio >= 1.0 || spec.occlusion_ratio < 0.0 ||
        spec.occlusion_ratio >= 1.0)
        throw Error(ErrorCode::InvalidConfig, "synth: ratios must be in [0, 1)");

    const TriMesh mesh = load_mesh(mesh_path);
    if (sj.contains("noise_sigma_rel"))
        spec.noise_sigma = sj["noise_sigma_rel"].get<double>() * diameter(mesh);

    fs::create_directories(out_dir);
    const auto views = synth_dataset(mesh, spec);
    Json gt = Json::array();
    for (std::size_t i = 0; i < views.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%03zu.ply", i);
        save_cloud(views[i].cloud, fs::path(out_dir) / name);
        gt.push_back({{"file", name},
                      {"gt_pose", pose_to_json(views[i].gt_pose)},
                      {"n_object_points", views[i].n_object_points}});
        std::cerr << name << ": " << views[i].cloud.size() << " points ("
                  << views[i].n_object_points << " object)\n";
    }
    save_json(Json{{"views", gt}, {"spec", sj}}, fs::path(out_dir) / "gt.json");
    return 0;
}

int run_eval(const std::string& recon_path, const std::string& mesh_path) {
    const OrientedPointCloud recon = load_cloud(recon_path).cloud;
    const TriMesh mesh = load_mesh(mesh_path);
    const EvalStats stats = eval_reconstruction(recon, mesh);
    std::printf("points  mean          stddev        rms\n");
    std::printf("%-7zu %.6e  %.6e  %.6e\n", stats.count, stats.mean, stats.stddev, stats.rms);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CAD-prior instance reconstruction pipeline"};
    app.require_subcommand(1);

    std::string model, out, config, codebook, scene, hyps, scenes, verified_dir, graph_path,
        report, poses, recon, mesh, spec;
    double tau = 0.0;

    auto* tr = app.add_subcommand("train", "build a PPF codebook from a CAD mesh");
    tr->add_option("--model", model, "mesh file (.ply/.obj)")->required();
    tr->add_option("--out", out, "output codebook (.ppfc)")->required();
    tr->add_option("--tau", tau, "relative sampling distance");
    tr->add_option("--config", config, "pipeline config JSON");

    auto* de = app.add_subcommand("detect", "detect the model in one scan");
    de->add_option("--codebook", codebook)->required();
    de->add_option("--scene", scene)->required();
    de->add_option("--out", out, "hypotheses JSON")->required();
    de->add_option("--config", config);

    auto* ve = app.add_subcommand("verify", "refine and verify pose hypotheses");
    ve->add_option("--codebook", codebook)->required();
    ve->add_option("--scene", scene)->required();
    ve->add_option("--hyps", hyps)->required();
    ve->add_option("--out", out, "verified poses JSON")->required();
    ve->add_option("--config", config);

    auto* gr = app.add_subcommand("graph", "build the camera pose graph");
    gr->add_option("--codebook", codebook)->required();
    gr->add_option("--scenes", scenes, "directory of scene .ply files")->required();
    gr->add_option("--verified", verified_dir, "directory of verified JSON files")->required();
    gr->add_option("--out", out, "graph JSON")->required();
    gr->add_option("--config", config);

    auto* re = app.add_subcommand("refine", "jointly refine all camera poses");
    re->add_option("--graph", graph_path)->required();
    re->add_option("--scenes", scenes)->required();
    re->add_option("--out", out, "refined poses JSON")->required();
    re->add_option("--report", report, "refinement report JSON");
    re->add_option("--config", config);

    auto* rc = app.add_subcommand("reconstruct", "union of segmented scans in model frame");
    rc->add_option("--poses", poses)->required();
    rc->add_option("--scenes", scenes)->required();
    rc->add_option("--out", out, "reconstruction .ply")->required();
    rc->add_option("--config", config);

    auto* sy = app.add_subcommand("synth", "generate a synthetic scan dataset");
    sy->add_option("--mesh", mesh)->required();
    sy->add_option("--spec", spec, "synthesis spec JSON")->required();
    sy->add_option("--out", out, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "point-to-mesh error of a reconstruction");
    ev->add_option("--recon", recon)->required();
    ev->add_option("--mesh", mesh)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (tr->parsed()) return run_train(model, out, tau, config);
        if (de->parsed()) return run_detect(codebook, scene, out, config);
        if (ve->parsed()) return run_verify(codebook, scene, hyps, out, config);
        if (gr->parsed()) return run_graph(codebook, scenes, verified_dir, out, config);
        if (re->parsed()) return run_refine(graph_path, scenes, out, report, config);
        if (rc->parsed()) return run_reconstruct(poses, scenes, out, config);
        if (sy->parsed()) return run_synth(mesh, spec, out);
        if (ev->parsed()) return run_eval(recon, mesh);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
