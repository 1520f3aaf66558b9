#pragma once

#include "cadrec/detector.hpp"
#include "cadrec/io.hpp"
#include "cadrec/pose_graph.hpp"
#include "cadrec/refiner.hpp"
#include "cadrec/verifier.hpp"

#include <json.hpp>

namespace cadrec {

using Json = nlohmann::json;

// 3x4 row-major: [r00 r01 r02 t0  r10 r11 r12 t1  r20 r21 r22 t2]
inline Json pose_to_json(const Pose& p) {
    Json arr = Json::array();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) arr.push_back(p.rotation(r, c));
        arr.push_back(p.translation[r]);
    }
    return arr;
}

inline Pose pose_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 12)
        throw Error(ErrorCode::MalformedFile, "pose: expected a 12-element array");
    Pose p;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) p.rotation(r, c) = j[4 * r + c].get<double>();
        p.translation[r] = j[4 * r + 3].get<double>();
    }
    return p;
}

inline Json clusters_to_json(const std::vector<PoseCluster>& clusters) {
    Json arr = Json::array();
    for (const PoseCluster& c : clusters)
        arr.push_back({{"pose", pose_to_json(c.mean_pose)},
                       {"total_mass", c.total_mass},
                       {"member_count", c.member_count}});
    return Json{{"clusters", arr}};
}

inline std::vector<PoseCluster> clusters_from_json(const Json& j) {
    std::vector<PoseCluster> out;
    for (const Json& c : j.at("clusters")) {
        PoseCluster pc;
        pc.mean_pose = pose_from_json(c.at("pose"));
        pc.total_mass = c.at("total_mass").get<double>();
        pc.member_count = c.at("member_count").get<std::size_t>();
        out.push_back(pc);
    }
    return out;
}

inline Json verified_to_json(const std::vector<VerifiedPose>& verified) {
    Json arr = Json::array();
    for (const VerifiedPose& v : verified)
        arr.push_back({{"pose", pose_to_json(v.pose)},
                       {"score", v.score},
                       {"normal_consistency", v.normal_consistency},
                       {"accepted", v.accepted}});
    return Json{{"verified", arr}};
}

inline std::vector<VerifiedPose> verified_from_json(const Json& j) {
    std::vector<VerifiedPose> out;
    for (const Json& v : j.at("verified")) {
        VerifiedPose vp;
        vp.pose = pose_from_json(v.at("pose"));
        vp.score = v.at("score").get<double>();
        vp.normal_consistency = v.at("normal_consistency").get<double>();
        vp.accepted = v.at("accepted").get<bool>();
        out.push_back(vp);
    }
    return out;
}

// Graph artifact. Nodes carry the scene file and the segment (indices of
// model-inlier points in that file) so the refine and reconstruct stages
// can rebuild their inputs from the graph alone.
struct GraphArtifact {
    PoseGraph graph;
    double coverage = 0.0;
    std::size_t uncovered_count = 0;
    double refine_sample_dist = 0.0;
    std::vector<std::string> files;                       // per node
    std::vector<std::vector<std::uint32_t>> segments;     // per node
};

inline Json graph_to_json(const GraphArtifact& art) {
    Json nodes = Json::array();
    for (std::size_t i = 0; i < art.graph.nodes.size(); ++i) {
        Json n{{"id", art.graph.nodes[i].id}, {"pose", pose_to_json(art.graph.nodes[i].pose)}};
        if (i < art.files.size()) n["file"] = art.files[i];
        if (i < art.segments.size()) n["segment"] = art.segments[i];
        nodes.push_back(n);
    }
    Json edges = Json::array();
    for (const GraphEdge& e : art.graph.edges)
        edges.push_back({{"i", e.i}, {"j", e.j}, {"overlap", e.overlap}});
    return Json{{"nodes", nodes},
                {"edges", edges},
                {"coverage", art.coverage},
                {"uncovered_count", art.uncovered_count},
                {"refine_sample_dist", art.refine_sample_dist}};
}

inline GraphArtifact graph_from_json(const Json& j) {
    GraphArtifact art;
    for (const Json& n : j.at("nodes")) {
        GraphNode node;
        node.id = n.at("id").get<std::uint32_t>();
        node.pose = pose_from_json(n.at("pose"));
        art.graph.nodes.push_back(node);
        art.files.push_back(n.value("file", std::string{}));
        art.segments.push_back(n.value("segment", std::vector<std::uint32_t>{}));
    }
    for (const Json& e : j.at("edges")) {
        GraphEdge edge;
        edge.i = e.at("i").get<std::uint32_t>();
        edge.j = e.at("j").get<std::uint32_t>();
        edge.overlap = e.at("overlap").get<std::uint32_t>();
        const Pose& pi = art.graph.nodes[art.graph.node_index(edge.i)].pose;
        const Pose& pj = art.graph.nodes[art.graph.node_index(edge.j)].pose;
        edge.relative = pi.inverse() * pj;
        art.graph.edges.push_back(edge);
    }
    art.coverage = j.value("coverage", 0.0);
    art.uncovered_count = j.value("uncovered_count", std::size_t{0});
    art.refine_sample_dist = j.value("refine_sample_dist", 0.0);
    return art;
}

struct PosesArtifact {
    std::vector<GraphNode> nodes;
    std::vector<std::string> files;
    std::vector<std::vector<std::uint32_t>> segments;
};

inline Json poses_to_json(const PosesArtifact& art) {
    Json nodes = Json::array();
    for (std::size_t i = 0; i < art.nodes.size(); ++i) {
        Json n{{"id", art.nodes[i].id}, {"pose", pose_to_json(art.nodes[i].pose)}};
        if (i < art.files.size()) n["file"] = art.files[i];
        if (i < art.segments.size()) n["segment"] = art.segments[i];
        nodes.push_back(n);
    }
    return Json{{"poses", nodes}};
}

inline PosesArtifact poses_from_json(const Json& j) {
    PosesArtifact art;
    for (const Json& n : j.at("poses")) {
        GraphNode node;
        node.id = n.at("id").get<std::uint32_t>();
        node.pose = pose_from_json(n.at("pose"));
        art.nodes.push_back(node);
        art.files.push_back(n.value("file", std::string{}));
        art.segments.push_back(n.value("segment", std::vector<std::uint32_t>{}));
    }
    return art;
}

inline Json report_to_json(const RefineReport& r) {
    return Json{{"outer_energy", r.outer_energy},
                {"accepted_energies", r.accepted_energies},
                {"edge_corr_counts", r.edge_corr_counts},
                {"kd_builds", r.kd_builds},
                {"solver_retries", r.solver_retries},
                {"fixed_frame", r.fixed_frame},
                {"outer_iterations", r.outer_iterations}};
}

inline void save_json(const Json& j, const std::filesystem::path& path) {
    atomic_write_file(path, j.dump(2) + "\n");
}

inline Json load_json(const std::filesystem::path& path) {
    try {
        return Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::MalformedFile, path.string() + ": " + e.what());
    }
}

}  // namespace cadrec
