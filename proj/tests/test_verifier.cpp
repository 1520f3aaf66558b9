#include "cadrec/verifier.hpp"

#include "cadrec/codebook.hpp"
#include "cadrec/synth.hpp"
#include "support/test_meshes.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace cadrec;

namespace {

const TriMesh& blob() {
    static const TriMesh m = cadrec::testing::blob_mesh(1.0, 42, 2);
    return m;
}

const Codebook& blob_codebook() {
    static const Codebook cb = train(blob(), 0.06);
    return cb;
}

Pose random_pose(Rng& rng, double trans_range = 1.0) {
    Pose p;
    p.rotation = rng.rotation();
    p.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)) *
                    trans_range;
    return p;
}

Pose perturb(const Pose& p, Rng& rng, double angle, double trans) {
    const Pose d = Pose::from_angle_axis(rng.unit_vector() * angle,
                                         rng.unit_vector() * trans);
    return d * p;
}

VerifierParams default_params(const Codebook& cb) {
    VerifierParams params;
    params.tau_theta = 0.01 * cb.model_diameter;
    params.field_voxel_size = 0.5 * cb.dist_step;
    return params;
}

OrientedPointCloud clutter_scene(std::uint64_t seed, std::size_t n, double diam) {
    return make_clutter_cloud(seed, n, Vec3::Zero(), diam);
}

}  // namespace

TEST_CASE("distance field basics") {
    SECTION("single point") {
        OrientedPointCloud one;
        one.push_back(Vec3(0.5, 0.5, 0.5), Vec3(0, 0, 1));
        const DistanceField field = build_distance_field(one, 0.1);
        REQUIRE(field.distance(Vec3(0.5, 0.5, 0.5)) < 1e-9);
        REQUIRE(field.distance(Vec3(0.9, 0.5, 0.5)) == Catch::Approx(0.4).margin(0.01));
    }
    SECTION("samples sit at near-zero distance") {
        const auto& cb = blob_codebook();
        const DistanceField field = build_distance_field(cb.sampled_model, 0.5 * cb.dist_step);
        for (std::size_t i = 0; i < cb.sampled_model.size(); i += 7)
            REQUIRE(field.distance(cb.sampled_model.points[i]) < 0.5 * cb.dist_step);
    }
    SECTION("random queries agree with the exact index") {
        const auto& cb = blob_codebook();
        const double voxel = 0.5 * cb.dist_step;
        const DistanceField field = build_distance_field(cb.sampled_model, voxel);
        const KdIndex exact(cb.sampled_model.points);
        Rng rng(7);
        int index_matches = 0;
        for (int q = 0; q < 100; ++q) {
            const Vec3 query(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                             rng.uniform(-0.6, 0.6));
            const auto lk = field.query(query);
            const auto ex = exact.nearest(query);
            if (lk.nearest == ex.index) ++index_matches;
            REQUIRE(std::abs(lk.dist - std::sqrt(ex.dist2)) < voxel);
        }
        REQUIRE(index_matches >= 95);
    }
}

TEST_CASE("score") {
    const auto& cb = blob_codebook();
    Rng rng(13);
    const Pose gt = random_pose(rng);
    const OrientedPointCloud scene = cb.sampled_model.transformed(gt);
    const KdIndex scene_index(scene.points);
    const double tau = 0.01 * cb.model_diameter;

    SECTION("full visibility scores 1") {
        REQUIRE(score(gt, cb.sampled_model, scene_index, tau) == 1.0);
    }
    SECTION("everything farther than tau scores 0") {
        Pose far = gt;
        far.translation += Vec3(10, 0, 0);
        REQUIRE(score(far, cb.sampled_model, scene_index, tau) == 0.0);
    }
    SECTION("half visibility scores one half") {
        OrientedPointCloud half;
        const std::size_t n_half = cb.sampled_model.size() / 2;
        for (std::size_t i = 0; i < n_half; ++i)
            half.push_back(scene.points[i], scene.normals[i]);
        const KdIndex half_index(half.points);
        const double xi = score(gt, cb.sampled_model, half_index, tau);
        const double slack = 1.0 / static_cast<double>(cb.sampled_model.size());
        REQUIRE(xi >= 0.5 - 2 * slack);
        REQUIRE(xi <= 0.5 + 2 * slack);
    }
    SECTION("monotone in tau") {
        Rng prng(15);
        const Pose off = perturb(gt, prng, 0.05, 0.01);
        double prev = -1.0;
        for (double t : {0.25 * tau, 0.5 * tau, tau, 2 * tau, 4 * tau}) {
            const double xi = score(off, cb.sampled_model, scene_index, t);
            REQUIRE(xi >= prev);
            prev = xi;
        }
    }
    SECTION("ground truth beats a 10 degree rotation") {
        Pose rotated = gt;
        rotated.rotation = rotation_from_angle_axis(Vec3(0, 0, 10.0 * kPi / 180.0)) *
                           gt.rotation;
        REQUIRE(score(gt, cb.sampled_model, scene_index, tau) >=
                score(rotated, cb.sampled_model, scene_index, tau));
    }
}

TEST_CASE("normal consistency") {
    const auto& cb = blob_codebook();
    Rng rng(17);
    const Pose gt = random_pose(rng);
    const OrientedPointCloud segment = cb.sampled_model.transformed(gt);
    const KdIndex model_index(cb.sampled_model.points);
    const double max_angle = 30.0 * kPi / 180.0;

    SECTION("exact normals agree fully") {
        REQUIRE(normal_consistency(gt, segment, cb.sampled_model, model_index, max_angle) ==
                1.0);
    }
    SECTION("flipped normals agree nowhere") {
        OrientedPointCloud flipped = segment;
        for (Vec3& n : flipped.normals) n = -n;
        REQUIRE(normal_consistency(gt, flipped, cb.sampled_model, model_index, max_angle) ==
                0.0);
    }
    SECTION("30% random normals land near the cap expectation") {
        OrientedPointCloud mixed = segment;
        Rng nrng(19);
        std::size_t corrupted = 0;
        for (std::size_t i = 0; i < mixed.size(); ++i)
            if (nrng.uniform() < 0.3) {
                mixed.normals[i] = nrng.unit_vector();
                ++corrupted;
            }
        const double frac =
            normal_consistency(gt, mixed, cb.sampled_model, model_index, max_angle);
        // random unit normals agree with probability (1 - cos 30deg)/2
        const double cap = 0.5 * (1.0 - std::cos(max_angle));
        const double ratio = static_cast<double>(corrupted) / mixed.size();
        const double expected = (1.0 - ratio) + ratio * cap;
        REQUIRE(frac == Catch::Approx(expected).margin(0.05));
    }
}

TEST_CASE("sparse LM-ICP") {
    const auto& cb = blob_codebook();
    const VerifierParams params = default_params(cb);
    const DistanceField field =
        build_distance_field(cb.sampled_model, params.field_voxel_size);
    Rng rng(23);
    const Pose gt = random_pose(rng);
    // scene sampled independently of the codebook lattice, like a scan
    const OrientedPointCloud scene =
        sample_mesh_uniform(blob(), 0.85 * cb.dist_step).transformed(gt);

    SECTION("ground truth is a fixed point") {
        // zero-residual scene: the codebook samples themselves
        const OrientedPointCloud exact = cb.sampled_model.transformed(gt);
        const IcpResult res = sparse_lm_icp(exact, gt, field, params, 2);
        REQUIRE_FALSE(res.diverged);
        REQUIRE(rotation_distance(res.pose, gt) < 1e-6);
        REQUIRE(translation_distance(res.pose, gt) < 1e-6);
    }
    SECTION("recovers from a 5 degree / 5% diameter perturbation") {
        for (int t = 0; t < 5; ++t) {
            const Pose init = perturb(gt, rng, 5.0 * kPi / 180.0, 0.05 * cb.model_diameter);
            const IcpResult res = sparse_lm_icp(scene, init, field, params, 2);
            REQUIRE_FALSE(res.diverged);
            REQUIRE(rotation_distance(res.pose, gt) < 0.5 * kPi / 180.0);
            REQUIRE(translation_distance(res.pose, gt) < 0.005 * cb.model_diameter);
        }
    }
    SECTION("all-clutter scene stays useless") {
        const OrientedPointCloud clutter = clutter_scene(29, 600, cb.model_diameter);
        const Pose init = random_pose(rng, 0.2);
        const IcpResult res = sparse_lm_icp(clutter, init, field, params, 2);
        const KdIndex clutter_index(clutter.points);
        const double xi = score(res.pose, cb.sampled_model, clutter_index, params.tau_theta);
        REQUIRE((res.diverged || xi < 0.1));
    }
}

TEST_CASE("verify_all") {
    const auto& cb = blob_codebook();
    const VerifierParams params = default_params(cb);
    Rng rng(31);
    const Pose gt = random_pose(rng);
    // scans for verification are sampled at the inlier distance
    const OrientedPointCloud scan = sample_mesh_uniform(blob(), params.tau_theta);

    SECTION("true pose survives 50% clutter and is accepted") {
        OrientedPointCloud scene = scan.transformed(gt);
        const std::size_t n_object = scene.size();
        const OrientedPointCloud clutter = clutter_scene(37, n_object, cb.model_diameter);
        for (std::size_t i = 0; i < clutter.size(); ++i)
            scene.push_back(clutter.points[i] + gt.translation, clutter.normals[i]);

        std::vector<PoseCluster> clusters;
        clusters.push_back({perturb(gt, rng, 3.0 * kPi / 180.0, 0.03 * cb.model_diameter),
                            10.0, 5});
        clusters.push_back({random_pose(rng, 2.0), 3.0, 2});  // junk hypothesis

        const auto verified = verify_all(clusters, scene, cb.sampled_model, params);
        REQUIRE_FALSE(verified.empty());
        const VerifiedPose& best = verified.front();
        REQUIRE(best.score >= 0.5);
        REQUIRE(best.accepted);
        REQUIRE(rotation_distance(best.pose, gt) < 1.5 * kPi / 180.0);
        REQUIRE(translation_distance(best.pose, gt) < 0.01 * cb.model_diameter);
    }
    SECTION("pure clutter accepts nothing") {
        for (std::uint64_t seed = 100; seed < 110; ++seed) {
            const OrientedPointCloud scene = clutter_scene(seed, 800, cb.model_diameter);
            std::vector<PoseCluster> clusters;
            Rng crng(seed);
            for (int c = 0; c < 8; ++c) clusters.push_back({random_pose(crng, 1.0), 1.0, 1});
            const auto verified = verify_all(clusters, scene, cb.sampled_model, params);
            for (const auto& v : verified) REQUIRE_FALSE(v.accepted);
        }
    }
    SECTION("duplicate hypotheses collapse to one") {
        const OrientedPointCloud scene = scan.transformed(gt);
        std::vector<PoseCluster> clusters;
        clusters.push_back({perturb(gt, rng, 0.01, 0.005), 5.0, 3});
        clusters.push_back({perturb(gt, rng, 0.01, 0.005), 4.0, 2});
        const auto verified = verify_all(clusters, scene, cb.sampled_model, params);
        REQUIRE(verified.size() == 1);
        REQUIRE(verified.front().accepted);
    }
    SECTION("determinism") {
        OrientedPointCloud scene = scan.transformed(gt);
        std::vector<PoseCluster> clusters;
        clusters.push_back({perturb(gt, rng, 0.02, 0.01), 5.0, 3});
        const auto a = verify_all(clusters, scene, cb.sampled_model, params);
        const auto b = verify_all(clusters, scene, cb.sampled_model, params);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            REQUIRE(a[i].score == b[i].score);
            REQUIRE(a[i].normal_consistency == b[i].normal_consistency);
            REQUIRE((a[i].pose.rotation - b[i].pose.rotation).norm() == 0.0);
            REQUIRE((a[i].pose.translation - b[i].pose.translation).norm() == 0.0);
        }
    }
}
