#include "cadrec/synth.hpp"

#include "cadrec/pose_graph.hpp"
#include "support/test_meshes.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace cadrec;

namespace {

const TriMesh& blob() {
    static const TriMesh m = cadrec::testing::blob_mesh(1.0, 42, 2);
    return m;
}

}  // namespace

TEST_CASE("rng is deterministic and sane") {
    Rng a(123), b(123);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng r(7);
    double mean = 0.0;
    for (int i = 0; i < 20000; ++i) mean += r.gaussian();
    mean /= 20000.0;
    REQUIRE(std::abs(mean) < 0.03);

    Rng q(9);
    const Mat3 rot = q.rotation();
    REQUIRE((rot.transpose() * rot - Mat3::Identity()).norm() < 1e-12);
    REQUIRE(rot.determinant() == Catch::Approx(1.0));
}

TEST_CASE("synth_view basics") {
    SynthSpec spec;
    spec.seed = 11;
    spec.sample_rel = 0.03;

    SECTION("clean view lies exactly on the surface") {
        const SynthScene scene = synth_view(blob(), Vec3(0, 0, 1), spec);
        REQUIRE(scene.cloud.size() > 100);
        REQUIRE(scene.n_object_points == scene.cloud.size());
        const MeshDistance dist(blob());
        const Pose inv = scene.gt_pose.inverse();
        for (std::size_t i = 0; i < scene.cloud.size(); i += 13)
            REQUIRE(dist.distance(inv.apply(scene.cloud.points[i])) < 1e-9);
    }
    SECTION("same seed gives bit-identical output") {
        const SynthScene a = synth_view(blob(), Vec3(0, 0, 1), spec);
        const SynthScene b = synth_view(blob(), Vec3(0, 0, 1), spec);
        REQUIRE(a.cloud.size() == b.cloud.size());
        for (std::size_t i = 0; i < a.cloud.size(); ++i) {
            REQUIRE((a.cloud.points[i] - b.cloud.points[i]).norm() == 0.0);
            REQUIRE((a.cloud.normals[i] - b.cloud.normals[i]).norm() == 0.0);
        }
        REQUIRE(a.visibility_mask == b.visibility_mask);
    }
    SECTION("occlusion removes a contiguous half") {
        SynthSpec occluded = spec;
        occluded.occlusion_ratio = 0.5;
        const SynthScene full = synth_view(blob(), Vec3(0, 0, 1), spec);
        const SynthScene half = synth_view(blob(), Vec3(0, 0, 1), occluded);
        const double ratio =
            static_cast<double>(half.cloud.size()) / static_cast<double>(full.cloud.size());
        REQUIRE(ratio == Catch::Approx(0.5).margin(0.05));
    }
    SECTION("clutter fraction lands near the request") {
        SynthSpec cluttered = spec;
        cluttered.clutter_ratio = 0.4;
        const SynthScene scene = synth_view(blob(), Vec3(0, 0, 1), cluttered);
        const double frac = 1.0 - static_cast<double>(scene.n_object_points) /
                                      static_cast<double>(scene.cloud.size());
        REQUIRE(frac == Catch::Approx(0.4).margin(0.02));
    }
}

TEST_CASE("synth_dataset") {
    SynthSpec spec;
    spec.n_views = 8;
    spec.seed = 3;
    spec.sample_rel = 0.03;

    SECTION("ground-truth segments build a connected pose graph") {
        const auto views = synth_dataset(blob(), spec);
        REQUIRE(views.size() == 8);
        GraphParams gp;
        gp.voxel_size = 0.08;
        PoseGraphBuilder builder(gp);
        for (std::uint32_t i = 0; i < views.size(); ++i)
            builder.insert_view(i, views[i].cloud.transformed(views[i].gt_pose.inverse()));
        REQUIRE(builder.selection().connected);
    }
    SECTION("static scenes share one placement, dynamic ones do not") {
        const auto fixed = synth_dataset(blob(), spec);
        for (std::size_t i = 1; i < fixed.size(); ++i) {
            REQUIRE((fixed[i].gt_pose.rotation - fixed[0].gt_pose.rotation).norm() == 0.0);
            REQUIRE((fixed[i].gt_pose.translation - fixed[0].gt_pose.translation).norm() == 0.0);
        }
        SynthSpec dynamic = spec;
        dynamic.dynamic = true;
        const auto moving = synth_dataset(blob(), dynamic);
        bool any_differ = false;
        for (std::size_t i = 1; i < moving.size(); ++i)
            if (rotation_distance(moving[i].gt_pose, moving[0].gt_pose) > 0.1)
                any_differ = true;
        REQUIRE(any_differ);
    }
    SECTION("ground-truth stitching reaches the noise level") {
        SynthSpec noisy = spec;
        noisy.noise_sigma = 0.004;
        const auto views = synth_dataset(blob(), noisy);
        OrientedPointCloud recon;
        for (const auto& v : views) {
            const OrientedPointCloud back = v.cloud.transformed(v.gt_pose.inverse());
            for (std::size_t i = 0; i < back.size(); ++i)
                recon.push_back(back.points[i], back.normals[i]);
        }
        const EvalStats stats = eval_reconstruction(recon, blob());
        // half-normal expectation of |N(0, sigma)|
        REQUIRE(stats.mean ==
                Catch::Approx(noisy.noise_sigma * std::sqrt(2.0 / kPi)).epsilon(0.05));

        SynthSpec clean = spec;
        const auto exact = synth_dataset(blob(), clean);
        OrientedPointCloud perfect;
        for (const auto& v : exact) {
            const OrientedPointCloud back = v.cloud.transformed(v.gt_pose.inverse());
            for (std::size_t i = 0; i < back.size(); ++i)
                perfect.push_back(back.points[i], back.normals[i]);
        }
        REQUIRE(eval_reconstruction(perfect, blob()).mean < 1e-9);
    }
}

TEST_CASE("eval_reconstruction") {
    const TriMesh sphere = cadrec::testing::icosphere(2);

    SECTION("mesh vertices are at distance zero") {
        OrientedPointCloud verts;
        for (const Vec3& v : sphere.vertices) verts.push_back(v, v.normalized());
        REQUIRE(eval_reconstruction(verts, sphere).mean < 1e-12);
    }
    SECTION("points offset along face normals measure the offset") {
        const OrientedPointCloud samples = sample_mesh_surface(sphere, 0.2);
        OrientedPointCloud offset;
        for (std::size_t i = 0; i < samples.size(); ++i)
            offset.push_back(samples.points[i] + 1e-3 * samples.normals[i],
                             samples.normals[i]);
        const EvalStats stats = eval_reconstruction(offset, sphere);
        REQUIRE(stats.mean == Catch::Approx(1e-3).margin(1e-6));
    }
    SECTION("matches a brute-force point-to-triangle scan") {
        const MeshDistance dist(blob());
        Rng rng(17);
        for (int t = 0; t < 200; ++t) {
            const Vec3 q(rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8),
                         rng.uniform(-0.8, 0.8));
            double brute = std::numeric_limits<double>::infinity();
            for (const auto& f : blob().faces) {
                const Vec3 c = cadrec::detail::closest_point_on_triangle(
                    q, blob().vertices[f[0]], blob().vertices[f[1]], blob().vertices[f[2]]);
                brute = std::min(brute, (q - c).norm());
            }
            REQUIRE(dist.distance(q) == Catch::Approx(brute).margin(1e-12));
        }
    }
    SECTION("empty cloud is rejected") {
        REQUIRE_THROWS_AS(eval_reconstruction(OrientedPointCloud{}, sphere), Error);
    }
}
