#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "sslam/submap.hpp"

using namespace sslam;

namespace {

Intrinsics small_camera() {
    Intrinsics k;
    k.fx = k.fy = 100.0;
    k.cx = 79.5;
    k.cy = 59.5;
    k.width = 160;
    k.height = 120;
    return k;
}

Frame plane_frame(double z, const Pose& pose = Pose::Identity()) {
    Frame f;
    f.intrinsics = small_camera();
    f.depth = DepthImage::Constant(120, 160, float(z));
    f.gray = GrayImage(120, 160);
    for (int v = 0; v < 120; ++v) {
        for (int u = 0; u < 160; ++u) f.gray(v, u) = ((u / 8 + v / 8) % 2) ? 0.8f : 0.2f;
    }
    f.pose = pose;
    return f;
}

SubmapPoint at(const Vec3& p) {
    SubmapPoint s;
    s.position = p;
    s.normal = Vec3::UnitZ();
    s.radius = 0.05;
    return s;
}

Feature unit(int i) { return Feature::Unit(i); }

Pose random_pose(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Twist xi;
    for (int i = 0; i < 6; ++i) xi[i] = 0.4 * n(rng);
    return se3_exp(xi);
}

}  // namespace

TEST(CreateSubmap, NoPreviousIsEmpty) {
    const Submap s = create_submap(0, plane_frame(2.0));
    EXPECT_TRUE(s.points.empty());
    EXPECT_TRUE(s.links.empty());
    EXPECT_EQ(s.frame_ids.size(), 1u);
}

TEST(CreateSubmap, PreviousBehindCameraGivesEmpty) {
    Submap prev;
    prev.id = 3;
    for (int i = 0; i < 20; ++i) prev.points.push_back(at(Vec3(0.1 * i - 1.0, 0.0, -1.0)));
    EXPECT_TRUE(create_submap(4, plane_frame(2.0), &prev).points.empty());
}

TEST(CreateSubmap, CopiesVisiblePointsWithLinks) {
    // Grid on the z = 2 wall spanning twice the view; the image covers |x| <= 1.59, |y| <= 1.19.
    Submap prev;
    prev.id = 7;
    int expected = 0;
    for (int i = -8; i <= 8; ++i) {
        for (int j = -6; j <= 6; ++j) {
            const Vec3 p(0.35 * i, 0.35 * j, 2.0);
            prev.points.push_back(at(p));
            if (std::abs(p.x()) < 1.5 && std::abs(p.y()) < 1.1) ++expected;
        }
    }
    prev.points.push_back(at(Vec3(0.0, 0.05, 3.0)));  // occluded by the wall
    prev.points.push_back(at(Vec3(0.0, 0.05, 2.1)));  // inside the 1.1x gate
    ++expected;
    const Submap s = create_submap(8, plane_frame(2.0), &prev);
    ASSERT_EQ(int(s.points.size()), expected);
    ASSERT_EQ(s.links.size(), s.points.size());
    for (const auto& [local, link] : s.links) {
        EXPECT_EQ(link.submap, 7);
        EXPECT_EQ(s.points[local].position, prev.points[link.index].position);
    }
}

TEST(AddPoints, SparsePatchesEachAddOnePoint) {
    Frame f = plane_frame(2.0);
    f.depth.setZero();
    int patches = 0;
    for (int v = 20; v < 120; v += 40) {
        for (int u = 20; u < 160; u += 40) {
            f.depth.block(v - 1, u - 1, 3, 3).setConstant(2.0f);
            ++patches;
        }
    }
    Submap s = create_submap(0, f);
    EXPECT_EQ(add_points(s, f, f.pose, 2000, 1), patches);
    for (const auto& p : s.points) {
        EXPECT_NEAR(p.position.z(), 2.0, 1e-6);
        EXPECT_NEAR(p.normal.z(), -1.0, 1e-9);
        EXPECT_EQ(p.f_g.head<3>(), p.normal);
        EXPECT_TRUE(p.f_g.tail<29>().isZero());
    }
}

TEST(AddPoints, ReAddingSameFrameAddsNothing) {
    const Frame f = plane_frame(1.5);
    Submap s = create_submap(0, f);
    const int first = add_points(s, f, f.pose, 3000, 2);
    EXPECT_GT(first, 50);
    EXPECT_EQ(add_points(s, f, f.pose, 3000, 2), 0);
}

TEST(AddPoints, ZeroDepthAddsNothing) {
    Frame f = plane_frame(1.0);
    f.depth.setZero();
    Submap s = create_submap(0, f);
    EXPECT_EQ(add_points(s, f, f.pose, 1000, 3), 0);
}

TEST(AddPoints, SpacingAndRadiusBounds) {
    const Frame f = plane_frame(1.0);
    Submap s = create_submap(0, f);
    add_points(s, f, f.pose, 4000, 4);
    add_points(s, f, Pose::Translation(Vec3(0.03, 0.0, 0.0)), 4000, 5);
    double smallest = 1.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& a = s.points[i];
        EXPECT_GE(a.radius, 0.02 - 1e-12);
        EXPECT_LE(a.radius, 0.08 + 1e-12);
        smallest = std::min(smallest, a.radius);
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            const auto& b = s.points[j];
            EXPECT_GE((a.position - b.position).norm(), std::min(a.radius, b.radius) - 1e-9);
        }
    }
    // Checker edges produce fine-resolution points.
    EXPECT_LT(smallest, 0.03);
}

TEST(ApplyCorrection, IdentityIsBitIdentical) {
    const Frame f = plane_frame(1.0);
    Submap s = create_submap(0, f);
    add_points(s, f, f.pose, 500, 6);
    const Submap before = s;
    apply_correction(s, Pose::Identity());
    ASSERT_EQ(s.size(), before.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(s.points[i].position, before.points[i].position);
        EXPECT_EQ(s.points[i].f_g, before.points[i].f_g);
    }
}

TEST(ApplyCorrection, TranslationShiftsExactly) {
    const Frame f = plane_frame(1.0);
    Submap s = create_submap(0, f);
    add_points(s, f, f.pose, 500, 7);
    const Submap before = s;
    const Vec3 t(0.25, -0.5, 1.0);
    apply_correction(s, Pose::Translation(t));
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(s.points[i].position, before.points[i].position + t);
        EXPECT_EQ(s.points[i].f_c, before.points[i].f_c);
        EXPECT_EQ(s.points[i].radius, before.points[i].radius);
    }
    EXPECT_TRUE(s.keyframe_pose.translation().isApprox(t, 1e-15));
}

TEST(ApplyCorrection, Composition) {
    std::mt19937_64 rng(8);
    const Frame f = plane_frame(1.0);
    Submap a = create_submap(0, f);
    add_points(a, f, f.pose, 500, 9);
    a.add_frame(1, random_pose(rng));
    Submap b = a;
    const Pose t1 = random_pose(rng), t2 = random_pose(rng);
    apply_correction(a, t1);
    apply_correction(a, t2);
    apply_correction(b, t2 * t1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_LT((a.points[i].position - b.points[i].position).norm(), 1e-9);
        EXPECT_LT((a.points[i].normal - b.points[i].normal).norm(), 1e-9);
    }
    for (std::size_t i = 0; i < a.frame_poses.size(); ++i) EXPECT_TRUE(a.frame_poses[i].isApprox(b.frame_poses[i], 1e-9));
}

TEST(FuseFeatures, ChainOfTwoAverages) {
    std::vector<Submap> maps(2);
    maps[0].id = 0;
    maps[0].points.push_back(at(Vec3::Zero()));
    maps[1].id = 1;
    maps[1].points.push_back(at(Vec3(0, 0, 0.02)));
    maps[1].points.push_back(at(Vec3(1, 1, 1)));
    maps[1].links[0] = {0, 0};
    const GlobalMap g = fuse_features(maps);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_LT((g.positions[0] - Vec3(0, 0, 0.01)).norm(), 1e-15);
    EXPECT_EQ(g.positions[1], Vec3(1, 1, 1));
    EXPECT_EQ(g.provenance[0], (std::vector<int>{0, 1}));
    EXPECT_EQ(g.provenance[1], (std::vector<int>{1}));
}

TEST(FuseFeatures, ChainOfThreeFeatures) {
    std::vector<Submap> maps(3);
    for (int s = 0; s < 3; ++s) {
        maps[s].id = s;
        SubmapPoint p = at(Vec3(s, 0, 0));
        p.f_g = unit(s);
        p.f_c = unit(s + 3);
        maps[s].points.push_back(p);
        if (s > 0) maps[s].links[0] = {s - 1, 0};
    }
    const GlobalMap g = fuse_features(maps);
    ASSERT_EQ(g.size(), 1u);
    Feature expected = Feature::Zero();
    expected.head<3>().setConstant(1.0 / 3.0);
    EXPECT_LT((g.f_g[0] - expected).norm(), 1e-12);
    EXPECT_LT((g.positions[0] - Vec3(1, 0, 0)).norm(), 1e-12);
}

TEST(FuseFeatures, CountFormulaOnRandomChains) {
    std::mt19937_64 rng(10);
    std::vector<Submap> maps(5);
    std::size_t total = 0;
    for (int s = 0; s < 5; ++s) {
        maps[s].id = s;
        for (int i = 0; i < 40; ++i) maps[s].points.push_back(at(Vec3(s, i, 0)));
        total += 40;
    }
    // Each point links to at most one earlier point, and each earlier point is claimed once.
    std::size_t links = 0;
    for (int s = 1; s < 5; ++s) {
        std::vector<int> idx(40);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int i = 0; i < 20; ++i) {
            maps[s].links[i] = {s - 1, idx[i]};
            ++links;
        }
    }
    // Chains are paths, so sum of (length - 1) equals the link count.
    EXPECT_EQ(fuse_features(maps).size(), total - links);
}

TEST(FuseFeatures, DanglingLinkThrows) {
    std::vector<Submap> maps(2);
    maps[0].id = 0;
    maps[0].points.push_back(at(Vec3::Zero()));
    maps[1].id = 1;
    maps[1].points.push_back(at(Vec3::Zero()));
    maps[1].links[0] = {0, 5};
    EXPECT_THROW(fuse_features(maps), Error);
    maps[1].links[0] = {9, 0};
    EXPECT_THROW(fuse_features(maps), Error);
}

TEST(FuseFeatures, CommutesWithGlobalRigidTransform) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Submap> maps(3);
    for (int s = 0; s < 3; ++s) {
        maps[s].id = s;
        for (int i = 0; i < 30; ++i) maps[s].points.push_back(at(Vec3(u(rng), u(rng), u(rng))));
        if (s > 0) {
            for (int i = 0; i < 10; ++i) maps[s].links[i] = {s - 1, i + 5};
        }
    }
    const Pose t = random_pose(rng);
    GlobalMap a = fuse_features(maps);
    for (auto& p : a.positions) p = t * p;
    for (auto& m : maps) apply_correction(m, t);
    const GlobalMap b = fuse_features(maps);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT((a.positions[i] - b.positions[i]).norm(), 1e-9);
}

TEST(Export, PlyAndLinks) {
    const Frame f = plane_frame(1.0);
    Submap s0 = create_submap(0, f);
    add_points(s0, f, f.pose, 300, 12);
    const Submap s1 = create_submap(1, f, &s0);
    const auto dir = std::filesystem::temp_directory_path();
    write_submap_ply(dir / "sslam_submap.ply", s0);
    const PointCloud back = read_ply(dir / "sslam_submap.ply");
    ASSERT_EQ(back.size(), s0.size());
    EXPECT_TRUE(back.has_colors());
    const std::vector<Submap> maps{s0, s1};
    write_links_csv(dir / "sslam_links.csv", maps);
    std::ifstream is(dir / "sslam_links.csv");
    std::string line;
    int rows = -1;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, int(s1.links.size()));
}
