#include "idesplat/camera.hpp"
#include "idesplat/depth_grid.hpp"
#include "idesplat/warp.hpp"

#include "test_util.hpp"

using namespace idesplat;
using testutil::code_of;

TEST(BuildCamera, IdentityProjection) {
    const CameraView cam = build_camera({1, 1, 0, 0, 4, 4}, {});
    Mat34 expect = Mat34::Zero();
    expect.leftCols<3>() = Mat3::Identity();
    EXPECT_EQ(cam.projection, expect);
}

TEST(BuildCamera, HandProjection) {
    Pose p;
    p.translation = Vec3(0, 0, 1);
    const CameraView cam = build_camera({100, 100, 64, 48, 128, 96}, p);
    const Vec3 c = cam.to_camera(Vec3(0, 0, 1));
    EXPECT_DOUBLE_EQ(c.z(), 2.0);
    const Vec2 uv = cam.project(Vec3(0, 0, 1));
    EXPECT_DOUBLE_EQ(uv.x(), 64.0);
    EXPECT_DOUBLE_EQ(uv.y(), 48.0);
    const Eigen::Vector4d h(0, 0, 1, 1);
    const Vec3 ph = cam.projection * h;
    EXPECT_DOUBLE_EQ(ph.x() / ph.z(), 64.0);
    EXPECT_DOUBLE_EQ(ph.z(), 2.0);
}

TEST(BuildCamera, Errors) {
    Pose p;
    p.rotation(0, 0) = 1.1;
    EXPECT_EQ(code_of([&] { build_camera({1, 1, 0, 0, 4, 4}, p); }), ErrorCode::NonOrthonormal);
    Pose reflect;
    reflect.rotation(2, 2) = -1.0;
    EXPECT_EQ(code_of([&] { build_camera({1, 1, 0, 0, 4, 4}, reflect); }), ErrorCode::NonOrthonormal);
    EXPECT_EQ(code_of([&] { build_camera({0, 1, 0, 0, 4, 4}, {}); }), ErrorCode::InvalidIntrinsics);
    EXPECT_EQ(code_of([&] { build_camera({1, 1, 5, 0, 4, 4}, {}); }), ErrorCode::InvalidIntrinsics);
}

TEST(DepthCandidates, LinearHand) {
    const auto g = sample_depth_candidates(1, 3, 3, DepthSpacing::linear);
    EXPECT_EQ(g.mode, CandidateMode::absolute);
    EXPECT_FLOAT_EQ(g.values[0], 1.0f);
    EXPECT_FLOAT_EQ(g.values[1], 2.0f);
    EXPECT_FLOAT_EQ(g.values[2], 3.0f);
}

TEST(DepthCandidates, InverseDepthHand) {
    const auto g = sample_depth_candidates(1, 4, 3, DepthSpacing::inverse_depth);
    EXPECT_FLOAT_EQ(g.values[0], 1.0f);
    EXPECT_FLOAT_EQ(g.values[1], 1.6f);
    EXPECT_FLOAT_EQ(g.values[2], 4.0f);
}

TEST(DepthCandidates, Errors) {
    EXPECT_EQ(code_of([] { sample_depth_candidates(2, 2, 4, DepthSpacing::linear); }), ErrorCode::EmptyRange);
    EXPECT_EQ(code_of([] { sample_depth_candidates(0, 2, 4, DepthSpacing::linear); }), ErrorCode::NonPositiveNear);
    EXPECT_EQ(code_of([] { sample_depth_candidates(1, 2, 1, DepthSpacing::linear); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([] { residual_candidates(0.0, 3, 1, 2); }), ErrorCode::EmptyRange);
}

TEST(DepthCandidates, MonotoneAndSymmetric) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const double near = rng.uniform(0.1, 5.0), far = near + rng.uniform(0.1, 50.0);
        const std::size_t d = 2 + rng.below(63);
        for (auto spacing : {DepthSpacing::linear, DepthSpacing::inverse_depth}) {
            const auto g = sample_depth_candidates(near, far, d, spacing);
            for (std::size_t k = 1; k < d; ++k) {
                ASSERT_LT(g.values[k - 1], g.values[k]);
            }
        }
        const auto r = residual_candidates(rng.uniform(0.01, 8.0), d, near, far);
        for (std::size_t k = 0; k < d; ++k) {
            if (k) {
                ASSERT_LT(r.values[k - 1], r.values[k]);
            }
            ASSERT_NEAR(r.values[k], -r.values[d - 1 - k], 1e-6);
        }
        EXPECT_NEAR(r.values[d - 1] - r.values[0], r.range_width, 1e-5 * r.range_width);
    }
}

TEST(Unproject, IdentityCamera) {
    const CameraView cam = build_camera({1, 1, 0, 0, 1, 1}, {});
    const Tensor pts = unproject_depth(Tensor({1, 1}, 1.0f), cam);
    EXPECT_FLOAT_EQ(pts.at(0, 0, 0), 0.5f);
    EXPECT_FLOAT_EQ(pts.at(0, 0, 1), 0.5f);
    EXPECT_FLOAT_EQ(pts.at(0, 0, 2), 1.0f);
}

TEST(Unproject, NonPositiveDepth) {
    const CameraView cam = build_camera({1, 1, 0, 0, 2, 2}, {});
    Tensor d({2, 2}, 1.0f);
    d.at(1, 1) = 0.0f;
    EXPECT_EQ(code_of([&] { unproject_depth(d, cam); }), ErrorCode::NonPositiveDepth);
}

TEST(Unproject, ProjectionRoundTrip) {
    Rng rng(21);
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const CameraView cam = testutil::random_camera(rng, 64, 48);
        const double u = rng.uniform(0.0, 64.0), v = rng.uniform(0.0, 48.0), d = rng.uniform(0.5, 20.0);
        const Vec2 back = cam.project(cam.unproject(u, v, d));
        worst = std::max({worst, std::abs(back.x() - u), std::abs(back.y() - v)});
        EXPECT_NEAR(cam.to_camera(cam.unproject(u, v, d)).z(), d, 1e-9);
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Unproject, MapReprojectsToPixelCenters) {
    Rng rng(2);
    const CameraView cam = testutil::random_camera(rng, 8, 6);
    const Tensor depth = random_tensor(rng, {6, 8}, 1.0f, 5.0f);
    const Tensor pts = unproject_depth(depth, cam);
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
            const Vec2 uv = cam.project(Vec3(pts.at(y, x, 0), pts.at(y, x, 1), pts.at(y, x, 2)));
            EXPECT_NEAR(uv.x(), x + 0.5, 1e-4);
            EXPECT_NEAR(uv.y(), y + 0.5, 1e-4);
        }
    }
}

TEST(ResizeDepth, ConstantStaysConstant) {
    const Tensor out = resize_depth(Tensor({3, 5}, 2.5f), 12, 20);
    for (float v : out.data()) {
        EXPECT_FLOAT_EQ(v, 2.5f);
    }
}

TEST(ResizeDepth, HandBilinear2x2To4x4) {
    const std::vector<float> v{1, 2, 3, 4};
    const Tensor out = resize_depth(Tensor({2, 2}, v), 4, 4);
    // output centre i maps to source coordinate (i + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75, 1.25
    auto oracle = [&](double sy, double sx) {
        sy = std::clamp(sy, 0.0, 1.0);
        sx = std::clamp(sx, 0.0, 1.0);
        return (1 - sy) * ((1 - sx) * 1 + sx * 2) + sy * ((1 - sx) * 3 + sx * 4);
    };
    const double coords[4] = {-0.25, 0.25, 0.75, 1.25};
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            EXPECT_NEAR(out.at(y, x), oracle(coords[y], coords[x]), 1e-6);
        }
    }
    EXPECT_NEAR(out.at(1, 1), 1.75, 1e-6);
    EXPECT_NEAR(out.at(2, 1), 2.75, 1e-6);
}

TEST(ResizeDepth, UpsampleOnly) {
    EXPECT_EQ(code_of([] { resize_depth(Tensor({4, 4}, 1.0f), 2, 2); }), ErrorCode::UpsampleOnly);
}

namespace {

DepthHypothesisGrid grid_of(std::vector<float> values) {
    DepthHypothesisGrid g;
    g.values = Tensor({values.size()}, values);
    g.near = values.front();
    g.far = values.back();
    g.range_width = g.far - g.near;
    return g;
}

} // namespace

TEST(WarpIndices, IdentityCamerasMapToSelf) {
    Rng rng(4);
    const CameraView cam = testutil::random_camera(rng, 7, 5);
    const auto g = sample_depth_candidates(1.0, 10.0, 6, DepthSpacing::inverse_depth);
    const WarpIndexMap map = compute_warp_indices(cam, cam, g);
    for (std::size_t y = 0; y < 5; ++y) {
        for (std::size_t x = 0; x < 7; ++x) {
            for (std::size_t k = 0; k < 6; ++k) {
                const std::size_t e = map.entry(y, x, k);
                ASSERT_TRUE(map.valid[e]);
                EXPECT_EQ(map.indices[4 * e], static_cast<std::int32_t>(y * 7 + x));
                EXPECT_FLOAT_EQ(map.weights[4 * e], 1.0f);
                for (int q = 1; q < 4; ++q) {
                    EXPECT_EQ(map.weights[4 * e + q], 0.0f);
                }
            }
        }
    }
}

TEST(WarpIndices, StereoDisparityMatchesFormula) {
    const double f = 40.0, b = 0.5;
    const CameraView left = testutil::simple_camera(64, 32, f);
    const CameraView right = testutil::simple_camera(64, 32, f, Vec3(b, 0, 0));
    for (double d : {2.0, 4.0, 8.0}) {
        const auto pts_grid = grid_of({static_cast<float>(d)});
        for (std::size_t x = 20; x < 44; x += 3) {
            const auto pts = warp_coordinates(left, right, pts_grid, nullptr, x, 10);
            EXPECT_NEAR(static_cast<double>(x) - pts[0].x, f * b / d, 1e-9);
            EXPECT_NEAR(pts[0].y, 10.0, 1e-9);
            EXPECT_NEAR(pts[0].z, d, 1e-12);
        }
    }
}

TEST(WarpIndices, BehindSourceIsInvalid) {
    const CameraView target = testutil::simple_camera(8, 8, 8.0);
    Pose back;
    back.rotation = testutil::rotation_from_angles(0, M_PI, 0);
    back.translation = Vec3(0, 0, -1);
    const CameraView source = build_camera({8, 8, 4, 4, 8, 8}, back);
    const WarpIndexMap map = compute_warp_indices(target, source, grid_of({2.0f, 3.0f}));
    for (auto v : map.valid) {
        EXPECT_EQ(v, 0);
    }
}

TEST(WarpIndices, PartialOutOfBoundsRenormalizes) {
    const CameraView left = testutil::simple_camera(8, 8, 8.0);
    const CameraView right = testutil::simple_camera(8, 8, 8.0, Vec3(0.3, 0, 0));
    // disparity 8 * 0.3 / 4 = 0.6 px: column 0 lands at -0.6, straddling the border
    const WarpIndexMap map = compute_warp_indices(left, right, grid_of({4.0f}));
    const std::size_t e = map.entry(3, 0, 0);
    ASSERT_TRUE(map.valid[e]);
    float s = 0.0f;
    for (int q = 0; q < 4; ++q) {
        s += map.weights[4 * e + q];
    }
    EXPECT_NEAR(s, 1.0f, 1e-6);
    EXPECT_FLOAT_EQ(map.weights[4 * e + 1], 1.0f);
    EXPECT_EQ(map.indices[4 * e + 1], 3 * 8 + 0);
}

TEST(WarpIndices, ResidualNeedsBaseDepth) {
    const CameraView cam = testutil::simple_camera(4, 4, 4.0);
    const auto r = residual_candidates(1.0, 3, 1.0, 5.0);
    EXPECT_EQ(code_of([&] { compute_warp_indices(cam, cam, r); }), ErrorCode::MissingBaseDepth);
    const Tensor wrong({3, 3}, 2.0f);
    WarpOptions opt;
    opt.target_grid = GridSize{4, 4};
    EXPECT_EQ(code_of([&] { compute_warp_indices(cam, cam, r, &wrong, opt); }), ErrorCode::ShapeMismatch);
    EXPECT_EQ(code_of([&] { compute_warp_indices(cam, cam, r, &wrong); }), ErrorCode::Indivisible);
}

TEST(WarpIndices, ResidualCandidatesAreClampedToRange) {
    const CameraView left = testutil::simple_camera(16, 8, 16.0);
    const CameraView right = testutil::simple_camera(16, 8, 16.0, Vec3(0.5, 0, 0));
    const auto r = residual_candidates(4.0, 5, 1.0, 3.0);
    const Tensor base({8, 16}, 2.5f);
    const auto pts = warp_coordinates(left, right, r, &base, 8, 4);
    const double expect_depth[5] = {1.0, 1.5, 2.5, 3.0, 3.0};
    for (int k = 0; k < 5; ++k) {
        EXPECT_NEAR(pts[k].z, expect_depth[k], 1e-12);
    }
}

TEST(DenseWarp, IdentityCopiesFeatures) {
    Rng rng(8);
    const CameraView cam = testutil::random_camera(rng, 6, 6);
    const Tensor f = random_tensor(rng, {6, 6, 3}, -1, 1);
    const Tensor out = dense_warp(f, cam, cam, grid_of({1.0f, 2.0f, 5.0f}));
    ASSERT_EQ(out.shape(), (Shape{6, 6, 3, 3}));
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 0; x < 6; ++x) {
            for (std::size_t k = 0; k < 3; ++k) {
                for (std::size_t c = 0; c < 3; ++c) {
                    EXPECT_EQ(out.at(y, x, k, c), f.at(y, x, c));
                }
            }
        }
    }
}

TEST(DenseWarp, ConstantFeaturesStayConstantWhereValid) {
    Rng rng(12);
    const auto [a, b] = testutil::random_pair(rng, 10, 8);
    const Tensor f({8, 10, 2}, 0.75f);
    const Tensor out = dense_warp(f, a, b, sample_depth_candidates(1.0, 6.0, 4, DepthSpacing::linear));
    const WarpIndexMap map = compute_warp_indices(a, b, sample_depth_candidates(1.0, 6.0, 4, DepthSpacing::linear));
    for (std::size_t e = 0; e < map.entries(); ++e) {
        for (std::size_t c = 0; c < 2; ++c) {
            EXPECT_NEAR(out[e * 2 + c], map.valid[e] ? 0.75f : 0.0f, 1e-6);
        }
    }
}

TEST(DenseWarp, GatherMatchesDenseOracle) {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const auto [a, b] = testutil::random_pair(rng, 6, 6);
        const Tensor f = random_tensor(rng, {6, 6, 4}, -1, 1);
        const auto g = sample_depth_candidates(1.0, 8.0, 5, DepthSpacing::inverse_depth);
        const Tensor dense = dense_warp(f, a, b, g);
        const Tensor gathered = gather_warped(f, compute_warp_indices(a, b, g));
        ASSERT_LT(max_abs_diff(dense, gathered), 1e-6f);
    }
}

TEST(DenseWarp, NearestSampling) {
    const CameraView left = testutil::simple_camera(8, 8, 8.0);
    const CameraView right = testutil::simple_camera(8, 8, 8.0, Vec3(0.4, 0, 0));
    WarpOptions opt;
    opt.sampling = Sampling::nearest;
    // disparity 8 * 0.4 / 2 = 1.6 px, so column 5 lands at 3.4
    const WarpIndexMap map = compute_warp_indices(left, right, grid_of({2.0f}), nullptr, opt);
    const std::size_t e = map.entry(2, 5, 0);
    ASSERT_TRUE(map.valid[e]);
    EXPECT_EQ(map.indices[4 * e], 2 * 8 + 3);
    EXPECT_EQ(map.weights[4 * e], 1.0f);
}

TEST(Epipolar, WarpedCandidatesAreCollinear) {
    Rng rng(33);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto [a, b] = testutil::random_pair(rng, 32, 24);
        const auto g = sample_depth_candidates(1.0, 10.0, 16, DepthSpacing::inverse_depth);
        const auto pts = warp_coordinates(a, b, g, nullptr, rng.below(32), rng.below(24));
        // line through the farthest-apart pair; distance of every point to it
        const Eigen::Vector2d p0(pts.front().x, pts.front().y), p1(pts.back().x, pts.back().y);
        const Eigen::Vector2d dir = (p1 - p0).normalized();
        for (const auto& p : pts) {
            const Eigen::Vector2d r = Eigen::Vector2d(p.x, p.y) - p0;
            worst = std::max(worst, std::abs(r.x() * dir.y() - r.y() * dir.x()));
        }
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(CameraJson, RoundTripIsExact) {
    Rng rng(6);
    std::vector<CameraView> cams;
    for (int i = 0; i < 4; ++i) {
        cams.push_back(testutil::random_camera(rng, 32, 16));
    }
    const auto back = cameras_from_json(nlohmann::json::parse(cameras_to_json(cams).dump()));
    ASSERT_EQ(back.size(), cams.size());
    for (std::size_t i = 0; i < cams.size(); ++i) {
        EXPECT_TRUE(back[i] == cams[i]);
    }
}
