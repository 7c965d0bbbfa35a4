#pragma once

// Per-pixel Gaussians from a depth map, EWA projection to screen space, and a
// CPU front-to-back rasterizer.

#include "idesplat/camera.hpp"
#include "idesplat/error.hpp"
#include "idesplat/tensor.hpp"
#include "idesplat/tensor_io.hpp"
#include "idesplat/json_io.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

namespace idesplat {

struct GaussianSet {
    Tensor means;     // [N,3] world
    Tensor opacity;   // [N]
    Tensor scales;    // [N,3]
    Tensor rotations; // [N,4] (w, x, y, z), unit
    Tensor colors;    // [N,3]

    std::size_t size() const { return opacity.empty() ? 0 : opacity.dim(0); }
};

inline GaussianSet empty_gaussians() {
    return {Tensor({0, 3}), Tensor({0}), Tensor({0, 3}), Tensor({0, 4}), Tensor({0, 3})};
}

inline GaussianSet concat(const std::vector<GaussianSet>& sets) {
    std::size_t n = 0;
    for (const auto& s : sets) {
        n += s.size();
    }
    GaussianSet out{Tensor({n, 3}), Tensor({n}), Tensor({n, 3}), Tensor({n, 4}), Tensor({n, 3})};
    std::size_t at = 0;
    for (const auto& s : sets) {
        const std::size_t m = s.size();
        std::copy_n(s.means.raw(), 3 * m, out.means.raw() + 3 * at);
        std::copy_n(s.opacity.raw(), m, out.opacity.raw() + at);
        std::copy_n(s.scales.raw(), 3 * m, out.scales.raw() + 3 * at);
        std::copy_n(s.rotations.raw(), 4 * m, out.rotations.raw() + 4 * at);
        std::copy_n(s.colors.raw(), 3 * m, out.colors.raw() + 3 * at);
        at += m;
    }
    return out;
}

inline constexpr std::size_t kRawGaussianChannels = 8; // 3 scale, 4 rotation, 1 opacity

/// s = s_min + softplus(raw) * s_scale, with s_scale multiplied by the pixel
/// footprint depth/fx when footprint_relative is set.
struct DecodeOptions {
    float s_min = 1e-4f;
    float s_scale = 1.0f;
    bool footprint_relative = false;
};

namespace detail {

inline double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace detail

/// Channel layout of raw: [scale x3, rotation (w,x,y,z) x4, opacity x1, ...].
inline GaussianSet decode_gaussians(const Tensor& raw, const Tensor& depth, const CameraView& cam, const Tensor& colors,
                                    const DecodeOptions& opt = {}) {
    require_rank(raw, 3, "raw gaussian parameters");
    require(raw.dim(2) >= kRawGaussianChannels, ErrorCode::TooFewRawChannels,
            "raw parameters need at least 8 channels, got " + std::to_string(raw.dim(2)));
    const std::size_t h = raw.dim(0), w = raw.dim(1), k = raw.dim(2);
    require_shape(depth, {h, w}, "depth map");
    require_shape(colors, {h, w, 3}, "colors");
    require(opt.s_min > 0.0f && opt.s_scale >= 0.0f, ErrorCode::InvalidArgument, "scale activation must be positive");
    validate_finite(raw, "raw gaussian parameters");
    const Tensor points = unproject_depth(depth, cam);
    const double fx = cam.intrinsics.fx * static_cast<double>(w) / static_cast<double>(cam.intrinsics.width);

    const std::size_t n = h * w;
    GaussianSet g{Tensor({n, 3}), Tensor({n}), Tensor({n, 3}), Tensor({n, 4}), Tensor({n, 3})};
    for (std::size_t i = 0; i < n; ++i) {
        const float* r = raw.raw() + i * k;
        const double footprint = opt.footprint_relative ? depth[i] / fx : 1.0;
        for (std::size_t a = 0; a < 3; ++a) {
            g.means[3 * i + a] = points[3 * i + a];
            g.colors[3 * i + a] = colors[3 * i + a];
            g.scales[3 * i + a] =
                static_cast<float>(opt.s_min + detail::softplus(r[a]) * opt.s_scale * footprint);
        }
        const double norm = std::sqrt(double(r[3]) * r[3] + double(r[4]) * r[4] + double(r[5]) * r[5] + double(r[6]) * r[6]);
        for (std::size_t a = 0; a < 4; ++a) {
            g.rotations[4 * i + a] = norm < 1e-8 ? (a == 0 ? 1.0f : 0.0f) : static_cast<float>(r[3 + a] / norm);
        }
        g.opacity[i] = static_cast<float>(detail::logistic(r[7]));
    }
    return g;
}

/// Raw parameters that decode to the same scale, identity rotation and opacity
/// at every pixel.
inline Tensor constant_raw_gaussians(std::size_t h, std::size_t w, float raw_scale, float raw_opacity) {
    Tensor raw({h, w, kRawGaussianChannels});
    for (std::size_t i = 0; i < h * w; ++i) {
        float* r = raw.raw() + i * kRawGaussianChannels;
        r[0] = r[1] = r[2] = raw_scale;
        r[3] = 1.0f;
        r[7] = raw_opacity;
    }
    return raw;
}

inline Eigen::Matrix3d rotation_of(const GaussianSet& g, std::size_t i) {
    const float* q = g.rotations.raw() + 4 * i;
    return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).normalized().toRotationMatrix();
}

/// World covariance R diag(s^2) R^T.
inline Eigen::Matrix3d world_covariance(const GaussianSet& g, std::size_t i) {
    const Eigen::Matrix3d r = rotation_of(g, i);
    const Eigen::Vector3d s(g.scales[3 * i], g.scales[3 * i + 1], g.scales[3 * i + 2]);
    return r * s.cwiseProduct(s).asDiagonal() * r.transpose();
}

inline constexpr double kScreenCovarianceFloor = 0.3; // px^2
inline constexpr double kMinSplatDepth = 1e-6;

struct ProjectedSplat {
    std::size_t index = 0;
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    double depth = 0.0;
};

/// Splats behind the camera (z <= kMinSplatDepth) are dropped.
inline std::vector<ProjectedSplat> project_covariance(const GaussianSet& g, const CameraView& cam,
                                                      double floor = kScreenCovarianceFloor) {
    std::vector<ProjectedSplat> out;
    out.reserve(g.size());
    const double fx = cam.intrinsics.fx, fy = cam.intrinsics.fy;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec3 world(g.means[3 * i], g.means[3 * i + 1], g.means[3 * i + 2]);
        const Vec3 c = cam.to_camera(world);
        if (!(c.z() > kMinSplatDepth)) {
            continue;
        }
        Eigen::Matrix<double, 2, 3> j;
        j << fx / c.z(), 0.0, -fx * c.x() / (c.z() * c.z()), 0.0, fy / c.z(), -fy * c.y() / (c.z() * c.z());
        const Eigen::Matrix<double, 2, 3> jw = j * cam.pose.rotation;
        Eigen::Matrix2d cov = jw * world_covariance(g, i) * jw.transpose();
        cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
        cov += floor * Eigen::Matrix2d::Identity();
        out.push_back({i, cam.pixel_of_camera_point(c), cov, c.z()});
    }
    return out;
}

struct RenderedImage {
    Tensor color; // [H,W,3]
    Tensor alpha; // [H,W]
};

/// Front-to-back over splats sorted by view depth (ties by index), each
/// evaluated at pixel centers inside its 3-sigma box.
inline RenderedImage rasterize(const GaussianSet& g, const CameraView& cam, std::size_t height, std::size_t width) {
    require(height > 0 && width > 0, ErrorCode::InvalidArgument, "render size must be positive");
    const CameraView view = (cam.intrinsics.width == width && cam.intrinsics.height == height)
                                ? cam
                                : scaled_camera(cam, width, height);
    std::vector<ProjectedSplat> splats = project_covariance(g, view);
    std::stable_sort(splats.begin(), splats.end(), [](const ProjectedSplat& a, const ProjectedSplat& b) {
        return a.depth < b.depth;
    });

    std::vector<double> color(height * width * 3, 0.0);
    std::vector<double> trans(height * width, 1.0);
    for (const auto& s : splats) {
        const double det = s.cov.determinant();
        if (!(det > 0.0)) {
            continue;
        }
        const Eigen::Matrix2d inv = s.cov.inverse();
        const double rx = 3.0 * std::sqrt(s.cov(0, 0)), ry = 3.0 * std::sqrt(s.cov(1, 1));
        const auto x0 = static_cast<long>(std::max(0.0, std::ceil(s.mean.x() - rx - 0.5)));
        const auto x1 = static_cast<long>(std::min(static_cast<double>(width) - 1.0, std::floor(s.mean.x() + rx - 0.5)));
        const auto y0 = static_cast<long>(std::max(0.0, std::ceil(s.mean.y() - ry - 0.5)));
        const auto y1 = static_cast<long>(std::min(static_cast<double>(height) - 1.0, std::floor(s.mean.y() + ry - 0.5)));
        const double a = g.opacity[s.index];
        const float* c = g.colors.raw() + 3 * s.index;
        for (long y = y0; y <= y1; ++y) {
            for (long x = x0; x <= x1; ++x) {
                const double dx = static_cast<double>(x) + 0.5 - s.mean.x();
                const double dy = static_cast<double>(y) + 0.5 - s.mean.y();
                const double q = inv(0, 0) * dx * dx + 2.0 * inv(0, 1) * dx * dy + inv(1, 1) * dy * dy;
                const double wgt = a * std::exp(-0.5 * q);
                const std::size_t p = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
                const double t = trans[p];
                for (int ch = 0; ch < 3; ++ch) {
                    color[3 * p + ch] += wgt * c[ch] * t;
                }
                trans[p] = t * (1.0 - wgt);
            }
        }
    }
    RenderedImage out{Tensor({height, width, 3}), Tensor({height, width})};
    for (std::size_t p = 0; p < height * width; ++p) {
        for (int ch = 0; ch < 3; ++ch) {
            out.color[3 * p + ch] = static_cast<float>(color[3 * p + ch]);
        }
        out.alpha[p] = static_cast<float>(std::clamp(1.0 - trans[p], 0.0, 1.0));
    }
    return out;
}

/// TNSR bundle plus manifest.json, for external viewers.
inline void save_gaussians(const GaussianSet& g, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_tensor(g.means, dir / "means.tnsr");
    save_tensor(g.opacity, dir / "opacity.tnsr");
    save_tensor(g.scales, dir / "scales.tnsr");
    save_tensor(g.rotations, dir / "rotations.tnsr");
    save_tensor(g.colors, dir / "colors.tnsr");
    detail::write_json(dir / "manifest.json", {{"count", g.size()},
                                               {"means", "means.tnsr"},
                                               {"opacity", "opacity.tnsr"},
                                               {"scales", "scales.tnsr"},
                                               {"rotations", "rotations.tnsr"},
                                               {"rotation_order", "wxyz"},
                                               {"colors", "colors.tnsr"}});
}

} // namespace idesplat
