#pragma once

#include "idesplat/error.hpp"
#include "idesplat/tensor.hpp"

#include <Eigen/Core>
#include <Eigen/LU>
#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace idesplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    std::size_t width = 1;
    std::size_t height = 1;

    bool operator==(const Intrinsics&) const = default;
};

/// World-to-camera transform: x_cam = rotation * x_world + translation.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    bool operator==(const Pose& o) const { return rotation == o.rotation && translation == o.translation; }
};

struct CameraView {
    Intrinsics intrinsics;
    Pose pose;
    Mat34 projection = Mat34::Zero();

    Mat3 K() const {
        Mat3 k = Mat3::Identity();
        k(0, 0) = intrinsics.fx;
        k(1, 1) = intrinsics.fy;
        k(0, 2) = intrinsics.cx;
        k(1, 2) = intrinsics.cy;
        return k;
    }

    Vec3 to_camera(const Vec3& world) const { return pose.rotation * world + pose.translation; }
    Vec3 to_world(const Vec3& cam) const { return pose.rotation.transpose() * (cam - pose.translation); }
    Vec3 center() const { return -pose.rotation.transpose() * pose.translation; }

    /// Continuous pixel coordinates of a camera-frame point (pixel centers sit
    /// at integer + 0.5).
    Vec2 pixel_of_camera_point(const Vec3& cam) const {
        return {intrinsics.fx * cam.x() / cam.z() + intrinsics.cx, intrinsics.fy * cam.y() / cam.z() + intrinsics.cy};
    }

    Vec2 project(const Vec3& world) const { return pixel_of_camera_point(to_camera(world)); }

    /// World point at view depth `depth` along the ray through pixel coordinate (u, v).
    Vec3 unproject(double u, double v, double depth) const {
        const Vec3 cam((u - intrinsics.cx) / intrinsics.fx * depth, (v - intrinsics.cy) / intrinsics.fy * depth, depth);
        return to_world(cam);
    }

    bool operator==(const CameraView& o) const { return intrinsics == o.intrinsics && pose == o.pose; }
};

inline void validate(const Intrinsics& k) {
    require(k.fx > 0.0 && k.fy > 0.0, ErrorCode::InvalidIntrinsics, "focal lengths must be positive");
    require(k.width > 0 && k.height > 0, ErrorCode::InvalidIntrinsics, "image size must be positive");
    require(k.cx >= 0.0 && k.cx < static_cast<double>(k.width) && k.cy >= 0.0 && k.cy < static_cast<double>(k.height),
            ErrorCode::InvalidIntrinsics, "principal point must lie inside the image");
}

inline void validate(const Pose& pose) {
    const double ortho = (pose.rotation.transpose() * pose.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det = pose.rotation.determinant();
    require(ortho <= 1e-6 && std::abs(det - 1.0) <= 1e-6, ErrorCode::NonOrthonormal,
            "rotation is not a proper orthonormal matrix");
    require(pose.translation.allFinite(), ErrorCode::NonFinite, "translation is not finite");
}

inline CameraView build_camera(const Intrinsics& k, const Pose& pose) {
    validate(k);
    validate(pose);
    CameraView cam{k, pose, Mat34::Zero()};
    Mat34 rt;
    rt.leftCols<3>() = pose.rotation;
    rt.col(3) = pose.translation;
    cam.projection = cam.K() * rt;
    return cam;
}

/// Same camera observed on a grid of `width` x `height` cells covering the full
/// image. Grid dims must divide the image dims.
inline CameraView scaled_camera(const CameraView& cam, std::size_t width, std::size_t height) {
    const auto& k = cam.intrinsics;
    require(width > 0 && height > 0 && k.width % width == 0 && k.height % height == 0, ErrorCode::Indivisible,
            "grid " + std::to_string(width) + "x" + std::to_string(height) + " does not divide camera " +
                std::to_string(k.width) + "x" + std::to_string(k.height));
    const double sx = static_cast<double>(width) / static_cast<double>(k.width);
    const double sy = static_cast<double>(height) / static_cast<double>(k.height);
    Intrinsics scaled{k.fx * sx, k.fy * sy, k.cx * sx, k.cy * sy, width, height};
    return build_camera(scaled, cam.pose);
}

/// World-space points for every pixel center of a depth map.
inline Tensor unproject_depth(const Tensor& depth, const CameraView& cam) {
    require_rank(depth, 2, "depth map");
    const std::size_t h = depth.dim(0);
    const std::size_t w = depth.dim(1);
    const CameraView grid_cam = (w == cam.intrinsics.width && h == cam.intrinsics.height) ? cam : scaled_camera(cam, w, h);
    Tensor points({h, w, 3});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const float d = depth.at(y, x);
            require(d > 0.0f, ErrorCode::NonPositiveDepth,
                    "depth at (" + std::to_string(x) + "," + std::to_string(y) + ") is not positive");
            const Vec3 p = grid_cam.unproject(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, d);
            for (int c = 0; c < 3; ++c) {
                points.at(y, x, c) = static_cast<float>(p[c]);
            }
        }
    }
    return points;
}

namespace detail {

/// Source sample coordinate for output index i when upscaling n -> m with pixel
/// centers aligned (half-pixel convention), clamped to the source extent.
inline void upsample_tap(std::size_t i, std::size_t n, std::size_t m, std::size_t& i0, std::size_t& i1, double& frac) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(n) / static_cast<double>(m) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(n - 1, i0 + 1);
    frac = s - static_cast<double>(i0);
}

} // namespace detail

/// Bilinear upsampling of a depth map with pixel-center alignment.
inline Tensor resize_depth(const Tensor& depth, std::size_t height, std::size_t width) {
    require_rank(depth, 2, "depth map");
    const std::size_t h = depth.dim(0);
    const std::size_t w = depth.dim(1);
    require(height >= h && width >= w, ErrorCode::UpsampleOnly, "resize_depth only upsamples");
    Tensor out({height, width});
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        detail::upsample_tap(y, h, height, y0, y1, fy);
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double fx;
            detail::upsample_tap(x, w, width, x0, x1, fx);
            const double top = (1.0 - fx) * depth.at(y0, x0) + fx * depth.at(y0, x1);
            const double bottom = (1.0 - fx) * depth.at(y1, x0) + fx * depth.at(y1, x1);
            out.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bottom);
        }
    }
    return out;
}

// JSON: {"fx","fy","cx","cy","width","height","R":[9 row-major],"t":[3]}

inline nlohmann::json camera_to_json(const CameraView& cam) {
    const auto& k = cam.intrinsics;
    std::vector<double> r(9);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            r[3 * i + j] = cam.pose.rotation(i, j);
        }
    }
    return {{"fx", k.fx},         {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height},
            {"R", r},
            {"t", std::vector<double>{cam.pose.translation.x(), cam.pose.translation.y(), cam.pose.translation.z()}}};
}

inline CameraView camera_from_json(const nlohmann::json& j) {
    try {
        Intrinsics k{j.at("fx").get<double>(),        j.at("fy").get<double>(),         j.at("cx").get<double>(),
                     j.at("cy").get<double>(),        j.at("width").get<std::size_t>(), j.at("height").get<std::size_t>()};
        const auto r = j.at("R").get<std::vector<double>>();
        const auto t = j.at("t").get<std::vector<double>>();
        require(r.size() == 9 && t.size() == 3, ErrorCode::InvalidArgument, "pose needs 9 rotation and 3 translation values");
        Pose pose;
        for (int i = 0; i < 3; ++i) {
            for (int c = 0; c < 3; ++c) {
                pose.rotation(i, c) = r[3 * i + c];
            }
            pose.translation[i] = t[i];
        }
        return build_camera(k, pose);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("malformed camera JSON: ") + e.what());
    }
}

inline nlohmann::json cameras_to_json(const std::vector<CameraView>& cams) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : cams) {
        arr.push_back(camera_to_json(c));
    }
    return arr;
}

inline std::vector<CameraView> cameras_from_json(const nlohmann::json& arr) {
    require(arr.is_array(), ErrorCode::InvalidArgument, "poses JSON must be an array");
    std::vector<CameraView> cams;
    for (const auto& j : arr) {
        cams.push_back(camera_from_json(j));
    }
    return cams;
}

} // namespace idesplat
