#pragma once

// Synthetic multi-view scenes rendered by exact ray casting, with analytic
// per-pixel depth. All cameras share orientation (identity rotation) and sit on
// the x axis, so planes of constant world z are fronto-parallel in every view.

#include "idesplat/camera.hpp"
#include "idesplat/error.hpp"
#include "idesplat/rng.hpp"
#include "idesplat/tensor.hpp"
#include "idesplat/json_io.hpp"
#include "idesplat/tensor_io.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace idesplat {

enum class SceneKind { textured_plane, box_room, two_planes };
enum class TextureKind { checker, noise, gradient_mix };

NLOHMANN_JSON_SERIALIZE_ENUM(SceneKind, {{SceneKind::textured_plane, "textured_plane"},
                                         {SceneKind::box_room, "box_room"},
                                         {SceneKind::two_planes, "two_planes"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TextureKind, {{TextureKind::checker, "checker"},
                                           {TextureKind::noise, "noise"},
                                           {TextureKind::gradient_mix, "gradient_mix"}})

struct SceneConfig {
    SceneKind kind = SceneKind::textured_plane;
    TextureKind texture = TextureKind::checker;
    std::uint64_t texture_seed = 7;
    double plane_depth = 4.0;      ///< textured_plane depth; two_planes background
    double front_depth = 2.5;      ///< two_planes foreground depth
    double front_split_x = 0.0;    ///< two_planes foreground covers world x < split
    std::array<double, 3> box{4.0, 3.0, 6.0}; ///< box_room width, height, back-wall depth
    double texture_cell = 0.25;  ///< checker cell size / noise base wavelength, world units
    std::size_t views = 2;
    double baseline = 0.5;
    std::size_t width = 256;
    std::size_t height = 256;
    double focal = 256.0;
    double near = 1.0;
    double far = 9.0;
    std::size_t supersample = 4;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SceneConfig, kind, texture, texture_seed, plane_depth, front_depth,
                                                front_split_x, box, texture_cell, views, baseline, width, height, focal,
                                                near, far, supersample)

struct SyntheticScene {
    SceneConfig config;
    std::vector<Tensor> images;    ///< [H,W,3] in [0,1]
    std::vector<CameraView> cameras;
    std::vector<Tensor> gt_depth;  ///< [H,W] view depth
};

namespace detail {

inline constexpr double kCheckerDetail = 0.7;
inline constexpr double kCheckerFine = 0.25;

inline std::uint64_t hash3(std::uint64_t seed, std::int64_t a, std::int64_t b, std::uint64_t salt) {
    std::uint64_t h = Rng::mix(seed ^ 0x9e3779b97f4a7c15ULL);
    h = Rng::mix(h ^ static_cast<std::uint64_t>(a) * 0xd6e8feb86659fd93ULL);
    h = Rng::mix(h ^ static_cast<std::uint64_t>(b) * 0xa0761d6478bd642fULL);
    return Rng::mix(h ^ salt);
}

inline double hash_unit(std::uint64_t seed, std::int64_t a, std::int64_t b, std::uint64_t salt) {
    return static_cast<double>(hash3(seed, a, b, salt) >> 11) * 0x1.0p-53;
}

/// Smooth value noise on an integer lattice.
inline double value_noise(std::uint64_t seed, double u, double v, std::uint64_t salt) {
    const double fu = std::floor(u), fv = std::floor(v);
    const auto iu = static_cast<std::int64_t>(fu), iv = static_cast<std::int64_t>(fv);
    auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double a = fade(u - fu), b = fade(v - fv);
    const double n00 = hash_unit(seed, iu, iv, salt), n10 = hash_unit(seed, iu + 1, iv, salt);
    const double n01 = hash_unit(seed, iu, iv + 1, salt), n11 = hash_unit(seed, iu + 1, iv + 1, salt);
    return (1 - b) * ((1 - a) * n00 + a * n10) + b * ((1 - a) * n01 + a * n11);
}

/// Albedo of surface `surface` at surface coordinates (u, v), world units.
inline std::array<double, 3> texture_color(const SceneConfig& cfg, int surface, double u, double v) {
    const std::uint64_t seed = cfg.texture_seed + 1000003ULL * static_cast<std::uint64_t>(surface);
    const double cell = cfg.texture_cell;
    std::array<double, 3> rgb{};
    switch (cfg.texture) {
    case TextureKind::checker: {
        // Random-coloured cells (non-periodic, so plane sweeps have a unique
        // match) with a fine noise layer so no cell interior is flat.
        const auto cu = static_cast<std::int64_t>(std::floor(u / cell));
        const auto cv = static_cast<std::int64_t>(std::floor(v / cell));
        for (std::uint64_t c = 0; c < 3; ++c) {
            const double base = 0.2 + 0.6 * hash_unit(seed, cu, cv, c);
            const double mid = value_noise(seed, u / (0.5 * cell), v / (0.5 * cell), 10 + c) - 0.5;
            const double fine = value_noise(seed, u / (kCheckerFine * cell), v / (kCheckerFine * cell), 13 + c) - 0.5;
            rgb[c] = base + kCheckerDetail * (mid + 0.7 * fine);
        }
        break;
    }
    case TextureKind::noise: {
        for (std::uint64_t c = 0; c < 3; ++c) {
            double acc = 0.0, amp = 0.5, total = 0.0, freq = 1.0 / (4.0 * cell);
            for (int octave = 0; octave < 4; ++octave) {
                acc += amp * value_noise(seed, u * freq, v * freq, 20 + 4 * c + octave);
                total += amp;
                amp *= 0.5;
                freq *= 2.0;
            }
            rgb[c] = 0.1 + 0.8 * acc / total;
        }
        break;
    }
    case TextureKind::gradient_mix: {
        const double k = 2.0 * 3.14159265358979323846 / (4.0 * cell);
        const double phase = hash_unit(seed, 0, 0, 3) * 6.283185307179586;
        rgb[0] = 0.5 + 0.3 * std::sin(k * u + phase) * std::cos(0.7 * k * v);
        rgb[1] = 0.5 + 0.3 * std::sin(1.3 * k * v + 2.0 * phase + 0.5 * std::sin(k * u));
        rgb[2] = 0.5 + 0.15 * std::sin(0.5 * k * (u + v)) + 0.15 * (value_noise(seed, u / cell, v / cell, 40) - 0.5);
        break;
    }
    }
    for (auto& c : rgb) {
        c = std::clamp(c, 0.0, 1.0);
    }
    return rgb;
}

struct Hit {
    double t = std::numeric_limits<double>::infinity(); ///< ray parameter; direction has z = 1 in camera frame
    int surface = -1;
    double u = 0.0, v = 0.0;
};

/// Intersects the ray origin + t*dir (world frame) with the scene geometry.
inline Hit cast_ray(const SceneConfig& cfg, const Vec3& origin, const Vec3& dir) {
    Hit best;
    auto plane_z = [&](double z, int surface, double max_x) {
        if (std::abs(dir.z()) < 1e-15) {
            return;
        }
        const double t = (z - origin.z()) / dir.z();
        if (t <= 0.0 || t >= best.t) {
            return;
        }
        const Vec3 p = origin + t * dir;
        if (p.x() >= max_x) {
            return;
        }
        best = {t, surface, p.x(), p.y()};
    };
    switch (cfg.kind) {
    case SceneKind::textured_plane:
        plane_z(cfg.plane_depth, 0, std::numeric_limits<double>::infinity());
        break;
    case SceneKind::two_planes:
        plane_z(cfg.plane_depth, 0, std::numeric_limits<double>::infinity());
        plane_z(cfg.front_depth, 1, cfg.front_split_x);
        break;
    case SceneKind::box_room: {
        const double hw = cfg.box[0] / 2.0, hh = cfg.box[1] / 2.0, back = cfg.box[2];
        plane_z(back, 0, std::numeric_limits<double>::infinity());
        auto wall = [&](int axis, double value, int surface) {
            if (std::abs(dir[axis]) < 1e-15) {
                return;
            }
            const double t = (value - origin[axis]) / dir[axis];
            if (t <= 0.0 || t >= best.t) {
                return;
            }
            const Vec3 p = origin + t * dir;
            if (p.z() < 0.0 || p.z() > back) {
                return;
            }
            const int other = axis == 0 ? 1 : 0;
            if (std::abs(p[other]) > (other == 0 ? hw : hh)) {
                return;
            }
            best = {t, surface, axis == 0 ? p.z() : p.x(), axis == 0 ? p.y() : p.z()};
        };
        wall(0, -hw, 1);
        wall(0, hw, 2);
        wall(1, -hh, 3);
        wall(1, hh, 4);
        break;
    }
    }
    return best;
}

} // namespace detail

inline std::vector<CameraView> scene_cameras(const SceneConfig& cfg) {
    std::vector<CameraView> cams;
    const double mid = 0.5 * static_cast<double>(cfg.views - 1);
    for (std::size_t v = 0; v < cfg.views; ++v) {
        const double cx = (static_cast<double>(v) - mid) * cfg.baseline;
        Intrinsics k{cfg.focal, cfg.focal, 0.5 * static_cast<double>(cfg.width), 0.5 * static_cast<double>(cfg.height),
                     cfg.width, cfg.height};
        Pose pose{Mat3::Identity(), Vec3(-cx, 0.0, 0.0)};
        cams.push_back(build_camera(k, pose));
    }
    return cams;
}

/// View depth of the first surface hit through pixel coordinate (u, v).
inline double scene_depth(const SceneConfig& cfg, const CameraView& cam, double u, double v) {
    const Vec3 origin = cam.center();
    const Vec3 dir = cam.unproject(u, v, 1.0) - origin;
    return detail::cast_ray(cfg, origin, dir).t;
}

inline void validate(const SceneConfig& cfg) {
    require(cfg.views >= 2, ErrorCode::FewerThanTwoViews, "scenes need at least two views");
    require(cfg.width > 0 && cfg.height > 0 && cfg.focal > 0.0 && cfg.supersample >= 1, ErrorCode::InvalidArgument,
            "image size, focal length and supersampling must be positive");
    require(cfg.near > 0.0 && cfg.far > cfg.near, ErrorCode::EmptyRange, "invalid near/far");
    require(cfg.texture_cell > 0.0, ErrorCode::InvalidArgument, "texture cell must be positive");
}

inline SyntheticScene generate_scene(const SceneConfig& cfg) {
    validate(cfg);
    SyntheticScene scene{cfg, {}, scene_cameras(cfg), {}};
    const std::size_t ss = cfg.supersample;
    for (const auto& cam : scene.cameras) {
        Tensor img({cfg.height, cfg.width, 3});
        Tensor depth({cfg.height, cfg.width});
        const Vec3 origin = cam.center();
        for (std::size_t y = 0; y < cfg.height; ++y) {
            for (std::size_t x = 0; x < cfg.width; ++x) {
                const double d = scene_depth(cfg, cam, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
                require(std::isfinite(d) && d >= cfg.near && d <= cfg.far, ErrorCode::GeometryOutOfRange,
                        "scene depth " + std::to_string(d) + " outside [near, far]");
                depth.at(y, x) = static_cast<float>(d);
                std::array<double, 3> acc{};
                for (std::size_t sy = 0; sy < ss; ++sy) {
                    for (std::size_t sx = 0; sx < ss; ++sx) {
                        const double u = static_cast<double>(x) + (static_cast<double>(sx) + 0.5) / static_cast<double>(ss);
                        const double v = static_cast<double>(y) + (static_cast<double>(sy) + 0.5) / static_cast<double>(ss);
                        const Vec3 dir = cam.unproject(u, v, 1.0) - origin;
                        const auto hit = detail::cast_ray(cfg, origin, dir);
                        require(hit.surface >= 0, ErrorCode::GeometryOutOfRange, "ray escaped the scene");
                        const auto rgb = detail::texture_color(cfg, hit.surface, hit.u, hit.v);
                        for (int c = 0; c < 3; ++c) {
                            acc[c] += rgb[c];
                        }
                    }
                }
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = static_cast<float>(acc[c] / static_cast<double>(ss * ss));
                }
            }
        }
        scene.images.push_back(std::move(img));
        scene.gt_depth.push_back(std::move(depth));
    }
    return scene;
}

/// 1 where the pixel of view `view` is seen by at least one other view: it
/// projects inside that view and agrees with that view's depth (relative
/// tolerance `tol`, nearest-pixel lookup).
inline Tensor covisibility_mask(const std::vector<CameraView>& cameras, const std::vector<Tensor>& depths,
                                std::size_t view, double tol = 1e-2) {
    const auto& d = depths.at(view);
    const std::size_t h = d.dim(0), w = d.dim(1);
    Tensor mask({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const Vec3 world = cameras[view].unproject(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, d.at(y, x));
            for (std::size_t o = 0; o < cameras.size() && mask.at(y, x) == 0.0f; ++o) {
                if (o == view) {
                    continue;
                }
                const Vec3 cam = cameras[o].to_camera(world);
                if (cam.z() <= 0.0) {
                    continue;
                }
                const Vec2 uv = cameras[o].pixel_of_camera_point(cam);
                const auto& od = depths[o];
                if (uv.x() < 0.0 || uv.y() < 0.0 || uv.x() >= static_cast<double>(od.dim(1)) ||
                    uv.y() >= static_cast<double>(od.dim(0))) {
                    continue;
                }
                const double seen = od.at(static_cast<std::size_t>(uv.y()), static_cast<std::size_t>(uv.x()));
                if (std::abs(seen - cam.z()) <= tol * cam.z()) {
                    mask.at(y, x) = 1.0f;
                }
            }
        }
    }
    return mask;
}

/// Mean abs difference between view i and view j's image resampled through
/// view i's depth, over pixels of i that j sees unoccluded. Returns NaN when no
/// pixel qualifies.
inline double photo_consistency_error(const SyntheticScene& scene, std::size_t i, std::size_t j, double tol = 1e-2) {
    require(i < scene.images.size() && j < scene.images.size() && i != j, ErrorCode::UnknownView,
            "photo consistency needs two distinct views");
    const Tensor& di = scene.gt_depth[i];
    const Tensor& dj = scene.gt_depth[j];
    const Tensor& img = scene.images[j];
    const std::size_t h = di.dim(0), w = di.dim(1);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const Vec3 world = scene.cameras[i].unproject(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, di.at(y, x));
            const Vec3 cam = scene.cameras[j].to_camera(world);
            if (cam.z() <= 0.0) {
                continue;
            }
            const Vec2 uv = scene.cameras[j].pixel_of_camera_point(cam);
            const double gx = uv.x() - 0.5, gy = uv.y() - 0.5;
            const double fx = std::floor(gx), fy = std::floor(gy);
            if (fx < 0.0 || fy < 0.0 || fx + 1.0 >= static_cast<double>(w) || fy + 1.0 >= static_cast<double>(h)) {
                continue;
            }
            const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
            const double ax = gx - fx, ay = gy - fy;
            bool visible = true;
            for (std::size_t q = 0; q < 4; ++q) {
                const double seen = dj.at(y0 + q / 2, x0 + q % 2);
                visible = visible && std::abs(seen - cam.z()) <= tol * cam.z();
            }
            if (!visible) {
                continue;
            }
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = (1 - ax) * (1 - ay) * img.at(y0, x0, c) + ax * (1 - ay) * img.at(y0, x0 + 1, c) +
                                 (1 - ax) * ay * img.at(y0 + 1, x0, c) + ax * ay * img.at(y0 + 1, x0 + 1, c);
                total += std::abs(v - scene.images[i].at(y, x, c));
            }
            count += 3;
        }
    }
    return count ? total / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

/// Named scenes used by the acceptance suite and the CLI.
inline SceneConfig bundled_scene_config(const std::string& name) {
    SceneConfig cfg;
    if (name == "plane") {
        return cfg;
    }
    if (name == "plane3") {
        cfg.views = 3;
        return cfg;
    }
    if (name == "two_planes") {
        cfg.kind = SceneKind::two_planes;
        return cfg;
    }
    if (name == "box_room") {
        cfg.kind = SceneKind::box_room;
        cfg.texture = TextureKind::noise;
        return cfg;
    }
    fail(ErrorCode::InvalidArgument, "unknown bundled scene '" + name + "'");
}

namespace detail {

inline std::string view_file(const char* pattern, std::size_t v) {
    char name[64];
    std::snprintf(name, sizeof(name), pattern, v);
    return name;
}

} // namespace detail

/// Layout: images/view_NN.png, depth/view_NN.pfm, poses.json, scene.json.
inline void export_scene(const SyntheticScene& scene, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "depth");
    for (std::size_t v = 0; v < scene.images.size(); ++v) {
        write_png(scene.images[v], dir / "images" / detail::view_file("view_%02zu.png", v));
        write_pfm(scene.gt_depth[v], dir / "depth" / detail::view_file("view_%02zu.pfm", v));
    }
    detail::write_json(dir / "poses.json", cameras_to_json(scene.cameras));
    detail::write_json(dir / "scene.json", nlohmann::json(scene.config));
}

inline SyntheticScene import_scene(const std::filesystem::path& dir) {
    require(std::filesystem::exists(dir / "poses.json"), ErrorCode::MissingPoses, (dir / "poses.json").string());
    SyntheticScene scene;
    scene.cameras = cameras_from_json(detail::read_json(dir / "poses.json"));
    if (std::filesystem::exists(dir / "scene.json")) {
        scene.config = detail::read_json(dir / "scene.json").get<SceneConfig>();
    }
    for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
        const auto img = dir / "images" / detail::view_file("view_%02zu.png", v);
        const auto dep = dir / "depth" / detail::view_file("view_%02zu.pfm", v);
        require(std::filesystem::exists(img), ErrorCode::MissingImage, img.string());
        require(std::filesystem::exists(dep), ErrorCode::MissingDepth, dep.string());
        scene.images.push_back(read_png(img));
        scene.gt_depth.push_back(read_pfm(dep));
    }
    return scene;
}

} // namespace idesplat
