#pragma once

// Cross-view correspondences for plane-sweep matching. compute_warp_indices
// records, for every (target pixel, depth candidate), the four bilinear
// neighbours in the source feature grid and their weights. dense_warp samples
// the source features at the same locations and materialises the full
// [H,W,D,C] volume; it exists as the reference the index path is checked
// against.

#include "idesplat/camera.hpp"
#include "idesplat/depth_grid.hpp"
#include "idesplat/error.hpp"
#include "idesplat/memory.hpp"
#include "idesplat/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>

namespace idesplat {

enum class Sampling { bilinear, nearest };

struct GridSize {
    std::size_t height = 0;
    std::size_t width = 0;
    bool operator==(const GridSize&) const = default;
};

struct WarpOptions {
    /// Target / source feature grids; default to the camera image size (or the
    /// base depth map size for the target).
    std::optional<GridSize> target_grid;
    std::optional<GridSize> source_grid;
    Sampling sampling = Sampling::bilinear;
};

inline constexpr double kMinSourceDepth = 1e-6;

struct WarpIndexMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t depth = 0;
    GridSize source;
    memory::tracked_vector<std::int32_t> indices; ///< [H,W,D,4] flat source pixel ids
    memory::tracked_vector<float> weights;        ///< [H,W,D,4]
    memory::tracked_vector<std::uint8_t> valid;   ///< [H,W,D]

    std::size_t entry(std::size_t y, std::size_t x, std::size_t k) const { return (y * width + x) * depth + k; }
    std::size_t entries() const { return height * width * depth; }
};

/// Where a target grid cell lands in the source grid.
struct WarpedPoint {
    double x = 0.0; ///< source grid coordinate; integers are cell centers
    double y = 0.0;
    double z = 0.0; ///< depth in the source camera
};

namespace detail {

inline double snap(double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
}

struct WarpContext {
    CameraView target;
    CameraView source;
    GridSize tgrid;
    GridSize sgrid;
};

inline WarpContext make_context(const CameraView& target, const CameraView& source, GridSize tgrid, GridSize sgrid) {
    return {scaled_camera(target, tgrid.width, tgrid.height), scaled_camera(source, sgrid.width, sgrid.height), tgrid,
            sgrid};
}

inline WarpedPoint warp_point(const WarpContext& ctx, std::size_t x, std::size_t y, double depth) {
    const Vec3 world = ctx.target.unproject(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, depth);
    const Vec3 cam = ctx.source.to_camera(world);
    if (cam.z() <= kMinSourceDepth) {
        return {0.0, 0.0, cam.z()};
    }
    const Vec2 uv = ctx.source.pixel_of_camera_point(cam);
    return {snap(uv.x() - 0.5), snap(uv.y() - 0.5), cam.z()};
}

inline double candidate_depth(const DepthHypothesisGrid& g, const Tensor* base, std::size_t y, std::size_t x,
                              std::size_t k) {
    if (g.mode == CandidateMode::absolute) {
        return g.value(y, x, k);
    }
    return std::clamp(static_cast<double>(base->at(y, x)) + g.value(y, x, k), g.near, g.far);
}

inline GridSize resolve_target_grid(const CameraView& target, const DepthHypothesisGrid& g, const Tensor* base,
                                    const WarpOptions& opt) {
    if (opt.target_grid) {
        return *opt.target_grid;
    }
    if (base) {
        return {base->dim(0), base->dim(1)};
    }
    if (g.per_pixel()) {
        return {g.values.dim(0), g.values.dim(1)};
    }
    return {target.intrinsics.height, target.intrinsics.width};
}

inline void check_warp_inputs(const DepthHypothesisGrid& g, const Tensor* base, GridSize tgrid) {
    require(g.count() >= 1, ErrorCode::InvalidArgument, "empty depth grid");
    require(g.mode == CandidateMode::absolute || base != nullptr, ErrorCode::MissingBaseDepth,
            "residual candidates need a base depth map");
    if (base) {
        require_shape(*base, {tgrid.height, tgrid.width}, "base depth");
    }
    if (g.per_pixel()) {
        require(g.values.dim(0) == tgrid.height && g.values.dim(1) == tgrid.width, ErrorCode::ShapeMismatch,
                "per-pixel candidates do not match the target grid");
    }
}

} // namespace detail

/// Continuous source-grid locations of one target cell across all candidates.
inline std::vector<WarpedPoint> warp_coordinates(const CameraView& target, const CameraView& source,
                                                 const DepthHypothesisGrid& g, const Tensor* base_depth, std::size_t x,
                                                 std::size_t y, const WarpOptions& opt = {}) {
    const GridSize tgrid = detail::resolve_target_grid(target, g, base_depth, opt);
    const GridSize sgrid = opt.source_grid.value_or(GridSize{source.intrinsics.height, source.intrinsics.width});
    detail::check_warp_inputs(g, base_depth, tgrid);
    const auto ctx = detail::make_context(target, source, tgrid, sgrid);
    std::vector<WarpedPoint> pts;
    for (std::size_t k = 0; k < g.count(); ++k) {
        pts.push_back(detail::warp_point(ctx, x, y, detail::candidate_depth(g, base_depth, y, x, k)));
    }
    return pts;
}

inline WarpIndexMap compute_warp_indices(const CameraView& target, const CameraView& source,
                                         const DepthHypothesisGrid& g, const Tensor* base_depth = nullptr,
                                         const WarpOptions& opt = {}) {
    const GridSize tgrid = detail::resolve_target_grid(target, g, base_depth, opt);
    const GridSize sgrid = opt.source_grid.value_or(GridSize{source.intrinsics.height, source.intrinsics.width});
    detail::check_warp_inputs(g, base_depth, tgrid);
    const auto ctx = detail::make_context(target, source, tgrid, sgrid);

    WarpIndexMap map;
    map.height = tgrid.height;
    map.width = tgrid.width;
    map.depth = g.count();
    map.source = sgrid;
    map.indices.assign(map.entries() * 4, 0);
    map.weights.assign(map.entries() * 4, 0.0f);
    map.valid.assign(map.entries(), 0);

    const auto sw = static_cast<long>(sgrid.width);
    const auto sh = static_cast<long>(sgrid.height);
    for (std::size_t y = 0; y < tgrid.height; ++y) {
        for (std::size_t x = 0; x < tgrid.width; ++x) {
            for (std::size_t k = 0; k < map.depth; ++k) {
                const std::size_t e = map.entry(y, x, k);
                const WarpedPoint p = detail::warp_point(ctx, x, y, detail::candidate_depth(g, base_depth, y, x, k));
                if (p.z <= kMinSourceDepth) {
                    continue;
                }
                std::int32_t* idx = &map.indices[4 * e];
                float* w = &map.weights[4 * e];
                if (opt.sampling == Sampling::nearest) {
                    const long nx = std::lround(p.x);
                    const long ny = std::lround(p.y);
                    if (nx >= 0 && nx < sw && ny >= 0 && ny < sh) {
                        idx[0] = static_cast<std::int32_t>(ny * sw + nx);
                        w[0] = 1.0f;
                        map.valid[e] = 1;
                    }
                    continue;
                }
                const double fx0 = std::floor(p.x);
                const double fy0 = std::floor(p.y);
                const double ax = p.x - fx0;
                const double ay = p.y - fy0;
                const long x0 = static_cast<long>(fx0);
                const long y0 = static_cast<long>(fy0);
                const std::array<long, 4> nx{x0, x0 + 1, x0, x0 + 1};
                const std::array<long, 4> ny{y0, y0, y0 + 1, y0 + 1};
                const std::array<double, 4> nw{(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
                double total = 0.0;
                for (int q = 0; q < 4; ++q) {
                    if (nx[q] >= 0 && nx[q] < sw && ny[q] >= 0 && ny[q] < sh && nw[q] > 0.0) {
                        total += nw[q];
                    }
                }
                if (total <= 0.0) {
                    continue;
                }
                for (int q = 0; q < 4; ++q) {
                    if (nx[q] >= 0 && nx[q] < sw && ny[q] >= 0 && ny[q] < sh && nw[q] > 0.0) {
                        idx[q] = static_cast<std::int32_t>(ny[q] * sw + nx[q]);
                        w[q] = static_cast<float>(nw[q] / total);
                    }
                }
                map.valid[e] = 1;
            }
        }
    }
    return map;
}

/// Materialised [H,W,D,C] warped source features. Invalid entries are zero.
inline Tensor dense_warp(const Tensor& source_features, const CameraView& target, const CameraView& source,
                         const DepthHypothesisGrid& g, const Tensor* base_depth = nullptr, WarpOptions opt = {}) {
    require_rank(source_features, 3, "source features");
    const GridSize sgrid{source_features.dim(0), source_features.dim(1)};
    opt.source_grid = sgrid;
    if (!opt.target_grid && !base_depth && !g.per_pixel()) {
        opt.target_grid = sgrid;
    }
    const GridSize tgrid = detail::resolve_target_grid(target, g, base_depth, opt);
    detail::check_warp_inputs(g, base_depth, tgrid);
    const auto ctx = detail::make_context(target, source, tgrid, sgrid);
    const std::size_t c = source_features.dim(2);
    const std::size_t d = g.count();

    Tensor out({tgrid.height, tgrid.width, d, c});
    std::vector<double> acc(c);
    for (std::size_t y = 0; y < tgrid.height; ++y) {
        for (std::size_t x = 0; x < tgrid.width; ++x) {
            for (std::size_t k = 0; k < d; ++k) {
                const WarpedPoint p = detail::warp_point(ctx, x, y, detail::candidate_depth(g, base_depth, y, x, k));
                if (p.z <= kMinSourceDepth) {
                    continue;
                }
                std::fill(acc.begin(), acc.end(), 0.0);
                double total = 0.0;
                auto tap = [&](long sx, long sy, double w) {
                    if (w <= 0.0 || sx < 0 || sy < 0 || sx >= static_cast<long>(sgrid.width) ||
                        sy >= static_cast<long>(sgrid.height)) {
                        return;
                    }
                    total += w;
                    const float* f = &source_features.raw()[(static_cast<std::size_t>(sy) * sgrid.width +
                                                             static_cast<std::size_t>(sx)) *
                                                            c];
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        acc[ch] += w * f[ch];
                    }
                };
                if (opt.sampling == Sampling::nearest) {
                    tap(std::lround(p.x), std::lround(p.y), 1.0);
                } else {
                    const long x0 = static_cast<long>(std::floor(p.x));
                    const long y0 = static_cast<long>(std::floor(p.y));
                    const double ax = p.x - static_cast<double>(x0);
                    const double ay = p.y - static_cast<double>(y0);
                    tap(x0, y0, (1 - ax) * (1 - ay));
                    tap(x0 + 1, y0, ax * (1 - ay));
                    tap(x0, y0 + 1, (1 - ax) * ay);
                    tap(x0 + 1, y0 + 1, ax * ay);
                }
                if (total <= 0.0) {
                    continue;
                }
                float* o = &out.raw()[out.offset(y, x, k, 0)];
                for (std::size_t ch = 0; ch < c; ++ch) {
                    o[ch] = static_cast<float>(acc[ch] / total);
                }
            }
        }
    }
    return out;
}

/// Expands a WarpIndexMap into the dense [H,W,D,C] volume it describes.
inline Tensor gather_warped(const Tensor& source_features, const WarpIndexMap& map) {
    require_rank(source_features, 3, "source features");
    require(source_features.dim(0) == map.source.height && source_features.dim(1) == map.source.width,
            ErrorCode::ShapeMismatch, "source features do not match the warp grid");
    const std::size_t c = source_features.dim(2);
    Tensor out({map.height, map.width, map.depth, c});
    for (std::size_t e = 0; e < map.entries(); ++e) {
        if (!map.valid[e]) {
            continue;
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            double v = 0.0;
            for (int q = 0; q < 4; ++q) {
                v += static_cast<double>(map.weights[4 * e + q]) *
                     source_features[static_cast<std::size_t>(map.indices[4 * e + q]) * c + ch];
            }
            out[e * c + ch] = static_cast<float>(v);
        }
    }
    return out;
}

} // namespace idesplat
