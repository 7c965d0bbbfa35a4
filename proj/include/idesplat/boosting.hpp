#pragma once

// Depth Probability Boosting Units and the coarse-to-fine iteration around them.
//
// One unit stacks `layers_per_unit` epipolar attention layers; their attention
// maps are fused multiplicatively (P_m = Norm(P_{m-1} * A_m), P_0 uniform) and
// the fused distribution yields a soft-argmax depth offset. Units run at growing
// resolutions; each unit after the first searches a residual range centred on
// the previous estimate with half the previous width.

#include "idesplat/camera.hpp"
#include "idesplat/depth_grid.hpp"
#include "idesplat/epipolar.hpp"
#include "idesplat/error.hpp"
#include "idesplat/features.hpp"
#include "idesplat/tensor.hpp"
#include "idesplat/warp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace idesplat {

/// Element-wise product of two per-pixel distributions, renormalised. Rows whose
/// product sums below 1e-12 fall back to uniform.
inline DepthProbabilityVolume boost(const DepthProbabilityVolume& prev, const AttentionVolume& attention) {
    require(prev.probs.shape() == attention.probs.shape(), ErrorCode::ShapeMismatch,
            "probability volume " + shape_string(prev.probs.shape()) + " vs attention " +
                shape_string(attention.probs.shape()));
    const std::size_t d = prev.probs.shape().back();
    const std::size_t rows = prev.probs.size() / d;
    DepthProbabilityVolume out{Tensor(prev.probs.shape())};
    std::vector<double> prod(d);
    for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            prod[k] = static_cast<double>(prev.probs[r * d + k]) * attention.probs[r * d + k];
            total += prod[k];
        }
        for (std::size_t k = 0; k < d; ++k) {
            out.probs[r * d + k] = total < 1e-12 ? 1.0f / static_cast<float>(d) : static_cast<float>(prod[k] / total);
        }
    }
    return out;
}

inline DepthProbabilityVolume uniform_probabilities(std::size_t h, std::size_t w, std::size_t d) {
    return {Tensor({h, w, d}, 1.0f / static_cast<float>(d))};
}

/// Per-pixel expectation of the candidate values under `probs`.
inline Tensor expected_depth(const DepthProbabilityVolume& probs, const DepthHypothesisGrid& grid) {
    const std::size_t h = probs.probs.dim(0), w = probs.probs.dim(1), d = probs.probs.dim(2);
    require(grid.count() == d, ErrorCode::ShapeMismatch, "candidate count does not match probabilities");
    Tensor out({h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                s += static_cast<double>(probs.probs.at(y, x, k)) * grid.value(y, x, k);
            }
            out.at(y, x) = static_cast<float>(s);
        }
    }
    return out;
}

inline Tensor update_depth(const Tensor& prev, const Tensor& residual, double near, double far) {
    require(prev.shape() == residual.shape(), ErrorCode::ShapeMismatch, "depth and residual shapes differ");
    Tensor out(prev.shape());
    for (std::size_t i = 0; i < prev.size(); ++i) {
        out[i] = static_cast<float>(std::clamp(static_cast<double>(prev[i]) + residual[i], near, far));
    }
    return out;
}

struct PipelineConfig {
    std::size_t units = 3;
    std::size_t layers_per_unit = 2;
    std::vector<std::size_t> resolutions{64, 128, 256};
    std::vector<std::size_t> candidates_per_unit{64, 32, 16};
    double near = 1.0;
    double far = 9.0;
    DepthSpacing spacing = DepthSpacing::inverse_depth;
    std::vector<std::size_t> refine_radii{2, 4, 4};
    float invalid_fill = kDefaultInvalidFill;
    Sampling sampling = Sampling::bilinear;
    FeatureProviderConfig features{FeatureKind::pyramid, 64, 2, FeatureNormalization::unit, 12.0f, 1, std::nullopt};
};

inline void validate(const PipelineConfig& cfg) {
    require(cfg.units >= 1, ErrorCode::InvalidArgument, "need at least one unit");
    require(cfg.layers_per_unit >= 1, ErrorCode::InvalidArgument, "need at least one attention layer per unit");
    require(cfg.resolutions.size() == cfg.units && cfg.candidates_per_unit.size() == cfg.units &&
                cfg.refine_radii.size() == cfg.units,
            ErrorCode::InvalidArgument, "resolutions, candidates_per_unit and refine_radii must list one entry per unit");
    require(std::is_sorted(cfg.resolutions.begin(), cfg.resolutions.end()), ErrorCode::InvalidArgument,
            "resolutions must be non-decreasing");
    for (auto d : cfg.candidates_per_unit) {
        require(d >= 2, ErrorCode::InvalidArgument, "each unit needs at least two candidates");
    }
    require(cfg.near > 0.0, ErrorCode::NonPositiveNear, "near must be positive");
    require(cfg.far > cfg.near, ErrorCode::EmptyRange, "far must exceed near");
    validate(cfg.features);
}

/// Grid for unit `n` given an image of height x width.
inline GridSize unit_grid(const PipelineConfig& cfg, std::size_t n, std::size_t height, std::size_t width) {
    const std::size_t res = cfg.resolutions.at(n);
    require(res > 0 && height % res == 0, ErrorCode::Indivisible,
            "resolution " + std::to_string(res) + " does not divide image height " + std::to_string(height));
    const std::size_t scale = height / res;
    require(scale == 1 || scale == 2 || scale == 4, ErrorCode::InvalidArgument,
            "unit downsampling factor must be 1, 2 or 4, got " + std::to_string(scale));
    require(width % scale == 0, ErrorCode::Indivisible, "image width not divisible by unit downsampling factor");
    return {res, width / scale};
}

struct UnitTrace {
    std::size_t resolution = 0;
    DepthHypothesisGrid grid;
    double range_width = 0.0;
    Tensor depth;                 ///< D_n at the unit resolution
    Tensor residual;              ///< Delta D_n
    DepthProbabilityVolume probs; ///< fused P_M
    double seconds = 0.0;
};

struct IterationTrace {
    std::vector<UnitTrace> units;
};

/// Residual candidates for unit `n` (0-based, n >= 1): half the previous width.
inline DepthHypothesisGrid next_search_range(const IterationTrace& trace, std::size_t n, const PipelineConfig& cfg) {
    require(n >= 1 && n <= trace.units.size(), ErrorCode::InvalidArgument, "next_search_range needs a finished unit");
    const double width = trace.units[n - 1].range_width / 2.0;
    return residual_candidates(width, cfg.candidates_per_unit.at(n), cfg.near, cfg.far);
}

struct DpbuOptions {
    std::size_t layers = 2;
    std::size_t refine_radius = 1;
    float invalid_fill = kDefaultInvalidFill;
    Sampling sampling = Sampling::bilinear;
};

struct DpbuResult {
    DepthProbabilityVolume probs;
    Tensor residual;
    std::vector<AttentionVolume> layer_attention;
};

/// One boosting unit for view `target`. All feature maps share one grid; the
/// correlation grid equals the feature grid, so the upsampling step is the
/// identity unless a caller feeds coarser features.
inline DpbuResult run_dpbu(std::span<const Tensor> features, std::span<const CameraView> cameras, std::size_t target,
                           const DepthHypothesisGrid& grid, const Tensor* base_depth, const DpbuOptions& opt,
                           std::optional<GridSize> output_grid = std::nullopt) {
    require(features.size() == cameras.size(), ErrorCode::ShapeMismatch, "one feature map per camera required");
    require(features.size() >= 2, ErrorCode::FewerThanTwoViews, "need a target and at least one source view");
    require(target < features.size(), ErrorCode::UnknownView, "target view out of range");
    require(opt.layers >= 1, ErrorCode::InvalidArgument, "need at least one attention layer");
    const GridSize fgrid{features[target].dim(0), features[target].dim(1)};
    const GridSize ogrid = output_grid.value_or(fgrid);
    require(grid.mode == CandidateMode::absolute || base_depth != nullptr, ErrorCode::MissingBaseDepth,
            "residual candidates need a base depth map");

    Tensor base_at_features;
    const Tensor* base = base_depth;
    if (base_depth && (base_depth->dim(0) != fgrid.height || base_depth->dim(1) != fgrid.width)) {
        require(base_depth->dim(0) == ogrid.height && base_depth->dim(1) == ogrid.width, ErrorCode::ShapeMismatch,
                "base depth must match the feature or output grid");
        // Sample the base depth at the feature grid by area averaging.
        const std::size_t s = ogrid.height / fgrid.height;
        base_at_features = Tensor({fgrid.height, fgrid.width});
        for (std::size_t y = 0; y < fgrid.height; ++y) {
            for (std::size_t x = 0; x < fgrid.width; ++x) {
                double acc = 0.0;
                for (std::size_t dy = 0; dy < s; ++dy) {
                    for (std::size_t dx = 0; dx < s; ++dx) {
                        acc += base_depth->at(y * s + dy, x * s + dx);
                    }
                }
                base_at_features.at(y, x) = static_cast<float>(acc / static_cast<double>(s * s));
            }
        }
        base = &base_at_features;
    }

    DpbuResult result{uniform_probabilities(ogrid.height, ogrid.width, grid.count()), Tensor(), {}};
    for (std::size_t m = 0; m < opt.layers; ++m) {
        std::vector<WarpIndexMap> maps;
        maps.reserve(features.size() - 1);
        std::vector<std::pair<const Tensor*, const WarpIndexMap*>> sources;
        for (std::size_t v = 0; v < features.size(); ++v) {
            if (v == target) {
                continue;
            }
            WarpOptions wopt{fgrid, GridSize{features[v].dim(0), features[v].dim(1)}, opt.sampling};
            maps.push_back(compute_warp_indices(cameras[target], cameras[v], grid, base, wopt));
        }
        for (std::size_t v = 0, i = 0; v < features.size(); ++v) {
            if (v != target) {
                sources.emplace_back(&features[v], &maps[i++]);
            }
        }
        CorrelationVolume cv = multiview_correlation(features[target], sources);
        cv = refine_correlation(cv, opt.refine_radius);
        cv = upsample_correlation(cv, ogrid.height, ogrid.width);
        AttentionVolume a = attention_from_correlation(cv, opt.invalid_fill);
        result.probs = boost(result.probs, a);
        result.layer_attention.push_back(std::move(a));
    }
    if (grid.per_pixel() && (grid.values.dim(0) != ogrid.height || grid.values.dim(1) != ogrid.width)) {
        fail(ErrorCode::ShapeMismatch, "per-pixel candidates must match the output grid");
    }
    result.residual = expected_depth(result.probs, grid);
    return result;
}

/// Runs every unit for every view. Returns one trace per input view.
inline std::vector<IterationTrace> run_iterative_depth(std::span<const Tensor> images,
                                                       std::span<const CameraView> cameras, const PipelineConfig& cfg) {
    validate(cfg);
    require(images.size() == cameras.size(), ErrorCode::ShapeMismatch, "one image per camera required");
    require(images.size() >= 2, ErrorCode::FewerThanTwoViews, "iterative depth needs at least two views");
    const std::size_t height = images[0].dim(0);
    const std::size_t width = images[0].dim(1);
    for (std::size_t v = 0; v < images.size(); ++v) {
        require(images[v].ndim() == 3 && images[v].dim(0) == height && images[v].dim(1) == width && images[v].dim(2) == 3,
                ErrorCode::ShapeMismatch, "all images must be [H,W,3] of equal size");
        require(cameras[v].intrinsics.height == height && cameras[v].intrinsics.width == width,
                ErrorCode::ShapeMismatch, "camera image size does not match the image");
    }

    std::vector<IterationTrace> traces(images.size());
    for (std::size_t n = 0; n < cfg.units; ++n) {
        const auto t0 = std::chrono::steady_clock::now();
        const GridSize g = unit_grid(cfg, n, height, width);
        const DpbuOptions dopt{cfg.layers_per_unit, cfg.refine_radii[n], cfg.invalid_fill, cfg.sampling};
        const std::size_t scale = height / g.height;
        std::vector<Tensor> features;
        for (std::size_t v = 0; v < images.size(); ++v) {
            features.push_back(provide_features(images[v], cfg.features, v, scale));
        }
        for (std::size_t v = 0; v < images.size(); ++v) {
            auto& trace = traces[v];
            UnitTrace unit;
            unit.resolution = g.height;
            Tensor prev;
            if (n == 0) {
                unit.grid = sample_depth_candidates(cfg.near, cfg.far, cfg.candidates_per_unit[0], cfg.spacing);
                unit.range_width = cfg.far - cfg.near;
                prev = Tensor({g.height, g.width}, 0.0f);
            } else {
                unit.grid = next_search_range(trace, n, cfg);
                unit.range_width = unit.grid.range_width;
                prev = resize_depth(trace.units[n - 1].depth, g.height, g.width);
            }
            DpbuResult r = run_dpbu(features, cameras, v, unit.grid, n == 0 ? nullptr : &prev, dopt);
            unit.depth = update_depth(prev, r.residual, cfg.near, cfg.far);
            unit.residual = std::move(r.residual);
            unit.probs = std::move(r.probs);
            trace.units.push_back(std::move(unit));
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (auto& trace : traces) {
            trace.units.back().seconds = secs;
        }
    }
    return traces;
}

} // namespace idesplat
