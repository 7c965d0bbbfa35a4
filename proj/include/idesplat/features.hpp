#pragma once

// Deterministic per-view feature maps for plane-sweep matching. The pyramid
// provider builds handcrafted channels from the image; the external provider
// loads precomputed maps (e.g. dumped from a learned backbone) as TNSR files.

#include "idesplat/error.hpp"
#include "idesplat/tensor.hpp"
#include "idesplat/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace idesplat {

enum class FeatureKind { pyramid, external };

/// Post-processing applied after channel assembly.
enum class FeatureNormalization {
    none,
    /// Per-channel standardization over the image, then every pixel vector scaled
    /// to L2 norm `norm`. Zero vectors stay zero.
    unit,
};

struct FeatureProviderConfig {
    FeatureKind kind = FeatureKind::pyramid;
    std::size_t channels = 64;
    std::size_t levels = 4;
    FeatureNormalization normalization = FeatureNormalization::none;
    float norm = 8.0f;
    // box radius applied to full-resolution input; downsampled scales are already area-filtered
    std::size_t prefilter = 0;
    std::optional<std::filesystem::path> source_path;
};

inline void validate(const FeatureProviderConfig& cfg) {
    require(cfg.channels >= 3, ErrorCode::InvalidArgument, "feature channels must be >= 3");
    require(cfg.levels >= 1, ErrorCode::InvalidArgument, "feature levels must be >= 1");
    require(cfg.kind != FeatureKind::external || cfg.source_path.has_value(), ErrorCode::InvalidArgument,
            "external features need a source path");
}

/// Channels produced before truncation/padding: RGB, x/y gradients of RGB,
/// box-blurred RGB per level, local intensity variance.
inline std::size_t pyramid_raw_channels(std::size_t levels) { return 3 + 6 + 3 * levels + 1; }

namespace detail {

inline Tensor area_downsample(const Tensor& image, std::size_t scale) {
    const std::size_t h = image.dim(0) / scale;
    const std::size_t w = image.dim(1) / scale;
    const std::size_t c = image.dim(2);
    Tensor out({h, w, c});
    const float inv = 1.0f / static_cast<float>(scale * scale);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                float sum = 0.0f;
                for (std::size_t dy = 0; dy < scale; ++dy) {
                    for (std::size_t dx = 0; dx < scale; ++dx) {
                        sum += image.at(y * scale + dy, x * scale + dx, ch);
                    }
                }
                out.at(y, x, ch) = sum * inv;
            }
        }
    }
    return out;
}

/// Box mean over the in-bounds part of a (2r+1)^2 window, computed with a
/// summed-area table per channel.
inline Tensor box_mean(const Tensor& img, std::size_t radius) {
    const std::size_t h = img.dim(0);
    const std::size_t w = img.dim(1);
    const std::size_t c = img.dim(2);
    Tensor out({h, w, c});
    std::vector<double> sat((h + 1) * (w + 1));
    for (std::size_t ch = 0; ch < c; ++ch) {
        std::fill(sat.begin(), sat.end(), 0.0);
        for (std::size_t y = 0; y < h; ++y) {
            double row = 0.0;
            for (std::size_t x = 0; x < w; ++x) {
                row += img.at(y, x, ch);
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        for (std::size_t y = 0; y < h; ++y) {
            const std::size_t y0 = y >= radius ? y - radius : 0;
            const std::size_t y1 = std::min(h, y + radius + 1);
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t x0 = x >= radius ? x - radius : 0;
                const std::size_t x1 = std::min(w, x + radius + 1);
                const double sum = sat[y1 * (w + 1) + x1] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0] +
                                   sat[y0 * (w + 1) + x0];
                out.at(y, x, ch) = static_cast<float>(sum / static_cast<double>((y1 - y0) * (x1 - x0)));
            }
        }
    }
    return out;
}

inline void normalize_features(Tensor& f, float norm) {
    const std::size_t pixels = f.dim(0) * f.dim(1);
    const std::size_t c = f.dim(2);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
            mean += f[p * c + ch];
        }
        mean /= static_cast<double>(pixels);
        double var = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
            const double d = f[p * c + ch] - mean;
            var += d * d;
        }
        var /= static_cast<double>(pixels);
        const double inv_std = var > 1e-12 ? 1.0 / std::sqrt(var) : 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
            f[p * c + ch] = static_cast<float>((f[p * c + ch] - mean) * inv_std);
        }
    }
    for (std::size_t p = 0; p < pixels; ++p) {
        double sq = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            sq += static_cast<double>(f[p * c + ch]) * f[p * c + ch];
        }
        if (sq < 1e-20) {
            continue;
        }
        const double k = norm / std::sqrt(sq);
        for (std::size_t ch = 0; ch < c; ++ch) {
            f[p * c + ch] = static_cast<float>(f[p * c + ch] * k);
        }
    }
}

} // namespace detail

inline Tensor pyramid_features(const Tensor& image, const FeatureProviderConfig& cfg, std::size_t scale) {
    validate(cfg);
    require(image.ndim() == 3 && image.dim(2) == 3, ErrorCode::ShapeMismatch, "image must be [H,W,3]");
    require(scale == 1 || scale == 2 || scale == 4, ErrorCode::InvalidArgument, "scale must be 1, 2 or 4");
    require(image.dim(0) % scale == 0 && image.dim(1) % scale == 0, ErrorCode::Indivisible,
            "scale " + std::to_string(scale) + " does not divide " + shape_string(image.shape()));

    const Tensor small = scale == 1 ? (cfg.prefilter > 0 ? detail::box_mean(image, cfg.prefilter) : image)
                                    : detail::area_downsample(image, scale);
    const std::size_t h = small.dim(0);
    const std::size_t w = small.dim(1);
    const std::size_t raw_channels = pyramid_raw_channels(cfg.levels);

    std::vector<Tensor> blurred;
    for (std::size_t level = 0; level < cfg.levels; ++level) {
        blurred.push_back(detail::box_mean(small, std::size_t{1} << level));
    }
    Tensor intensity({h, w, 1});
    Tensor intensity_sq({h, w, 1});
    for (std::size_t p = 0; p < h * w; ++p) {
        const float i = (small[3 * p] + small[3 * p + 1] + small[3 * p + 2]) / 3.0f;
        intensity[p] = i;
        intensity_sq[p] = i * i;
    }
    const Tensor mean_i = detail::box_mean(intensity, 1);
    const Tensor mean_i2 = detail::box_mean(intensity_sq, 1);

    Tensor out({h, w, cfg.channels});
    std::vector<float> px(raw_channels);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t ym = y > 0 ? y - 1 : 0;
        const std::size_t yp = std::min(h - 1, y + 1);
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t xm = x > 0 ? x - 1 : 0;
            const std::size_t xp = std::min(w - 1, x + 1);
            std::size_t k = 0;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                px[k++] = small.at(y, x, ch);
            }
            for (std::size_t ch = 0; ch < 3; ++ch) {
                px[k++] = 0.5f * (small.at(y, xp, ch) - small.at(y, xm, ch));
                px[k++] = 0.5f * (small.at(yp, x, ch) - small.at(ym, x, ch));
            }
            for (const auto& b : blurred) {
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    px[k++] = b.at(y, x, ch);
                }
            }
            const std::size_t p = y * w + x;
            px[k++] = std::max(0.0f, mean_i2[p] - mean_i[p] * mean_i[p]);
            for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
                out.at(y, x, ch) = ch < raw_channels ? px[ch] : 0.0f;
            }
        }
    }
    if (cfg.normalization == FeatureNormalization::unit) {
        detail::normalize_features(out, cfg.norm);
    }
    return out;
}

/// File name of an externally supplied feature map for one view at one
/// downsampling factor: view_VV_sS.tnsr inside the source directory.
inline std::filesystem::path external_feature_path(const std::filesystem::path& dir, std::size_t view,
                                                   std::size_t scale) {
    char name[64];
    std::snprintf(name, sizeof(name), "view_%02zu_s%zu.tnsr", view, scale);
    return dir / name;
}

/// Features for `view` at resolution image/scale from whichever provider the
/// config names.
inline Tensor provide_features(const Tensor& image, const FeatureProviderConfig& cfg, std::size_t view,
                               std::size_t scale) {
    validate(cfg);
    if (cfg.kind == FeatureKind::pyramid) {
        return pyramid_features(image, cfg, scale);
    }
    require(image.dim(0) % scale == 0 && image.dim(1) % scale == 0, ErrorCode::Indivisible,
            "scale does not divide the image");
    const auto path = external_feature_path(*cfg.source_path, view, scale);
    Tensor t = load_tensor(path);
    require_shape(t, {image.dim(0) / scale, image.dim(1) / scale, cfg.channels}, path.string());
    validate_finite(t, path.string());
    if (cfg.normalization == FeatureNormalization::unit) {
        detail::normalize_features(t, cfg.norm);
    }
    return t;
}

} // namespace idesplat
