#pragma once

#include "idesplat/camera.hpp"
#include "idesplat/error.hpp"
#include "idesplat/memory.hpp"
#include "idesplat/tensor.hpp"
#include "idesplat/warp.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace idesplat {

struct CorrelationVolume {
    Tensor values;                             ///< [H,W,D]
    memory::tracked_vector<std::uint8_t> valid; ///< [H,W,D]

    std::size_t height() const { return values.dim(0); }
    std::size_t width() const { return values.dim(1); }
    std::size_t depth() const { return values.dim(2); }
};

/// Per-pixel distribution over depth candidates; rows sum to one.
struct AttentionVolume {
    Tensor probs; ///< [H,W,D]
};

using DepthProbabilityVolume = AttentionVolume;

inline constexpr float kDefaultInvalidFill = -1e4f;

/// Correlation of target features against source features gathered through the
/// warp indices, scaled by 1/sqrt(C). Never builds the [H,W,D,C] warped copy.
inline CorrelationVolume smm_correlation(const Tensor& target_features, const Tensor& source_features,
                                         const WarpIndexMap& map) {
    require_rank(target_features, 3, "target features");
    require_rank(source_features, 3, "source features");
    require(target_features.dim(2) == source_features.dim(2), ErrorCode::ChannelMismatch,
            "target has " + std::to_string(target_features.dim(2)) + " channels, source " +
                std::to_string(source_features.dim(2)));
    require(target_features.dim(0) == map.height && target_features.dim(1) == map.width, ErrorCode::ShapeMismatch,
            "target features do not match the warp grid");
    require(source_features.dim(0) == map.source.height && source_features.dim(1) == map.source.width,
            ErrorCode::ShapeMismatch, "source features do not match the warp source grid");

    const std::size_t c = target_features.dim(2);
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
    CorrelationVolume out{Tensor({map.height, map.width, map.depth}), {}};
    out.valid.assign(map.valid.begin(), map.valid.end());
    const float* src = source_features.raw();
    for (std::size_t p = 0; p < map.height * map.width; ++p) {
        const float* ft = &target_features.raw()[p * c];
        for (std::size_t k = 0; k < map.depth; ++k) {
            const std::size_t e = p * map.depth + k;
            if (!map.valid[e]) {
                continue;
            }
            double sum = 0.0;
            for (int q = 0; q < 4; ++q) {
                const double w = map.weights[4 * e + q];
                if (w == 0.0) {
                    continue;
                }
                const float* fs = &src[static_cast<std::size_t>(map.indices[4 * e + q]) * c];
                double dot = 0.0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    dot += static_cast<double>(ft[ch]) * fs[ch];
                }
                sum += w * dot;
            }
            out.values[e] = static_cast<float>(sum * inv_sqrt_c);
        }
    }
    return out;
}

/// Same correlation through a materialised warped volume [H,W,D,C].
inline CorrelationVolume dense_correlation(const Tensor& target_features, const Tensor& warped,
                                           const std::vector<std::uint8_t>* valid = nullptr) {
    require_rank(warped, 4, "warped features");
    require(target_features.dim(2) == warped.dim(3), ErrorCode::ChannelMismatch, "channel mismatch");
    const std::size_t h = warped.dim(0), w = warped.dim(1), d = warped.dim(2), c = warped.dim(3);
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
    CorrelationVolume out{Tensor({h, w, d}), {}};
    out.valid.assign(h * w * d, 1);
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t e = p * d + k;
            if (valid && !(*valid)[e]) {
                out.valid[e] = 0;
                continue;
            }
            double dot = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                dot += static_cast<double>(target_features[p * c + ch]) * warped[e * c + ch];
            }
            out.values[e] = static_cast<float>(dot * inv_sqrt_c);
        }
    }
    return out;
}

/// Per-entry mean over the sources valid at that entry.
inline CorrelationVolume multiview_correlation(const Tensor& target_features,
                                               const std::vector<std::pair<const Tensor*, const WarpIndexMap*>>& sources) {
    require(!sources.empty(), ErrorCode::EmptySources, "need at least one source view");
    if (sources.size() == 1) {
        return smm_correlation(target_features, *sources[0].first, *sources[0].second);
    }
    CorrelationVolume first = smm_correlation(target_features, *sources[0].first, *sources[0].second);
    const std::size_t n = first.values.size();
    std::vector<double> sum(n, 0.0);
    std::vector<std::uint32_t> count(n, 0);
    auto accumulate = [&](const CorrelationVolume& cv) {
        require(cv.values.shape() == first.values.shape(), ErrorCode::ShapeMismatch, "source correlation shapes differ");
        for (std::size_t e = 0; e < n; ++e) {
            if (cv.valid[e]) {
                sum[e] += cv.values[e];
                ++count[e];
            }
        }
    };
    accumulate(first);
    for (std::size_t s = 1; s < sources.size(); ++s) {
        accumulate(smm_correlation(target_features, *sources[s].first, *sources[s].second));
    }
    for (std::size_t e = 0; e < n; ++e) {
        first.valid[e] = count[e] > 0;
        first.values[e] = count[e] > 0 ? static_cast<float>(sum[e] / count[e]) : 0.0f;
    }
    return first;
}

/// Validity-aware box filter of side 2r+1 on every depth slice.
inline CorrelationVolume refine_correlation(const CorrelationVolume& in, std::size_t radius) {
    if (radius == 0) {
        return in;
    }
    const std::size_t h = in.height(), w = in.width(), d = in.depth();
    CorrelationVolume out{Tensor({h, w, d}), in.valid};
    // Summed-area tables over (value, valid-count) per slice, stored [H+1,W+1,D].
    std::vector<double> sv((h + 1) * (w + 1) * d, 0.0);
    std::vector<std::uint32_t> sc((h + 1) * (w + 1) * d, 0);
    auto at = [&](std::size_t y, std::size_t x, std::size_t k) { return (y * (w + 1) + x) * d + k; };
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t k = 0; k < d; ++k) {
                const std::size_t e = (y * w + x) * d + k;
                const double v = in.valid[e] ? in.values[e] : 0.0;
                const std::uint32_t c = in.valid[e] ? 1 : 0;
                sv[at(y + 1, x + 1, k)] = v + sv[at(y, x + 1, k)] + sv[at(y + 1, x, k)] - sv[at(y, x, k)];
                sc[at(y + 1, x + 1, k)] = c + sc[at(y, x + 1, k)] + sc[at(y + 1, x, k)] - sc[at(y, x, k)];
            }
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t y0 = y >= radius ? y - radius : 0;
        const std::size_t y1 = std::min(h, y + radius + 1);
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t x0 = x >= radius ? x - radius : 0;
            const std::size_t x1 = std::min(w, x + radius + 1);
            for (std::size_t k = 0; k < d; ++k) {
                const std::size_t e = (y * w + x) * d + k;
                if (!in.valid[e]) {
                    continue;
                }
                const double s = sv[at(y1, x1, k)] - sv[at(y0, x1, k)] - sv[at(y1, x0, k)] + sv[at(y0, x0, k)];
                const std::uint32_t n = sc[at(y1, x1, k)] - sc[at(y0, x1, k)] - sc[at(y1, x0, k)] + sc[at(y0, x0, k)];
                out.values[e] = static_cast<float>(s / n);
            }
        }
    }
    return out;
}

/// Bilinear upsampling per depth slice (over valid neighbours only); validity
/// follows the nearest source cell.
inline CorrelationVolume upsample_correlation(const CorrelationVolume& in, std::size_t height, std::size_t width) {
    const std::size_t h = in.height(), w = in.width(), d = in.depth();
    require(height >= h && width >= w, ErrorCode::UpsampleOnly, "upsample_correlation only upsamples");
    if (height == h && width == w) {
        return in;
    }
    CorrelationVolume out{Tensor({height, width, d}), {}};
    out.valid.assign(height * width * d, 0);
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        detail::upsample_tap(y, h, height, y0, y1, fy);
        const std::size_t ny = std::min(h - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * h / height));
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double fx;
            detail::upsample_tap(x, w, width, x0, x1, fx);
            const std::size_t nx = std::min(w - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * w / width));
            const std::array<std::size_t, 4> cells{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
            const std::array<double, 4> wts{(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
            for (std::size_t k = 0; k < d; ++k) {
                const std::size_t e = (y * width + x) * d + k;
                out.valid[e] = in.valid[(ny * w + nx) * d + k];
                double s = 0.0, t = 0.0;
                for (int q = 0; q < 4; ++q) {
                    if (in.valid[cells[q] * d + k]) {
                        s += wts[q] * in.values[cells[q] * d + k];
                        t += wts[q];
                    }
                }
                out.values[e] = t > 0.0 ? static_cast<float>(s / t) : 0.0f;
            }
        }
    }
    return out;
}

/// Stable softmax over the depth axis. Invalid entries take `invalid_fill`;
/// pixels with no valid entry get the uniform distribution.
inline AttentionVolume attention_from_correlation(const CorrelationVolume& cv, float invalid_fill = kDefaultInvalidFill) {
    const std::size_t d = cv.depth();
    const std::size_t pixels = cv.height() * cv.width();
    AttentionVolume out{Tensor(cv.values.shape())};
    std::vector<double> row(d);
    for (std::size_t p = 0; p < pixels; ++p) {
        bool any = false;
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < d; ++k) {
            const std::size_t e = p * d + k;
            row[k] = cv.valid[e] ? cv.values[e] : invalid_fill;
            any = any || cv.valid[e];
            peak = std::max(peak, row[k]);
        }
        float* o = &out.probs.raw()[p * d];
        if (!any) {
            std::fill(o, o + d, 1.0f / static_cast<float>(d));
            continue;
        }
        double total = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            row[k] = std::exp(row[k] - peak);
            total += row[k];
        }
        for (std::size_t k = 0; k < d; ++k) {
            o[k] = static_cast<float>(row[k] / total);
        }
    }
    return out;
}

} // namespace idesplat
