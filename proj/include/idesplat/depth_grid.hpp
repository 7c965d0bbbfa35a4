#pragma once

#include "idesplat/error.hpp"
#include "idesplat/tensor.hpp"

#include <cmath>
#include <string>

namespace idesplat {

enum class CandidateMode { absolute, residual };
enum class DepthSpacing { linear, inverse_depth };

/// Depth hypotheses, shared across pixels ([D]) or per pixel ([H,W,D]).
/// Absolute grids hold depths; residual grids hold symmetric offsets added to a
/// base depth map before warping.
struct DepthHypothesisGrid {
    CandidateMode mode = CandidateMode::absolute;
    Tensor values;
    double near = 0.0;
    double far = 0.0;
    double range_width = 0.0;

    bool per_pixel() const { return values.ndim() == 3; }
    std::size_t count() const { return values.shape().back(); }

    float value(std::size_t y, std::size_t x, std::size_t k) const {
        return per_pixel() ? values.at(y, x, k) : values[k];
    }

    /// Spacing between neighbouring shared candidates (uniform for residual grids).
    double spacing() const { return range_width / static_cast<double>(count() - 1); }
};

inline DepthHypothesisGrid sample_depth_candidates(double near, double far, std::size_t count, DepthSpacing spacing) {
    require(near > 0.0, ErrorCode::NonPositiveNear, "near must be positive");
    require(far > near, ErrorCode::EmptyRange, "far must exceed near");
    require(count >= 2, ErrorCode::InvalidArgument, "need at least two depth candidates");
    DepthHypothesisGrid g{CandidateMode::absolute, Tensor({count}), near, far, far - near};
    const double last = static_cast<double>(count - 1);
    for (std::size_t k = 0; k < count; ++k) {
        const double t = static_cast<double>(k) / last;
        double d = 0.0;
        if (spacing == DepthSpacing::linear) {
            d = near + t * (far - near);
        } else {
            d = 1.0 / (1.0 / near + t * (1.0 / far - 1.0 / near));
        }
        g.values[k] = static_cast<float>(d);
    }
    g.values[0] = static_cast<float>(near);
    g.values[count - 1] = static_cast<float>(far);
    return g;
}

/// Offsets linearly spaced over [-width/2, +width/2], exactly antisymmetric.
inline DepthHypothesisGrid residual_candidates(double range_width, std::size_t count, double near, double far) {
    require(range_width > 0.0, ErrorCode::EmptyRange, "residual range must be positive");
    require(count >= 2, ErrorCode::InvalidArgument, "need at least two depth candidates");
    DepthHypothesisGrid g{CandidateMode::residual, Tensor({count}), near, far, range_width};
    const double last = static_cast<double>(count - 1);
    for (std::size_t k = 0; k < count; ++k) {
        g.values[k] = static_cast<float>((static_cast<double>(k) - 0.5 * last) * range_width / last);
    }
    return g;
}

} // namespace idesplat
