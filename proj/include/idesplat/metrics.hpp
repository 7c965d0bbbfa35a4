#pragma once

#include "idesplat/error.hpp"
#include "idesplat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace idesplat {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
            "cannot compare " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    require(!a.empty(), ErrorCode::InvalidArgument, "empty images");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

/// 10 log10(1 / MSE) for images in [0, 1], capped at 99 dB.
inline double psnr(const Tensor& a, const Tensor& b) {
    const double m = mse(a, b);
    return m < 1e-10 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

/// Mean SSIM over channels, 11x11 Gaussian window (sigma 1.5), valid region only.
inline double ssim(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
            "cannot compare " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    require(a.ndim() == 3, ErrorCode::ShapeMismatch, "ssim expects [H,W,C] images");
    const std::size_t h = a.dim(0), w = a.dim(1), ch = a.dim(2);
    constexpr int radius = 5;
    constexpr double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    require(h > 2 * radius && w > 2 * radius, ErrorCode::InvalidArgument, "images smaller than the 11x11 window");
    double kernel[2 * radius + 1];
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (double& k : kernel) {
        k /= ksum;
    }
    const std::size_t oh = h - 2 * radius, ow = w - 2 * radius;
    // separable blur of one plane, valid region
    auto blur = [&](const std::vector<double>& plane) {
        std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k <= 2 * radius; ++k) {
                    s += kernel[k] * plane[y * w + x + static_cast<std::size_t>(k)];
                }
                rows[y * ow + x] = s;
            }
        }
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k <= 2 * radius; ++k) {
                    s += kernel[k] * rows[(y + static_cast<std::size_t>(k)) * ow + x];
                }
                out[y * ow + x] = s;
            }
        }
        return out;
    };
    double total = 0.0;
    for (std::size_t c = 0; c < ch; ++c) {
        std::vector<double> pa(h * w), pb(h * w), aa(h * w), bb(h * w), ab(h * w);
        for (std::size_t p = 0; p < h * w; ++p) {
            pa[p] = a[p * ch + c];
            pb[p] = b[p * ch + c];
            aa[p] = pa[p] * pa[p];
            bb[p] = pb[p] * pb[p];
            ab[p] = pa[p] * pb[p];
        }
        const auto ma = blur(pa), mb = blur(pb), saa = blur(aa), sbb = blur(bb), sab = blur(ab);
        double acc = 0.0;
        for (std::size_t p = 0; p < oh * ow; ++p) {
            const double va = saa[p] - ma[p] * ma[p];
            const double vb = sbb[p] - mb[p] * mb[p];
            const double cov = sab[p] - ma[p] * mb[p];
            acc += ((2 * ma[p] * mb[p] + c1) * (2 * cov + c2)) / ((ma[p] * ma[p] + mb[p] * mb[p] + c1) * (va + vb + c2));
        }
        total += acc / static_cast<double>(oh * ow);
    }
    return total / static_cast<double>(ch);
}

} // namespace idesplat
