#pragma once

// Dense counterpart of run_gfm: full N x N attention matrices per window and
// head, with a boolean keep-mask standing in for the index sets. Slow and
// memory hungry by design; used to check the sparse path.

#include "idesplat/gfm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace idesplat::reference {

namespace detail {

struct DenseWindowState {
    std::vector<double> attention; // [heads, N, N]
    std::vector<char> keep;        // [heads, N, N]
};

inline std::vector<double> project(const std::vector<double>& x, std::size_t n, const Tensor& m) {
    const std::size_t c = m.dim(0);
    std::vector<double> out(n * c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                acc += x[i * c + k] * m.at(k, j);
            }
            out[i * c + j] = acc;
        }
    }
    return out;
}

} // namespace detail

inline Tensor dense_gfm(const Tensor& features, const GfmWeights& weights) {
    validate(weights);
    const GfmConfig& cfg = weights.config;
    const std::size_t height = features.dim(0), width = features.dim(1), c = features.dim(2);
    const std::size_t win = cfg.window, n = win * win, heads = cfg.heads, d = c / heads;
    const std::size_t wrows = height / win, wcols = width / win;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    std::vector<detail::DenseWindowState> state(wrows * wcols);
    for (auto& s : state) {
        s.attention.assign(heads * n * n, 1.0 / static_cast<double>(n));
        s.keep.assign(heads * n * n, 1);
    }

    Tensor x = features;
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
        const auto& layer = weights.layers[l];
        const std::size_t shift = cfg.shift && l % 2 == 1 ? win / 2 : 0;
        const std::size_t retain = cfg.retain_schedule[l];
        Tensor next = x;
        for (std::size_t wy = 0; wy < wrows; ++wy) {
            for (std::size_t wx = 0; wx < wcols; ++wx) {
                auto& st = state[wy * wcols + wx];
                // gather tokens; a token whose source wrapped around the border belongs to another region
                std::vector<double> tile(n * c);
                std::vector<std::size_t> src_y(n), src_x(n);
                std::vector<int> wrapped(n);
                for (std::size_t t = 0; t < n; ++t) {
                    const std::size_t y = wy * win + t / win + shift;
                    const std::size_t xx = wx * win + t % win + shift;
                    src_y[t] = y % height;
                    src_x[t] = xx % width;
                    wrapped[t] = 2 * (y >= height) + (xx >= width);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        tile[t * c + ch] = x.at(src_y[t], src_x[t], ch);
                    }
                }
                const auto q = detail::project(tile, n, layer.wq);
                const auto k = detail::project(tile, n, layer.wk);
                const auto v = detail::project(tile, n, layer.wv);

                std::vector<double> mixed(n * c, 0.0);
                for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < n; ++i) {
                        double* a = st.attention.data() + (h * n + i) * n;
                        char* keep = st.keep.data() + (h * n + i) * n;
                        std::vector<double> s(n, -std::numeric_limits<double>::infinity());
                        double peak = -std::numeric_limits<double>::infinity();
                        for (std::size_t j = 0; j < n; ++j) {
                            if (!keep[j] || wrapped[i] != wrapped[j]) {
                                continue;
                            }
                            double dot = 0.0;
                            for (std::size_t ch = 0; ch < d; ++ch) {
                                dot += q[i * c + h * d + ch] * k[j * c + h * d + ch];
                            }
                            s[j] = dot * scale;
                            peak = std::max(peak, s[j]);
                        }
                        std::vector<double> soft(n, 0.0), tmp(n, 0.0);
                        double soft_sum = 0.0, sum = 0.0;
                        for (std::size_t j = 0; j < n; ++j) {
                            if (std::isfinite(s[j])) {
                                soft[j] = std::exp(s[j] - peak);
                                soft_sum += soft[j];
                            }
                        }
                        for (std::size_t j = 0; j < n; ++j) {
                            if (keep[j] && soft_sum > 0.0) {
                                tmp[j] = a[j] * soft[j] / soft_sum;
                                sum += tmp[j];
                            }
                        }
                        if (!(sum > 0.0)) {
                            sum = 0.0;
                            for (std::size_t j = 0; j < n; ++j) {
                                tmp[j] = keep[j] ? (soft_sum > 0.0 ? soft[j] : a[j]) : 0.0;
                                sum += tmp[j];
                            }
                            if (!(sum > 0.0)) {
                                for (std::size_t j = 0; j < n; ++j) {
                                    tmp[j] = keep[j] ? 1.0 : 0.0;
                                    sum += tmp[j];
                                }
                            }
                        }
                        // keep the `retain` largest kept entries, earlier column wins ties
                        std::vector<std::size_t> cols;
                        for (std::size_t j = 0; j < n; ++j) {
                            if (keep[j]) {
                                tmp[j] /= sum;
                                cols.push_back(j);
                            }
                        }
                        std::stable_sort(cols.begin(), cols.end(), [&](std::size_t p, std::size_t r) { return tmp[p] > tmp[r]; });
                        std::fill(keep, keep + n, 0);
                        double kept = 0.0;
                        for (std::size_t e = 0; e < retain && e < cols.size(); ++e) {
                            keep[cols[e]] = 1;
                            kept += tmp[cols[e]];
                        }
                        for (std::size_t j = 0; j < n; ++j) {
                            a[j] = keep[j] ? (kept > 0.0 ? static_cast<double>(static_cast<float>(tmp[j] / kept))
                                                         : 1.0 / static_cast<double>(retain))
                                           : 0.0;
                        }
                        for (std::size_t j = 0; j < n; ++j) {
                            if (!keep[j]) {
                                continue;
                            }
                            for (std::size_t ch = 0; ch < d; ++ch) {
                                mixed[i * c + h * d + ch] += a[j] * v[j * c + h * d + ch];
                            }
                        }
                    }
                }
                // positional term: 3x3 per-channel filter over the window grid
                for (std::size_t t = 0; t < n; ++t) {
                    const std::ptrdiff_t ty = static_cast<std::ptrdiff_t>(t / win), tx = static_cast<std::ptrdiff_t>(t % win);
                    for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
                        for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t yy = ty + ky - 1, xx = tx + kx - 1;
                            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(win) || xx >= static_cast<std::ptrdiff_t>(win)) {
                                continue;
                            }
                            const std::size_t u = static_cast<std::size_t>(yy) * win + static_cast<std::size_t>(xx);
                            for (std::size_t ch = 0; ch < c; ++ch) {
                                mixed[t * c + ch] += layer.lepe.at(ch, static_cast<std::size_t>(ky), static_cast<std::size_t>(kx)) * v[u * c + ch];
                            }
                        }
                    }
                }
                const auto out = detail::project(mixed, n, layer.wo);
                for (std::size_t t = 0; t < n; ++t) {
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        next.at(src_y[t], src_x[t], ch) =
                            static_cast<float>(out[t * c + ch] + (cfg.residual ? tile[t * c + ch] : 0.0));
                    }
                }
            }
        }
        x = std::move(next);
    }
    return x;
}

/// Plain single-layer windowed multi-head attention (softmax(QK^T/sqrt(d)) V,
/// plus the same positional filter and projection), no sparsification.
inline Tensor windowed_attention(const Tensor& features, const GfmLayerWeights& layer, std::size_t heads,
                                 std::size_t window, bool residual) {
    const std::size_t height = features.dim(0), width = features.dim(1), c = features.dim(2);
    const std::size_t n = window * window, d = c / heads;
    Tensor out = features;
    for (std::size_t wy = 0; wy < height / window; ++wy) {
        for (std::size_t wx = 0; wx < width / window; ++wx) {
            std::vector<double> tile(n * c);
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    tile[t * c + ch] = features.at(wy * window + t / window, wx * window + t % window, ch);
                }
            }
            const auto q = detail::project(tile, n, layer.wq);
            const auto k = detail::project(tile, n, layer.wk);
            const auto v = detail::project(tile, n, layer.wv);
            std::vector<double> mixed(n * c, 0.0);
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < n; ++i) {
                    std::vector<double> s(n);
                    double peak = -std::numeric_limits<double>::infinity(), sum = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        double dot = 0.0;
                        for (std::size_t ch = 0; ch < d; ++ch) {
                            dot += q[i * c + h * d + ch] * k[j * c + h * d + ch];
                        }
                        s[j] = dot / std::sqrt(static_cast<double>(d));
                        peak = std::max(peak, s[j]);
                    }
                    for (auto& e : s) {
                        e = std::exp(e - peak);
                        sum += e;
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        for (std::size_t ch = 0; ch < d; ++ch) {
                            mixed[i * c + h * d + ch] += s[j] / sum * v[j * c + h * d + ch];
                        }
                    }
                }
            }
            for (std::size_t t = 0; t < n; ++t) {
                const std::ptrdiff_t ty = static_cast<std::ptrdiff_t>(t / window), tx = static_cast<std::ptrdiff_t>(t % window);
                for (std::ptrdiff_t ky = -1; ky <= 1; ++ky) {
                    for (std::ptrdiff_t kx = -1; kx <= 1; ++kx) {
                        const std::ptrdiff_t yy = ty + ky, xx = tx + kx;
                        if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(window) || xx >= static_cast<std::ptrdiff_t>(window)) {
                            continue;
                        }
                        const std::size_t u = static_cast<std::size_t>(yy) * window + static_cast<std::size_t>(xx);
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            mixed[t * c + ch] += layer.lepe.at(ch, static_cast<std::size_t>(ky + 1), static_cast<std::size_t>(kx + 1)) * v[u * c + ch];
                        }
                    }
                }
            }
            const auto o = detail::project(mixed, n, layer.wo);
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    out.at(wy * window + t / window, wx * window + t % window, ch) =
                        static_cast<float>(o[t * c + ch] + (residual ? tile[t * c + ch] : 0.0));
                }
            }
        }
    }
    return out;
}

} // namespace idesplat::reference
