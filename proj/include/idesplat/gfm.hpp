#pragma once

// Windowed multi-head attention whose key set shrinks layer by layer: each
// query keeps the top-k entries of its running attention map, and later layers
// only score keys it kept. Index sets are window-local token positions.

#include "idesplat/error.hpp"
#include "idesplat/json_io.hpp"
#include "idesplat/rng.hpp"
#include "idesplat/tensor.hpp"
#include "idesplat/tensor_io.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace idesplat {

struct GfmConfig {
    std::size_t channels = 252;
    std::size_t heads = 6;
    std::size_t window = 16;
    std::vector<std::size_t> retain_schedule{256, 256, 128, 128, 64, 64};
    bool shift = true;
    bool residual = true;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GfmConfig, channels, heads, window, retain_schedule, shift, residual)

/// Row-vector convention: y = x * W, so every matrix is [C_in, C_out].
struct GfmLayerWeights {
    Tensor wq, wk, wv, wo; // [C, C]
    Tensor lepe;           // [C, 3, 3]
};

struct GfmWeights {
    GfmConfig config;
    std::vector<GfmLayerWeights> layers;
};

inline void validate(const GfmConfig& cfg) {
    require(cfg.channels >= 1 && cfg.heads >= 1, ErrorCode::InvalidArgument, "channels and heads must be positive");
    require(cfg.channels % cfg.heads == 0, ErrorCode::Indivisible,
            std::to_string(cfg.channels) + " channels do not split into " + std::to_string(cfg.heads) + " heads");
    require(cfg.window >= 1, ErrorCode::InvalidArgument, "window must be positive");
    require(!cfg.shift || cfg.window % 2 == 0, ErrorCode::Indivisible, "shifted windows need an even window size");
    require(!cfg.retain_schedule.empty(), ErrorCode::InvalidSchedule, "retain schedule is empty");
    const std::size_t tokens = cfg.window * cfg.window;
    for (std::size_t l = 0; l < cfg.retain_schedule.size(); ++l) {
        const std::size_t r = cfg.retain_schedule[l];
        require(r >= 1, ErrorCode::ZeroRetain, "retain count at layer " + std::to_string(l) + " is zero");
        require(r <= tokens, ErrorCode::ScheduleExceedsWindow,
                "retain " + std::to_string(r) + " exceeds the " + std::to_string(tokens) + " tokens of a window");
        require(l == 0 || r <= cfg.retain_schedule[l - 1], ErrorCode::InvalidSchedule,
                "retain schedule must be non-increasing");
    }
}

inline void validate(const GfmWeights& w) {
    validate(w.config);
    require(w.layers.size() == w.config.retain_schedule.size(), ErrorCode::InvalidSchedule,
            "one retain count per layer required");
    const std::size_t c = w.config.channels;
    for (const auto& layer : w.layers) {
        for (const Tensor* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) {
            require_shape(*m, {c, c}, "gfm projection");
        }
        require_shape(layer.lepe, {c, 3, 3}, "gfm lepe kernel");
    }
}

/// Projections drawn N(0, 1/C); LePE taps N(0, 1/9).
inline GfmWeights make_gfm_weights(const GfmConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Rng rng(seed);
    const std::size_t c = cfg.channels;
    const double s = 1.0 / std::sqrt(static_cast<double>(c));
    auto draw = [&](Shape shape, double scale) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) {
            v = static_cast<float>(scale * rng.normal());
        }
        return t;
    };
    GfmWeights w{cfg, {}};
    for (std::size_t l = 0; l < cfg.retain_schedule.size(); ++l) {
        GfmLayerWeights layer;
        layer.wq = draw({c, c}, s);
        layer.wk = draw({c, c}, s);
        layer.wv = draw({c, c}, s);
        layer.wo = draw({c, c}, s);
        layer.lepe = draw({c, 3, 3}, 1.0 / 3.0);
        w.layers.push_back(std::move(layer));
    }
    return w;
}

/// Directory of TNSR files plus manifest.json naming each matrix.
inline void save_gfm_weights(const GfmWeights& w, const std::filesystem::path& dir) {
    validate(w);
    std::filesystem::create_directories(dir);
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        nlohmann::json entry;
        const std::pair<const char*, const Tensor*> parts[] = {{"wq", &w.layers[l].wq},
                                                               {"wk", &w.layers[l].wk},
                                                               {"wv", &w.layers[l].wv},
                                                               {"wo", &w.layers[l].wo},
                                                               {"lepe", &w.layers[l].lepe}};
        for (const auto& [name, t] : parts) {
            const std::string file = "layer" + std::to_string(l) + "_" + name + ".tnsr";
            save_tensor(*t, dir / file);
            entry[name] = file;
        }
        layers.push_back(entry);
    }
    detail::write_json(dir / "manifest.json", {{"config", w.config}, {"layers", layers}});
}

inline GfmWeights load_gfm_weights(const std::filesystem::path& dir) {
    const nlohmann::json manifest = detail::read_json(dir / "manifest.json");
    GfmWeights w;
    try {
        w.config = manifest.at("config").get<GfmConfig>();
        for (const auto& entry : manifest.at("layers")) {
            GfmLayerWeights layer;
            layer.wq = load_tensor(dir / entry.at("wq").get<std::string>());
            layer.wk = load_tensor(dir / entry.at("wk").get<std::string>());
            layer.wv = load_tensor(dir / entry.at("wv").get<std::string>());
            layer.wo = load_tensor(dir / entry.at("wo").get<std::string>());
            layer.lepe = load_tensor(dir / entry.at("lepe").get<std::string>());
            w.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidArgument, "bad gfm manifest: " + std::string(e.what()));
    }
    validate(w);
    return w;
}

// ---------------------------------------------------------------------------
// window partition

/// Tiles of a cyclically shifted map. regions[w][t] labels which pre-shift band
/// a token came from; tokens with different labels must not attend to each other.
struct WindowSet {
    std::size_t height = 0, width = 0, channels = 0, window = 0, shift = 0;
    std::vector<Tensor> windows;             // each [window*window, C]
    std::vector<std::vector<int>> regions;   // each [window*window]
};

inline WindowSet window_partition(const Tensor& features, std::size_t window, std::size_t shift) {
    require_rank(features, 3, "gfm features");
    const std::size_t h = features.dim(0), w = features.dim(1), c = features.dim(2);
    require(window >= 1, ErrorCode::InvalidArgument, "window must be positive");
    require(h % window == 0 && w % window == 0, ErrorCode::Indivisible,
            shape_string(features.shape()) + " is not divisible by window " + std::to_string(window));
    require(shift == 0 || 2 * shift == window, ErrorCode::InvalidArgument, "shift must be 0 or window/2");
    auto band = [&](std::size_t i, std::size_t n) {
        if (shift == 0) {
            return 0;
        }
        return i < n - window ? 0 : (i < n - shift ? 1 : 2);
    };
    WindowSet out{h, w, c, window, shift, {}, {}};
    for (std::size_t wy = 0; wy < h / window; ++wy) {
        for (std::size_t wx = 0; wx < w / window; ++wx) {
            Tensor tile({window * window, c});
            std::vector<int> region(window * window);
            for (std::size_t ty = 0; ty < window; ++ty) {
                for (std::size_t tx = 0; tx < window; ++tx) {
                    const std::size_t y = wy * window + ty, x = wx * window + tx;
                    const std::size_t sy = (y + shift) % h, sx = (x + shift) % w;
                    const std::size_t t = ty * window + tx;
                    std::copy_n(features.raw() + features.offset(sy, sx, 0), c, tile.raw() + t * c);
                    region[t] = 3 * band(y, h) + band(x, w);
                }
            }
            out.windows.push_back(std::move(tile));
            out.regions.push_back(std::move(region));
        }
    }
    return out;
}

inline Tensor window_merge(const WindowSet& set) {
    const std::size_t win = set.window;
    require(win >= 1 && set.height % win == 0 && set.width % win == 0, ErrorCode::Indivisible, "bad window set");
    require(set.windows.size() == (set.height / win) * (set.width / win), ErrorCode::ShapeMismatch,
            "window count does not match the map size");
    Tensor out({set.height, set.width, set.channels});
    std::size_t index = 0;
    for (std::size_t wy = 0; wy < set.height / win; ++wy) {
        for (std::size_t wx = 0; wx < set.width / win; ++wx, ++index) {
            const Tensor& tile = set.windows[index];
            require_shape(tile, {win * win, set.channels}, "window tile");
            for (std::size_t ty = 0; ty < win; ++ty) {
                for (std::size_t tx = 0; tx < win; ++tx) {
                    const std::size_t sy = (wy * win + ty + set.shift) % set.height;
                    const std::size_t sx = (wx * win + tx + set.shift) % set.width;
                    std::copy_n(tile.raw() + (ty * win + tx) * set.channels, set.channels,
                                out.raw() + out.offset(sy, sx, 0));
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// sparse attention pieces

/// Retained key positions per (head, query), `count` per row, ascending.
struct SparseIndexSet {
    std::size_t heads = 0, queries = 0, count = 0;
    std::vector<std::int32_t> indices;

    static SparseIndexSet full(std::size_t heads, std::size_t queries, std::size_t keys) {
        SparseIndexSet s{heads, queries, keys, std::vector<std::int32_t>(heads * queries * keys)};
        for (std::size_t r = 0; r < heads * queries; ++r) {
            std::iota(s.indices.begin() + static_cast<std::ptrdiff_t>(r * keys),
                      s.indices.begin() + static_cast<std::ptrdiff_t>((r + 1) * keys), 0);
        }
        return s;
    }
    std::span<std::int32_t> row(std::size_t h, std::size_t q) {
        return {indices.data() + (h * queries + q) * count, count};
    }
    std::span<const std::int32_t> row(std::size_t h, std::size_t q) const {
        return {indices.data() + (h * queries + q) * count, count};
    }
};

/// Weights aligned entry for entry with a SparseIndexSet. Scores use the same layout.
struct SparseAttentionMap {
    std::size_t heads = 0, queries = 0, count = 0;
    std::vector<float> weights;

    static SparseAttentionMap uniform(const SparseIndexSet& s) {
        return {s.heads, s.queries, s.count, std::vector<float>(s.indices.size(), 1.0f / static_cast<float>(s.count))};
    }
    std::span<float> row(std::size_t h, std::size_t q) { return {weights.data() + (h * queries + q) * count, count}; }
    std::span<const float> row(std::size_t h, std::size_t q) const {
        return {weights.data() + (h * queries + q) * count, count};
    }
};

using SparseScores = SparseAttentionMap;

/// S(q, j) = <Q_q, K_j> * scale per head, only for j in I(q). Keys in a
/// different region than the query score -inf.
inline SparseScores sparse_similarity(const Tensor& q, const Tensor& k, const SparseIndexSet& index, float scale,
                                      std::span<const int> regions = {}) {
    require_rank(q, 2, "queries");
    require_rank(k, 2, "keys");
    require(q.dim(1) == k.dim(1), ErrorCode::ChannelMismatch, "query and key channels differ");
    require(index.heads >= 1 && q.dim(1) % index.heads == 0, ErrorCode::Indivisible, "channels do not split into heads");
    require(index.queries == q.dim(0), ErrorCode::ShapeMismatch, "index set does not match the query count");
    require(regions.empty() || (regions.size() == q.dim(0) && regions.size() == k.dim(0)), ErrorCode::ShapeMismatch,
            "region labels must cover every token");
    const std::size_t keys = k.dim(0), c = q.dim(1), d = c / index.heads;
    for (const auto j : index.indices) {
        require(j >= 0 && static_cast<std::size_t>(j) < keys, ErrorCode::IndexOutOfWindow,
                "key index " + std::to_string(j) + " outside a window of " + std::to_string(keys));
    }
    SparseScores s{index.heads, index.queries, index.count, std::vector<float>(index.indices.size())};
    for (std::size_t h = 0; h < index.heads; ++h) {
        for (std::size_t i = 0; i < index.queries; ++i) {
            const float* qi = q.raw() + i * c + h * d;
            const auto idx = index.row(h, i);
            auto out = s.row(h, i);
            for (std::size_t e = 0; e < index.count; ++e) {
                const auto j = static_cast<std::size_t>(idx[e]);
                if (!regions.empty() && regions[i] != regions[j]) {
                    out[e] = -std::numeric_limits<float>::infinity();
                    continue;
                }
                const float* kj = k.raw() + j * c + h * d;
                float acc = 0.0f;
                for (std::size_t ch = 0; ch < d; ++ch) {
                    acc += qi[ch] * kj[ch];
                }
                out[e] = acc * scale;
            }
        }
    }
    return s;
}

namespace detail {

/// Norm(A_prev * softmax(S)) for one row, softmax over finite scores only.
/// Falls back to softmax(S) when the product vanishes, then to Norm(A_prev),
/// then to uniform.
inline void focused_row(std::span<const float> prev, std::span<const float> scores, std::vector<double>& tmp,
                        std::vector<double>& soft) {
    const std::size_t n = prev.size();
    tmp.assign(n, 0.0);
    soft.assign(n, 0.0);
    double peak = -std::numeric_limits<double>::infinity();
    for (const float s : scores) {
        if (std::isfinite(s)) {
            peak = std::max(peak, static_cast<double>(s));
        }
    }
    double soft_sum = 0.0;
    if (std::isfinite(peak)) {
        for (std::size_t e = 0; e < n; ++e) {
            if (std::isfinite(scores[e])) {
                soft[e] = std::exp(static_cast<double>(scores[e]) - peak);
                soft_sum += soft[e];
            }
        }
    }
    double sum = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
        tmp[e] = soft_sum > 0.0 ? static_cast<double>(prev[e]) * soft[e] / soft_sum : 0.0;
        sum += tmp[e];
    }
    if (!(sum > 0.0)) {
        if (soft_sum > 0.0) {
            tmp = soft;
            sum = soft_sum;
        } else {
            sum = 0.0;
            for (std::size_t e = 0; e < n; ++e) {
                tmp[e] = std::max(0.0, static_cast<double>(prev[e]));
                sum += tmp[e];
            }
            if (!(sum > 0.0)) {
                std::fill(tmp.begin(), tmp.end(), 1.0);
                sum = static_cast<double>(n);
            }
        }
    }
    for (auto& v : tmp) {
        v /= sum;
    }
}

} // namespace detail

struct FocusedResult {
    SparseAttentionMap attention;
    SparseIndexSet index;
};

/// Keeps the `retain` largest entries of Norm(A_prev * softmax(S)) per row
/// (ties to the smaller key index), renormalized, indices ascending.
inline FocusedResult focused_attention(const SparseAttentionMap& prev, const SparseScores& scores,
                                       const SparseIndexSet& index, std::size_t retain) {
    require(retain >= 1, ErrorCode::ZeroRetain, "retain count must be positive");
    require(prev.heads == index.heads && prev.queries == index.queries && prev.count == index.count &&
                scores.heads == index.heads && scores.queries == index.queries && scores.count == index.count &&
                prev.weights.size() == index.indices.size() && scores.weights.size() == index.indices.size(),
            ErrorCode::ShapeMismatch, "attention, scores and index set are misaligned");
    require(retain <= index.count, ErrorCode::RetainExceedsSupport,
            "retain " + std::to_string(retain) + " exceeds the support of " + std::to_string(index.count));
    FocusedResult out{{index.heads, index.queries, retain, std::vector<float>(index.heads * index.queries * retain)},
                      {index.heads, index.queries, retain, std::vector<std::int32_t>(index.heads * index.queries * retain)}};
    std::vector<double> tmp, soft;
    std::vector<std::size_t> order(index.count);
    for (std::size_t h = 0; h < index.heads; ++h) {
        for (std::size_t q = 0; q < index.queries; ++q) {
            detail::focused_row(prev.row(h, q), scores.row(h, q), tmp, soft);
            const auto idx = index.row(h, q);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(retain), order.end(),
                              [&](std::size_t a, std::size_t b) {
                                  return tmp[a] != tmp[b] ? tmp[a] > tmp[b] : idx[a] < idx[b];
                              });
            std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(retain),
                      [&](std::size_t a, std::size_t b) { return idx[a] < idx[b]; });
            double kept = 0.0;
            for (std::size_t e = 0; e < retain; ++e) {
                kept += tmp[order[e]];
            }
            auto w = out.attention.row(h, q);
            auto i = out.index.row(h, q);
            for (std::size_t e = 0; e < retain; ++e) {
                i[e] = idx[order[e]];
                w[e] = kept > 0.0 ? static_cast<float>(tmp[order[e]] / kept) : 1.0f / static_cast<float>(retain);
            }
        }
    }
    return out;
}

namespace detail {

/// Per-channel 3x3 convolution of a window's values, zero outside the window.
inline Tensor window_lepe(const Tensor& v, std::size_t window, const Tensor& kernel) {
    const std::size_t c = v.dim(1);
    Tensor out({window * window, c});
    for (std::size_t y = 0; y < window; ++y) {
        for (std::size_t x = 0; x < window; ++x) {
            float* o = out.raw() + (y * window + x) * c;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
                    const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(window) ||
                        xx >= static_cast<std::ptrdiff_t>(window)) {
                        continue;
                    }
                    const float* src = v.raw() + (static_cast<std::size_t>(yy) * window + static_cast<std::size_t>(xx)) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        o[ch] += kernel.at(ch, static_cast<std::size_t>(dy + 1), static_cast<std::size_t>(dx + 1)) * src[ch];
                    }
                }
            }
        }
    }
    return out;
}

/// x [N, C_in] * m [C_in, C_out], accumulated in double.
inline Tensor matmul(const Tensor& x, const Tensor& m) {
    require(x.dim(1) == m.dim(0), ErrorCode::ShapeMismatch, "matmul inner dimensions differ");
    using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto n = static_cast<Eigen::Index>(x.dim(0));
    const auto ci = static_cast<Eigen::Index>(m.dim(0));
    const auto co = static_cast<Eigen::Index>(m.dim(1));
    Tensor out({x.dim(0), m.dim(1)});
    Eigen::Map<RowMajor>(out.raw(), n, co) =
        (Eigen::Map<const RowMajor>(x.raw(), n, ci).cast<double>() * Eigen::Map<const RowMajor>(m.raw(), ci, co).cast<double>())
            .cast<float>();
    return out;
}

} // namespace detail

/// O_q = (concat_h sum_{j in I(q)} A(q,j) V_j + LePE(V)_q) * W_o.
inline Tensor reweight(const SparseAttentionMap& attention, const Tensor& v, const SparseIndexSet& index,
                       std::size_t window, const Tensor& lepe, const Tensor& wo) {
    require_rank(v, 2, "values");
    const std::size_t n = v.dim(0), c = v.dim(1);
    require(n == window * window, ErrorCode::ShapeMismatch, "values do not fill the window");
    require(attention.heads == index.heads && attention.queries == index.queries && attention.count == index.count &&
                attention.weights.size() == index.indices.size() && index.queries == n,
            ErrorCode::ShapeMismatch, "attention and index set are misaligned");
    require(index.heads >= 1 && c % index.heads == 0, ErrorCode::Indivisible, "channels do not split into heads");
    require_shape(lepe, {c, 3, 3}, "lepe kernel");
    require_shape(wo, {c, c}, "output projection");
    const std::size_t d = c / index.heads;
    Tensor mixed = detail::window_lepe(v, window, lepe);
    std::vector<double> acc(d);
    for (std::size_t h = 0; h < index.heads; ++h) {
        for (std::size_t q = 0; q < n; ++q) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const auto idx = index.row(h, q);
            const auto w = attention.row(h, q);
            for (std::size_t e = 0; e < index.count; ++e) {
                require(idx[e] >= 0 && static_cast<std::size_t>(idx[e]) < n, ErrorCode::IndexOutOfWindow,
                        "key index outside the window");
                const float* vj = v.raw() + static_cast<std::size_t>(idx[e]) * c + h * d;
                for (std::size_t ch = 0; ch < d; ++ch) {
                    acc[ch] += static_cast<double>(w[e]) * vj[ch];
                }
            }
            float* o = mixed.raw() + q * c + h * d;
            for (std::size_t ch = 0; ch < d; ++ch) {
                o[ch] += static_cast<float>(acc[ch]);
            }
        }
    }
    return detail::matmul(mixed, wo);
}

// ---------------------------------------------------------------------------
// full module

struct GfmLayerTrace {
    std::size_t shift = 0;
    std::size_t retain = 0;
    std::vector<SparseIndexSet> index;            // per window
    std::vector<SparseAttentionMap> attention;    // per window
};

struct GfmTrace {
    std::vector<GfmLayerTrace> layers;
};

inline Tensor run_gfm(const Tensor& features, const GfmWeights& weights, GfmTrace* trace = nullptr) {
    validate(weights);
    const GfmConfig& cfg = weights.config;
    require_rank(features, 3, "gfm features");
    require(features.dim(2) == cfg.channels, ErrorCode::ChannelMismatch,
            "features have " + std::to_string(features.dim(2)) + " channels, weights expect " +
                std::to_string(cfg.channels));
    require(features.dim(0) % cfg.window == 0 && features.dim(1) % cfg.window == 0, ErrorCode::Indivisible,
            shape_string(features.shape()) + " is not divisible by window " + std::to_string(cfg.window));
    validate_finite(features, "gfm features");

    const std::size_t tokens = cfg.window * cfg.window;
    const std::size_t windows = (features.dim(0) / cfg.window) * (features.dim(1) / cfg.window);
    const float scale = 1.0f / std::sqrt(static_cast<float>(cfg.channels / cfg.heads));
    std::vector<SparseIndexSet> index(windows, SparseIndexSet::full(cfg.heads, tokens, tokens));
    std::vector<SparseAttentionMap> attention;
    for (const auto& s : index) {
        attention.push_back(SparseAttentionMap::uniform(s));
    }

    Tensor x = features;
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
        const auto& layer = weights.layers[l];
        const std::size_t shift = cfg.shift && l % 2 == 1 ? cfg.window / 2 : 0;
        WindowSet set = window_partition(x, cfg.window, shift);
        for (std::size_t w = 0; w < windows; ++w) {
            const Tensor& tile = set.windows[w];
            const Tensor q = detail::matmul(tile, layer.wq);
            const Tensor k = detail::matmul(tile, layer.wk);
            const Tensor v = detail::matmul(tile, layer.wv);
            const std::span<const int> regions = shift ? std::span<const int>(set.regions[w]) : std::span<const int>();
            const SparseScores s = sparse_similarity(q, k, index[w], scale, regions);
            FocusedResult focused = focused_attention(attention[w], s, index[w], cfg.retain_schedule[l]);
            Tensor o = reweight(focused.attention, v, focused.index, cfg.window, layer.lepe, layer.wo);
            if (cfg.residual) {
                for (std::size_t i = 0; i < o.size(); ++i) {
                    o[i] += tile[i];
                }
            }
            set.windows[w] = std::move(o);
            index[w] = std::move(focused.index);
            attention[w] = std::move(focused.attention);
        }
        x = window_merge(set);
        if (trace) {
            trace->layers.push_back({shift, cfg.retain_schedule[l], index, attention});
        }
    }
    return x;
}

} // namespace idesplat
