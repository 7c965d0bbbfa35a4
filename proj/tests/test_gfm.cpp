#include "idesplat/gfm.hpp"
#include "idesplat/reference/dense_attention.hpp"

#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace idesplat;
using testutil::code_of;

namespace {

GfmConfig small_config() {
    GfmConfig cfg;
    cfg.channels = 12;
    cfg.heads = 3;
    cfg.window = 4;
    cfg.retain_schedule = {16, 16, 8, 8, 4, 4};
    return cfg;
}

Tensor random_features(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t c) {
    Rng rng(seed);
    return random_tensor(rng, {h, w, c}, -1.0f, 1.0f);
}

float peak_relative(const Tensor& a, const Tensor& b) {
    float peak = 0.0f;
    for (float v : b.data()) {
        peak = std::max(peak, std::abs(v));
    }
    return max_abs_diff(a, b) / std::max(peak, 1e-12f);
}

Tensor identity(std::size_t c) {
    Tensor m({c, c});
    for (std::size_t i = 0; i < c; ++i) {
        m.at(i, i) = 1.0f;
    }
    return m;
}

SparseAttentionMap one_row(std::vector<float> w) {
    return {1, 1, w.size(), std::move(w)};
}

} // namespace

TEST(WindowPartition, CountsAndRoundTrip) {
    const Tensor f = random_features(1, 32, 32, 3);
    const WindowSet set = window_partition(f, 16, 0);
    ASSERT_EQ(set.windows.size(), 4u);
    EXPECT_EQ(set.windows[0].shape(), (Shape{256, 3}));
    EXPECT_EQ(set.windows[3].at(0, 1), f.at(16, 16, 1));
    EXPECT_EQ(set.windows[1].at(17, 2), f.at(1, 17, 2));
    EXPECT_EQ(window_merge(set), f);
    for (const auto& r : set.regions) {
        EXPECT_TRUE(std::all_of(r.begin(), r.end(), [](int v) { return v == 0; }));
    }
}

TEST(WindowPartition, ShiftedRoundTripAndRegions) {
    const Tensor f = random_features(2, 32, 32, 2);
    const WindowSet set = window_partition(f, 16, 8);
    EXPECT_EQ(set.windows[0].at(0, 0), f.at(8, 8, 0));
    EXPECT_EQ(window_merge(set), f);
    const auto& first = set.regions[0];
    EXPECT_TRUE(std::all_of(first.begin(), first.end(), [](int v) { return v == 0; }));
    const auto& last = set.regions[3];
    EXPECT_EQ(std::set<int>(last.begin(), last.end()).size(), 4u);
    EXPECT_NE(last[0], last[8]);
    EXPECT_EQ(last[0], last[7]);
}

TEST(WindowPartition, Errors) {
    const Tensor f = random_features(3, 30, 30, 2);
    EXPECT_EQ(code_of([&] { window_partition(f, 16, 0); }), ErrorCode::Indivisible);
    const Tensor g = random_features(3, 32, 32, 2);
    EXPECT_EQ(code_of([&] { window_partition(g, 16, 4); }), ErrorCode::InvalidArgument);
    EXPECT_EQ(code_of([&] { window_partition(Tensor({32, 32}), 16, 0); }), ErrorCode::ShapeMismatch);
}

TEST(SparseSimilarity, FullIndexMatchesDenseProduct) {
    Rng rng(4);
    const std::size_t n = 9, c = 6, heads = 2, d = 3;
    const Tensor q = random_tensor(rng, {n, c}, -1.0f, 1.0f);
    const Tensor k = random_tensor(rng, {n, c}, -1.0f, 1.0f);
    const float scale = 0.5f;
    const SparseScores s = sparse_similarity(q, k, SparseIndexSet::full(heads, n, n), scale);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t ch = 0; ch < d; ++ch) {
                    dot += static_cast<double>(q.at(i, h * d + ch)) * k.at(j, h * d + ch);
                }
                EXPECT_NEAR(s.row(h, i)[j], dot * scale, 1e-6);
            }
        }
    }
}

TEST(SparseSimilarity, HandValuesAndZeroQuery) {
    const Tensor q({2, 2}, {1.0f, 0.0f, 0.0f, 0.0f});
    const Tensor k({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    const SparseScores s = sparse_similarity(q, k, SparseIndexSet::full(1, 2, 2), 1.0f);
    EXPECT_EQ(s.row(0, 0)[0], 1.0f);
    EXPECT_EQ(s.row(0, 0)[1], 0.0f);
    EXPECT_EQ(s.row(0, 1)[0], 0.0f);
    EXPECT_EQ(s.row(0, 1)[1], 0.0f);
}

TEST(SparseSimilarity, SubsetAndRegions) {
    const Tensor q({2, 1}, {2.0f, 3.0f});
    const Tensor k({2, 1}, {5.0f, 7.0f});
    SparseIndexSet idx{1, 2, 1, {1, 0}};
    const std::vector<int> regions{0, 1};
    const SparseScores plain = sparse_similarity(q, k, idx, 1.0f);
    EXPECT_EQ(plain.weights, (std::vector<float>{14.0f, 15.0f}));
    const SparseScores masked = sparse_similarity(q, k, idx, 1.0f, regions);
    EXPECT_TRUE(std::isinf(masked.weights[0]) && masked.weights[0] < 0);
    EXPECT_TRUE(std::isinf(masked.weights[1]) && masked.weights[1] < 0);
    SparseIndexSet same{1, 2, 1, {0, 1}};
    EXPECT_EQ(sparse_similarity(q, k, same, 1.0f, regions).weights, (std::vector<float>{10.0f, 21.0f}));
}

TEST(SparseSimilarity, Errors) {
    const Tensor q({2, 2}), k({2, 2});
    SparseIndexSet bad{1, 2, 1, {0, 2}};
    EXPECT_EQ(code_of([&] { sparse_similarity(q, k, bad, 1.0f); }), ErrorCode::IndexOutOfWindow);
    EXPECT_EQ(code_of([&] { sparse_similarity(q, Tensor({2, 3}), SparseIndexSet::full(1, 2, 2), 1.0f); }),
              ErrorCode::ChannelMismatch);
    EXPECT_EQ(code_of([&] { sparse_similarity(q, k, SparseIndexSet::full(3, 2, 2), 1.0f); }), ErrorCode::Indivisible);
    EXPECT_EQ(code_of([&] { sparse_similarity(q, k, SparseIndexSet::full(1, 3, 2), 1.0f); }), ErrorCode::ShapeMismatch);
}

TEST(FocusedAttention, TiesKeepSmallestIndices) {
    const SparseIndexSet idx{1, 1, 6, {0, 2, 3, 5, 7, 9}};
    const auto prev = SparseAttentionMap::uniform(idx);
    const SparseScores s = one_row(std::vector<float>(6, 0.0f));
    const auto r = focused_attention(prev, s, idx, 3);
    EXPECT_EQ(r.index.indices, (std::vector<std::int32_t>{0, 2, 3}));
    for (float w : r.attention.weights) {
        EXPECT_NEAR(w, 1.0f / 3.0f, 1e-7);
    }
}

TEST(FocusedAttention, HandTopTwo) {
    const SparseIndexSet idx = SparseIndexSet::full(1, 1, 4);
    const auto prev = one_row({0.1f, 0.4f, 0.2f, 0.3f});
    const auto r = focused_attention(prev, one_row(std::vector<float>(4, 0.0f)), idx, 2);
    EXPECT_EQ(r.index.indices, (std::vector<std::int32_t>{1, 3}));
    EXPECT_NEAR(r.attention.weights[0], 0.4 / 0.7, 1e-6);
    EXPECT_NEAR(r.attention.weights[1], 0.3 / 0.7, 1e-6);
}

TEST(FocusedAttention, CombinesPreviousAndScores) {
    const SparseIndexSet idx = SparseIndexSet::full(1, 1, 2);
    const auto prev = one_row({0.5f, 0.5f});
    const auto r = focused_attention(prev, one_row({0.0f, std::log(3.0f)}), idx, 2);
    EXPECT_NEAR(r.attention.weights[0], 0.25, 1e-6);
    EXPECT_NEAR(r.attention.weights[1], 0.75, 1e-6);
    const auto r2 = focused_attention(r.attention, one_row({0.0f, 0.0f}), r.index, 2);
    EXPECT_NEAR(r2.attention.weights[1], 0.75, 1e-6);
}

TEST(FocusedAttention, FullRetainIsNoOpOnIndex) {
    Rng rng(5);
    const SparseIndexSet idx = SparseIndexSet::full(2, 3, 5);
    auto prev = SparseAttentionMap::uniform(idx);
    SparseScores s = prev;
    for (auto& v : s.weights) {
        v = static_cast<float>(rng.normal());
    }
    const auto r = focused_attention(prev, s, idx, 5);
    EXPECT_EQ(r.index.indices, idx.indices);
    for (std::size_t row = 0; row < 6; ++row) {
        double z = 0.0;
        for (std::size_t e = 0; e < 5; ++e) {
            z += std::exp(static_cast<double>(s.weights[row * 5 + e]));
        }
        for (std::size_t e = 0; e < 5; ++e) {
            EXPECT_NEAR(r.attention.weights[row * 5 + e], std::exp(static_cast<double>(s.weights[row * 5 + e])) / z,
                        1e-6);
        }
    }
}

TEST(FocusedAttention, FallbacksStayNormalized) {
    const SparseIndexSet idx = SparseIndexSet::full(1, 1, 3);
    const float ninf = -std::numeric_limits<float>::infinity();
    const auto onlyMasked = focused_attention(one_row({0.5f, 0.5f, 0.0f}), one_row({ninf, ninf, 0.0f}), idx, 1);
    EXPECT_EQ(onlyMasked.index.indices[0], 2);
    EXPECT_FLOAT_EQ(onlyMasked.attention.weights[0], 1.0f);
    const auto allMasked = focused_attention(one_row({0.2f, 0.8f, 0.0f}), one_row({ninf, ninf, ninf}), idx, 1);
    EXPECT_EQ(allMasked.index.indices[0], 1);
    const auto nothing = focused_attention(one_row({0.0f, 0.0f, 0.0f}), one_row({ninf, ninf, ninf}), idx, 2);
    EXPECT_EQ(nothing.index.indices, (std::vector<std::int32_t>{0, 1}));
    EXPECT_FLOAT_EQ(nothing.attention.weights[0], 0.5f);
}

TEST(FocusedAttention, Errors) {
    const SparseIndexSet idx = SparseIndexSet::full(1, 1, 3);
    const auto prev = SparseAttentionMap::uniform(idx);
    EXPECT_EQ(code_of([&] { focused_attention(prev, prev, idx, 0); }), ErrorCode::ZeroRetain);
    EXPECT_EQ(code_of([&] { focused_attention(prev, prev, idx, 4); }), ErrorCode::RetainExceedsSupport);
    EXPECT_EQ(code_of([&] { focused_attention(prev, one_row({0.0f}), idx, 1); }), ErrorCode::ShapeMismatch);
}

TEST(Reweight, HandMixture) {
    const std::size_t c = 2;
    Tensor v({4, c}, {1.0f, 0.0f, 0.0f, 1.0f, 5.0f, 5.0f, 7.0f, 7.0f});
    SparseIndexSet idx{1, 4, 2, std::vector<std::int32_t>(8)};
    SparseAttentionMap a{1, 4, 2, std::vector<float>(8)};
    for (std::size_t q = 0; q < 4; ++q) {
        idx.row(0, q)[0] = 0;
        idx.row(0, q)[1] = 1;
        a.row(0, q)[0] = 0.25f;
        a.row(0, q)[1] = 0.75f;
    }
    const Tensor o = reweight(a, v, idx, 2, Tensor({c, 3, 3}), identity(c));
    for (std::size_t q = 0; q < 4; ++q) {
        EXPECT_FLOAT_EQ(o.at(q, 0), 0.25f);
        EXPECT_FLOAT_EQ(o.at(q, 1), 0.75f);
    }
}

TEST(Reweight, OneHotAndUniformPerHead) {
    Rng rng(6);
    const std::size_t window = 3, n = 9, c = 4;
    const Tensor v = random_tensor(rng, {n, c}, -1.0f, 1.0f);
    SparseIndexSet idx{2, n, 1, std::vector<std::int32_t>(2 * n)};
    for (std::size_t q = 0; q < n; ++q) {
        idx.row(0, q)[0] = static_cast<std::int32_t>((q + 1) % n);
        idx.row(1, q)[0] = static_cast<std::int32_t>((q + 4) % n);
    }
    const Tensor o = reweight(SparseAttentionMap::uniform(idx), v, idx, window, Tensor({c, 3, 3}), identity(c));
    for (std::size_t q = 0; q < n; ++q) {
        EXPECT_EQ(o.at(q, 0), v.at((q + 1) % n, 0));
        EXPECT_EQ(o.at(q, 1), v.at((q + 1) % n, 1));
        EXPECT_EQ(o.at(q, 2), v.at((q + 4) % n, 2));
        EXPECT_EQ(o.at(q, 3), v.at((q + 4) % n, 3));
    }
    const SparseIndexSet full = SparseIndexSet::full(2, n, n);
    const Tensor mean = reweight(SparseAttentionMap::uniform(full), v, full, window, Tensor({c, 3, 3}), identity(c));
    for (std::size_t ch = 0; ch < c; ++ch) {
        double m = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            m += v.at(j, ch);
        }
        EXPECT_NEAR(mean.at(4, ch), m / n, 1e-6);
    }
}

TEST(Reweight, PositionalFilterIsZeroPaddedConvolution) {
    const std::size_t window = 3, c = 1;
    Tensor v({9, c});
    std::iota(v.data().begin(), v.data().end(), 1.0f);
    Tensor box({c, 3, 3});
    std::fill(box.data().begin(), box.data().end(), 1.0f);
    SparseIndexSet idx{1, 9, 1, std::vector<std::int32_t>(9, 0)};
    SparseAttentionMap zero{1, 9, 1, std::vector<float>(9, 0.0f)};
    const Tensor o = reweight(zero, v, idx, window, box, identity(c));
    EXPECT_FLOAT_EQ(o.at(4, 0), 45.0f);
    EXPECT_FLOAT_EQ(o.at(0, 0), 1.0f + 2.0f + 4.0f + 5.0f);
    EXPECT_FLOAT_EQ(o.at(1, 0), 1.0f + 2.0f + 3.0f + 4.0f + 5.0f + 6.0f);
}

TEST(Reweight, Errors) {
    const Tensor v({4, 2});
    const auto idx = SparseIndexSet::full(1, 4, 4);
    const auto a = SparseAttentionMap::uniform(idx);
    EXPECT_EQ(code_of([&] { reweight(a, v, idx, 3, Tensor({2, 3, 3}), identity(2)); }), ErrorCode::ShapeMismatch);
    EXPECT_EQ(code_of([&] { reweight(a, v, idx, 2, Tensor({2, 2, 2}), identity(2)); }), ErrorCode::ShapeMismatch);
    SparseIndexSet bad = idx;
    bad.indices[3] = 4;
    EXPECT_EQ(code_of([&] { reweight(a, v, bad, 2, Tensor({2, 3, 3}), identity(2)); }), ErrorCode::IndexOutOfWindow);
}

TEST(GfmConfig, Validation) {
    GfmConfig cfg;
    EXPECT_NO_THROW(validate(cfg));
    cfg.heads = 5;
    EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::Indivisible);
    cfg = GfmConfig{};
    cfg.retain_schedule = {256, 300};
    EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::ScheduleExceedsWindow);
    cfg.retain_schedule = {64, 128};
    EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::InvalidSchedule);
    cfg.retain_schedule = {64, 0};
    EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::ZeroRetain);
    cfg.retain_schedule = {};
    EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::InvalidSchedule);
    cfg = GfmConfig{};
    cfg.window = 5;
    cfg.retain_schedule = {25};
    EXPECT_EQ(code_of([&] { validate(cfg); }), ErrorCode::Indivisible);
    cfg.shift = false;
    EXPECT_NO_THROW(validate(cfg));
}

TEST(GfmConfig, DefaultsAndInputErrors) {
    const GfmConfig cfg;
    EXPECT_EQ(cfg.window, 16u);
    EXPECT_EQ(cfg.heads, 6u);
    EXPECT_EQ(cfg.channels, 252u);
    EXPECT_EQ(cfg.retain_schedule, (std::vector<std::size_t>{256, 256, 128, 128, 64, 64}));
    const GfmWeights w = make_gfm_weights(small_config(), 1);
    EXPECT_EQ(code_of([&] { run_gfm(random_features(1, 8, 8, 6), w); }), ErrorCode::ChannelMismatch);
    EXPECT_EQ(code_of([&] { run_gfm(random_features(1, 6, 8, 12), w); }), ErrorCode::Indivisible);
    GfmWeights short_w = w;
    short_w.layers.pop_back();
    EXPECT_EQ(code_of([&] { run_gfm(random_features(1, 8, 8, 12), short_w); }), ErrorCode::InvalidSchedule);
}

TEST(RunGfm, SingleFullLayerMatchesWindowedAttention) {
    GfmConfig cfg = small_config();
    cfg.retain_schedule = {16};
    cfg.shift = false;
    for (const bool residual : {true, false}) {
        cfg.residual = residual;
        const GfmWeights w = make_gfm_weights(cfg, 11);
        const Tensor f = random_features(12, 8, 8, cfg.channels);
        const Tensor sparse = run_gfm(f, w);
        const Tensor dense = reference::windowed_attention(f, w.layers[0], cfg.heads, cfg.window, residual);
        EXPECT_LT(max_abs_diff(sparse, dense), 1e-5f);
    }
}

TEST(RunGfm, MatchesDenseMaskedReference) {
    const GfmConfig cfg = small_config();
    const GfmWeights w = make_gfm_weights(cfg, 21);
    const Tensor f = random_features(22, 8, 8, cfg.channels);
    EXPECT_LT(peak_relative(run_gfm(f, w), reference::dense_gfm(f, w)), 1e-5f);

    GfmConfig full = cfg;
    full.retain_schedule = std::vector<std::size_t>(6, 16);
    const GfmWeights wf = make_gfm_weights(full, 23);
    EXPECT_LT(peak_relative(run_gfm(f, wf), reference::dense_gfm(f, wf)), 1e-5f);
}

TEST(RunGfm, ZeroInputWithResidualStaysZero) {
    const GfmWeights w = make_gfm_weights(small_config(), 3);
    const Tensor f({8, 8, 12});
    EXPECT_EQ(run_gfm(f, w), f);
}

TEST(RunGfm, Deterministic) {
    const GfmWeights w = make_gfm_weights(small_config(), 4);
    const Tensor f = random_features(5, 8, 8, 12);
    EXPECT_EQ(run_gfm(f, w), run_gfm(f, w));
    EXPECT_EQ(make_gfm_weights(small_config(), 4).layers[2].wk, w.layers[2].wk);
}

TEST(RunGfm, PermutationEquivariantWithoutPositionalFilter) {
    GfmConfig cfg = small_config();
    cfg.retain_schedule = {16};
    cfg.shift = false;
    GfmWeights w = make_gfm_weights(cfg, 7);
    std::fill(w.layers[0].lepe.data().begin(), w.layers[0].lepe.data().end(), 0.0f);
    const Tensor f = random_features(8, 4, 4, cfg.channels);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(9);
    for (std::size_t i = 15; i > 0; --i) {
        std::swap(perm[i], perm[rng.below(i + 1)]);
    }
    Tensor g({4, 4, cfg.channels});
    for (std::size_t t = 0; t < 16; ++t) {
        for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
            g.at(t / 4, t % 4, ch) = f.at(perm[t] / 4, perm[t] % 4, ch);
        }
    }
    const Tensor of = run_gfm(f, w);
    const Tensor og = run_gfm(g, w);
    for (std::size_t t = 0; t < 16; ++t) {
        for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
            EXPECT_NEAR(og.at(t / 4, t % 4, ch), of.at(perm[t] / 4, perm[t] % 4, ch), 1e-5);
        }
    }
}

TEST(RunGfm, TraceNestingCountsAndRowSums) {
    const GfmConfig cfg = small_config();
    const GfmWeights w = make_gfm_weights(cfg, 13);
    GfmTrace trace;
    run_gfm(random_features(14, 8, 8, cfg.channels), w, &trace);
    ASSERT_EQ(trace.layers.size(), cfg.retain_schedule.size());
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto& layer = trace.layers[l];
        EXPECT_EQ(layer.shift, l % 2 == 1 ? 2u : 0u);
        ASSERT_EQ(layer.index.size(), 4u);
        for (std::size_t win = 0; win < 4; ++win) {
            const auto& idx = layer.index[win];
            const auto& att = layer.attention[win];
            EXPECT_EQ(idx.count, cfg.retain_schedule[l]);
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                for (std::size_t q = 0; q < 16; ++q) {
                    const auto row = idx.row(h, q);
                    EXPECT_TRUE(std::is_sorted(row.begin(), row.end()));
                    EXPECT_EQ(std::set<std::int32_t>(row.begin(), row.end()).size(), row.size());
                    const auto a = att.row(h, q);
                    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-6);
                    if (l > 0) {
                        const auto parent = trace.layers[l - 1].index[win].row(h, q);
                        EXPECT_TRUE(std::includes(parent.begin(), parent.end(), row.begin(), row.end()));
                    }
                }
            }
        }
    }
}

TEST(GfmWeights, SaveLoadRoundTrip) {
    testutil::TempDir dir;
    const GfmWeights w = make_gfm_weights(small_config(), 17);
    save_gfm_weights(w, dir / "weights");
    const GfmWeights back = load_gfm_weights(dir / "weights");
    EXPECT_EQ(back.config.retain_schedule, w.config.retain_schedule);
    EXPECT_EQ(back.config.channels, w.config.channels);
    ASSERT_EQ(back.layers.size(), w.layers.size());
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        EXPECT_EQ(back.layers[l].wq, w.layers[l].wq);
        EXPECT_EQ(back.layers[l].wo, w.layers[l].wo);
        EXPECT_EQ(back.layers[l].lepe, w.layers[l].lepe);
    }
    EXPECT_EQ(code_of([&] { load_gfm_weights(dir / "missing"); }), ErrorCode::Io);
}
