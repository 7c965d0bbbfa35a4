// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "idesplat/commands.hpp"

#include <Eigen/Geometry>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>

#include <unistd.h>

using namespace idesplat;

namespace {

constexpr double kOracleTol = 1e-5;
constexpr double kOracleSeconds = 5.0;
constexpr double kBenchRatio = 4.0;
constexpr double kNeutralTol = 1e-7;
constexpr double kWithinFraction = 0.9;
constexpr double kDepthSeconds = 30.0;
constexpr double kRowSumTol = 1e-6;
constexpr double kSelfPsnr = 30.0;
constexpr double kHeldOutPsnr = 25.0;
constexpr double kGeometryTol = 1e-4;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

CameraView random_camera(Rng& rng, std::size_t w, std::size_t h) {
    const double f = static_cast<double>(w) * rng.uniform(0.8, 1.5);
    Intrinsics k{f, f * rng.uniform(0.9, 1.1), static_cast<double>(w) * rng.uniform(0.4, 0.6),
                 static_cast<double>(h) * rng.uniform(0.4, 0.6), w, h};
    const Eigen::AngleAxisd rot(rng.uniform(-0.15, 0.15), Vec3(rng.normal(), rng.normal(), rng.normal()).normalized());
    Pose pose{rot.toRotationMatrix(), Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))};
    return build_camera(k, pose);
}

std::pair<CameraView, CameraView> random_pair(Rng& rng, std::size_t w, std::size_t h) {
    while (true) {
        CameraView a = random_camera(rng, w, h), b = random_camera(rng, w, h);
        if ((a.center() - b.center()).norm() > 0.1) {
            return {a, b};
        }
    }
}

Outcome sparse_matches_dense() {
    Rng rng(101);
    const auto t0 = Clock::now();
    double worst = 0.0;
    bool valid_ok = true;
    const int pairs = 120;
    for (int p = 0; p < pairs; ++p) {
        const std::size_t h = 2 + rng.below(15), w = 2 + rng.below(15), c = 1 + rng.below(8), d = 2 + rng.below(7);
        const auto [t, s] = random_pair(rng, w, h);
        const Tensor ft = random_tensor(rng, {h, w, c}, -1.0f, 1.0f);
        const Tensor fs = random_tensor(rng, {h, w, c}, -1.0f, 1.0f);
        const auto g = sample_depth_candidates(1.0, 10.0, d, p % 2 ? DepthSpacing::linear : DepthSpacing::inverse_depth);
        const WarpIndexMap map = compute_warp_indices(t, s, g);
        const CorrelationVolume sparse = smm_correlation(ft, fs, map);
        const Tensor warped = dense_warp(fs, t, s, g);
        for (std::size_t e = 0; e < h * w * d; ++e) {
            const std::size_t pix = e / d, k = e % d;
            double dot = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                dot += static_cast<double>(ft[pix * c + ch]) * warped[(pix * d + k) * c + ch];
            }
            const double oracle = map.valid[e] ? dot / std::sqrt(static_cast<double>(c)) : 0.0;
            valid_ok = valid_ok && (sparse.valid[e] != 0) == (map.valid[e] != 0);
            worst = std::max(worst, std::abs(sparse.values[e] - oracle));
        }
    }
    const double secs = since(t0);
    return {worst < kOracleTol && valid_ok && secs < kOracleSeconds,
            fmt("%d pairs, max |sparse - dense| = %.3g, %.2f s", pairs, worst, secs)};
}

Outcome bench_memory() {
    const CommandResult r = cmd_bench(BenchCommand{});
    double ratio = std::numeric_limits<double>::infinity(), diff = 0.0;
    for (const auto& t : r.report.at("trials")) {
        ratio = std::min(ratio, t.at("ratio").get<double>());
        diff = std::max(diff, t.at("max_abs_diff").get<double>());
    }
    return {r.pass && ratio >= kBenchRatio && diff < kOracleTol,
            fmt("C=64 D=32 64x64: dense/sparse bytes %.2f, max diff %.3g", ratio, diff)};
}

std::vector<float> random_row(Rng& rng, std::size_t d) {
    const double sharp = rng.uniform(0.1, 3.0);
    std::vector<float> row(d);
    double sum = 0.0;
    for (auto& v : row) {
        v = static_cast<float>(std::exp(sharp * rng.normal()));
        sum += v;
    }
    for (auto& v : row) {
        v = static_cast<float>(v / sum);
    }
    return row;
}

DepthProbabilityVolume as_volume(const std::vector<float>& row) { return {Tensor({1, 1, row.size()}, row)}; }

double entropy(const Tensor& p) {
    double h = 0.0;
    for (const float v : p.data()) {
        h -= v > 0.0f ? v * std::log(static_cast<double>(v)) : 0.0;
    }
    return h;
}

std::size_t argmax(std::span<const float> r) {
    return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

bool unique_max(std::span<const float> r) {
    const std::size_t k = argmax(r);
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (i != k && r[i] == r[k]) {
            return false;
        }
    }
    return true;
}

Outcome boosting_math() {
    Rng rng(303);
    double neutral = 0.0;
    int sharpen = 0, argmax_viol = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t d = 2 + rng.below(63);
        const auto p = as_volume(random_row(rng, d));
        const auto u = uniform_probabilities(1, 1, d);
        neutral = std::max({neutral, static_cast<double>(max_abs_diff(boost(p, u).probs, p.probs)),
                            static_cast<double>(max_abs_diff(boost(u, p).probs, p.probs))});
        sharpen += entropy(boost(p, p).probs) > entropy(p.probs) + 1e-9;
    }
    for (int tested = 0; tested < 1000;) {
        const std::size_t d = 2 + rng.below(63);
        auto a = random_row(rng, d), b = random_row(rng, d);
        const std::size_t k = rng.below(d);
        std::swap(a[k], a[argmax(a)]);
        std::swap(b[k], b[argmax(b)]);
        if (!unique_max(a) || !unique_max(b)) {
            continue;
        }
        ++tested;
        argmax_viol += argmax(boost(as_volume(a), as_volume(b)).probs.data()) != k;
    }
    return {neutral <= kNeutralTol && sharpen == 0 && argmax_viol == 0,
            fmt("neutrality %.3g, sharpening violations %d/1000, argmax violations %d/1000", neutral, sharpen,
                argmax_viol)};
}

struct DepthRuns {
    std::filesystem::path root;
    std::map<std::string, CommandResult> reports;
};

DepthRuns run_depth_scenes() {
    DepthRuns runs{std::filesystem::temp_directory_path() / ("idesplat_accept_" + std::to_string(::getpid())), {}};
    cmd_gen_scene({bundled_scene_config("plane3"), runs.root / "plane3"});
    for (const char* name : {"plane", "two_planes"}) {
        cmd_gen_scene({bundled_scene_config(name), runs.root / name});
        DepthCommand cmd{runs.root / name, std::nullopt, PipelineConfig{}, true};
        runs.reports.emplace(name, cmd_depth(cmd));
    }
    return runs;
}

Outcome iterative_refinement(const DepthRuns& runs) {
    bool ok = true;
    std::string text;
    for (const auto& [name, r] : runs.reports) {
        const double secs = r.report.at("seconds").get<double>();
        ok = ok && secs < kDepthSeconds;
        text += fmt("%s %.1fs:", name.c_str(), secs);
        for (const auto& v : r.report.at("views")) {
            const auto& u = v.at("units");
            std::vector<double> e;
            for (const auto& row : u) {
                e.push_back(row.at("mean_abs").get<double>());
            }
            const double within = u.back().at("within_half_final_spacing").get<double>();
            const bool dec = e.size() == 3 && e[1] < e[0] && e[2] < e[1];
            ok = ok && dec && within >= kWithinFraction;
            text += fmt(" [%.4f>%.4f>%.4f, %.3f]", e[0], e[1], e[2], within);
        }
        text += " ";
    }
    return {ok, text};
}

Outcome range_schedule(const DepthRuns& runs) {
    const PipelineConfig cfg;
    bool ok = true;
    for (const auto& [name, r] : runs.reports) {
        for (const auto& v : r.report.at("views")) {
            const auto& u = v.at("units");
            ok = ok && u.size() == 3;
            for (std::size_t n = 0; n < u.size(); ++n) {
                ok = ok && u[n].at("range_width").get<double>() == (cfg.far - cfg.near) / std::pow(2.0, double(n));
                ok = ok && u[n].at("resolution").get<std::size_t>() == std::vector<std::size_t>{64, 128, 256}[n];
            }
        }
    }
    const auto& u = runs.reports.at("plane").report.at("views")[0].at("units");
    return {ok, fmt("ranges %g/%g/%g, resolutions %d/%d/%d", u[0].at("range_width").get<double>(),
                    u[1].at("range_width").get<double>(), u[2].at("range_width").get<double>(),
                    u[0].at("resolution").get<int>(), u[1].at("resolution").get<int>(), u[2].at("resolution").get<int>())};
}

Outcome gfm_structure() {
    const CommandResult r = cmd_gfm_check(GfmCheckCommand{});
    const bool counts = r.report.at("retained_counts") == nlohmann::json({256, 256, 128, 128, 64, 64});
    const double rows = r.report.at("worst_row_sum_error").get<double>();
    const double full = r.report.at("oracle").at("full_retain_peak_relative_diff").get<double>();
    const double single = r.report.at("oracle").at("single_layer_abs_diff").get<double>();
    return {r.pass && counts && rows <= kRowSumTol && full < kOracleTol && single < kOracleTol,
            fmt("counts %s, row sum err %.2g, dense diff %.2g / %.2g", r.report.at("retained_counts").dump().c_str(),
                rows, full, single)};
}

Outcome splat_round_trip(const DepthRuns& runs) {
    RenderCommand cmd;
    cmd.scene_dir = runs.root / "plane";
    cmd.self = true;
    cmd.targets = {0, 1};
    const CommandResult self = cmd_render(cmd);
    double self_min = 1e9, held_min = 1e9;
    for (const auto& row : self.report.at("renders")) {
        self_min = std::min(self_min, row.at("psnr").get<double>());
    }
    cmd.self = false;
    cmd.scene_dir = runs.root / "plane3";
    cmd.targets = {1};
    held_min = cmd_render(cmd).report.at("renders")[0].at("psnr").get<double>();
    return {self_min >= kSelfPsnr && held_min >= kHeldOutPsnr,
            fmt("plane self %.2f dB, plane3 held-out middle view %.2f dB", self_min, held_min)};
}

Outcome geometry() {
    Rng rng(808);
    double round = 0.0, line = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const CameraView cam = random_camera(rng, 64, 48);
        const double u = rng.uniform(0, 64), v = rng.uniform(0, 48), d = rng.uniform(0.5, 20.0);
        const Vec2 back = cam.project(cam.unproject(u, v, d));
        round = std::max({round, std::abs(back.x() - u), std::abs(back.y() - v)});
    }
    for (int i = 0; i < 300; ++i) {
        const auto [a, b] = random_pair(rng, 32, 24);
        const auto g = sample_depth_candidates(1.0, 10.0, 16, DepthSpacing::inverse_depth);
        auto pts = warp_coordinates(a, b, g, nullptr, rng.below(32), rng.below(24));
        std::erase_if(pts, [](const WarpedPoint& p) { return !(p.z > 0.0); });
        if (pts.size() < 3) {
            continue;
        }
        const Vec2 p0(pts.front().x, pts.front().y), p1(pts.back().x, pts.back().y);
        const Vec2 dir = (p1 - p0).normalized();
        for (const auto& p : pts) {
            const Vec2 r = Vec2(p.x, p.y) - p0;
            line = std::max(line, std::abs(r.x() * dir.y() - r.y() * dir.x()));
        }
    }
    return {round < kGeometryTol && line < kGeometryTol,
            fmt("round trip %.3g px, collinearity %.3g px", round, line)};
}

bool same_bits(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.raw(), b.raw(), a.size() * sizeof(float)) == 0;
}

Outcome io_round_trip(const DepthRuns& runs) {
    Rng rng(909);
    const auto dir = runs.root / "io";
    std::filesystem::create_directories(dir);
    bool tnsr = true, pfm = true;
    for (int i = 0; i < 50; ++i) {
        Shape shape;
        for (std::size_t r = 0, n = 1 + rng.below(4); r < n; ++r) {
            shape.push_back(1 + rng.below(7));
        }
        Tensor t(shape);
        for (auto& v : t.data()) {
            const std::uint32_t bits = static_cast<std::uint32_t>(rng.next_u64());
            std::memcpy(&v, &bits, sizeof v);
        }
        save_tensor(t, dir / "t.tnsr");
        tnsr = tnsr && same_bits(load_tensor(dir / "t.tnsr"), t);
        const Tensor m = random_tensor(rng, {1 + rng.below(20), 1 + rng.below(20)}, -100.0f, 100.0f);
        write_pfm(m, dir / "m.pfm");
        pfm = pfm && same_bits(read_pfm(dir / "m.pfm"), m);
    }
    bool scene = true;
    for (const char* name : {"plane", "two_planes"}) {
        const SyntheticScene s = generate_scene(bundled_scene_config(name));
        const SyntheticScene back = import_scene(runs.root / name);
        for (std::size_t v = 0; v < s.cameras.size(); ++v) {
            scene = scene && same_bits(back.gt_depth[v], s.gt_depth[v]) &&
                    back.cameras[v].pose.rotation == s.cameras[v].pose.rotation &&
                    back.cameras[v].pose.translation == s.cameras[v].pose.translation &&
                    back.cameras[v].intrinsics.fx == s.cameras[v].intrinsics.fx &&
                    back.cameras[v].intrinsics.cx == s.cameras[v].intrinsics.cx;
        }
    }
    return {tnsr && pfm && scene, fmt("tnsr %s, pfm %s, scene %s", tnsr ? "exact" : "differs", pfm ? "exact" : "differs",
                                      scene ? "exact" : "differs")};
}

} // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Outcome()>& run) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
        std::fflush(stdout);
    };
    report(1, "sparse correlation matches dense", sparse_matches_dense);
    report(2, "correlation memory", bench_memory);
    report(3, "boosting", boosting_math);
    DepthRuns runs;
    try {
        runs = run_depth_scenes();
    } catch (const std::exception& e) {
        std::printf("depth runs threw: %s\n", e.what());
    }
    report(4, "iterative refinement", [&] { return iterative_refinement(runs); });
    report(5, "range schedule", [&] { return range_schedule(runs); });
    report(6, "gfm structure", gfm_structure);
    report(7, "splat round trip", [&] { return splat_round_trip(runs); });
    report(8, "geometry", geometry);
    report(9, "io round trip", [&] { return io_round_trip(runs); });
    std::error_code ec;
    std::filesystem::remove_all(runs.root, ec);
    std::printf("%d/9 criteria passed\n", 9 - failures);
    return failures == 0 ? 0 : 1;
}
