#include "idesplat/commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace idesplat;

namespace {

struct PipelineFlags {
    std::size_t units = 3;
    std::optional<std::size_t> layers;
    std::vector<std::size_t> resolutions, candidates, refine_radii;
    std::optional<double> near, far;
    std::string spacing = "inverse_depth";
    std::string sampling = "bilinear";
    std::string features = "pyramid";
    std::optional<std::string> feature_dir;
    std::optional<std::size_t> feature_channels, feature_levels, prefilter;
    std::optional<float> feature_norm;
    std::string normalization = "unit";
    std::optional<float> invalid_fill;

    void add(CLI::App* app) {
        app->add_option("--units", units, "boosting units (1-3); per-unit lists default to a prefix of the defaults")
            ->check(CLI::Range(1, 3));
        app->add_option("--layers", layers, "attention layers per unit");
        app->add_option("--resolutions", resolutions, "square grid size per unit");
        app->add_option("--candidates", candidates, "depth candidates per unit");
        app->add_option("--refine-radii", refine_radii, "correlation box-filter radius per unit");
        app->add_option("--near", near, "near depth (default: from the scene)");
        app->add_option("--far", far, "far depth (default: from the scene)");
        app->add_option("--spacing", spacing, "first-unit candidate spacing")
            ->check(CLI::IsMember({"linear", "inverse_depth"}));
        app->add_option("--sampling", sampling)->check(CLI::IsMember({"bilinear", "nearest"}));
        app->add_option("--features", features, "feature provider")->check(CLI::IsMember({"pyramid", "external"}));
        app->add_option("--feature-dir", feature_dir, "directory of view_VV_sS.tnsr for --features external");
        app->add_option("--feature-channels", feature_channels);
        app->add_option("--feature-levels", feature_levels);
        app->add_option("--feature-norm", feature_norm, "per-pixel feature norm after standardisation");
        app->add_option("--feature-normalization", normalization)->check(CLI::IsMember({"none", "unit"}));
        app->add_option("--prefilter", prefilter, "box radius applied to full-resolution input");
        app->add_option("--invalid-fill", invalid_fill, "logit for candidates no source sees");
    }

    PipelineConfig resolve(const SceneConfig& scene) const {
        PipelineConfig cfg = pipeline_with_units(PipelineConfig{}, units);
        if (layers) {
            cfg.layers_per_unit = *layers;
        }
        if (!resolutions.empty()) {
            cfg.resolutions = resolutions;
        }
        if (!candidates.empty()) {
            cfg.candidates_per_unit = candidates;
        }
        if (!refine_radii.empty()) {
            cfg.refine_radii = refine_radii;
        }
        cfg.near = near.value_or(scene.near);
        cfg.far = far.value_or(scene.far);
        cfg.spacing = spacing == "linear" ? DepthSpacing::linear : DepthSpacing::inverse_depth;
        cfg.sampling = sampling == "nearest" ? Sampling::nearest : Sampling::bilinear;
        cfg.features.kind = features == "external" ? FeatureKind::external : FeatureKind::pyramid;
        if (feature_dir) {
            cfg.features.source_path = *feature_dir;
        }
        if (feature_channels) {
            cfg.features.channels = *feature_channels;
        }
        if (feature_levels) {
            cfg.features.levels = *feature_levels;
        }
        if (feature_norm) {
            cfg.features.norm = *feature_norm;
        }
        if (prefilter) {
            cfg.features.prefilter = *prefilter;
        }
        cfg.features.normalization = normalization == "none" ? FeatureNormalization::none : FeatureNormalization::unit;
        if (invalid_fill) {
            cfg.invalid_fill = *invalid_fill;
        }
        validate(cfg);
        return cfg;
    }
};

SceneConfig scene_config_of(const std::filesystem::path& dir) {
    const auto path = dir / "scene.json";
    return std::filesystem::exists(path) ? detail::read_json(path).get<SceneConfig>() : SceneConfig{};
}

void emit(const CommandResult& r, const std::optional<std::string>& report_path, bool print_json = true) {
    const std::string text = r.report.dump(2) + "\n";
    if (report_path) {
        std::ofstream out(*report_path, std::ios::trunc);
        require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + *report_path);
        out << text;
    }
    if (print_json) {
        std::cout << text;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iterative depth estimation, sparse attention checks and Gaussian splat rendering on synthetic scenes"};
    app.require_subcommand(1);
    std::optional<std::string> report_path;
    bool timing = false;
    app.add_option("--report", report_path, "also write the JSON report to this file");
    app.add_flag("--timing", timing, "include wall-clock timings (reports are otherwise reproducible byte for byte)");

    // depth
    auto* depth = app.add_subcommand("depth", "run iterative depth estimation on a scene directory");
    std::string depth_scene;
    std::optional<std::string> depth_out;
    PipelineFlags depth_flags;
    depth->add_option("scene", depth_scene, "scene directory")->required();
    depth->add_option("--out", depth_out, "write per-unit and final PFM depth maps here");
    depth_flags.add(depth);

    // render
    auto* render = app.add_subcommand("render", "splat source views into target views and score them");
    std::string render_scene, depth_source = "gt";
    std::optional<std::string> render_depth_dir, render_out;
    std::vector<std::size_t> targets;
    bool self = false;
    float footprint = 0.1f, opacity = 0.99f;
    std::optional<double> min_psnr;
    PipelineFlags render_flags;
    render->add_option("scene", render_scene, "scene directory")->required();
    render->add_option("--depth", depth_source, "depth used to place Gaussians")->check(CLI::IsMember({"gt", "predicted"}));
    render->add_option("--depth-dir", render_depth_dir, "predicted depths (view_NN.pfm); estimated when omitted");
    render->add_option("--targets", targets, "target view ids (default: the middle view)");
    render->add_flag("--self", self, "render each target from its own Gaussians");
    render->add_option("--out", render_out, "write rendered PNGs here");
    render->add_option("--footprint", footprint, "Gaussian scale in pixel footprints");
    render->add_option("--opacity", opacity, "Gaussian opacity");
    render->add_option("--min-psnr", min_psnr, "assert PSNR at least this");
    render_flags.add(render);

    // bench
    auto* bench = app.add_subcommand("bench", "dense warp vs warp-index correlation: memory and agreement");
    BenchCommand bench_cmd;
    std::string format = "json";
    bench->add_option("--height", bench_cmd.height);
    bench->add_option("--width", bench_cmd.width);
    bench->add_option("--depth", bench_cmd.depth, "depth candidates");
    bench->add_option("--channels", bench_cmd.channels);
    bench->add_option("--trials", bench_cmd.trials);
    bench->add_option("--seed", bench_cmd.seed);
    bench->add_option("--format", format, "stdout format")->check(CLI::IsMember({"json", "markdown", "csv"}));

    // gfm-check
    auto* gfm = app.add_subcommand("gfm-check", "structural checks of the focused attention module");
    GfmCheckCommand gfm_cmd;
    std::optional<std::string> weights_dir, save_weights;
    bool no_shift = false, no_residual = false, no_oracle = false;
    gfm->add_option("--seed", gfm_cmd.seed);
    gfm->add_option("--window", gfm_cmd.config.window);
    gfm->add_option("--heads", gfm_cmd.config.heads);
    gfm->add_option("--channels", gfm_cmd.config.channels);
    gfm->add_option("--schedule", gfm_cmd.config.retain_schedule, "tokens retained per layer");
    gfm->add_option("--height", gfm_cmd.height);
    gfm->add_option("--width", gfm_cmd.width);
    gfm->add_flag("--no-shift", no_shift, "never shift windows");
    gfm->add_flag("--no-residual", no_residual, "drop the residual connection");
    gfm->add_flag("--no-oracle", no_oracle, "skip the dense reference comparisons");
    gfm->add_option("--weights", weights_dir, "load weights (manifest.json + TNSR) instead of seeding them");
    gfm->add_option("--save-weights", save_weights, "write the weights used to this directory");

    // gen-scene
    auto* gen = app.add_subcommand("gen-scene", "render a synthetic scene with ground-truth depth");
    std::string gen_out, bundled = "plane";
    std::optional<std::string> kind, texture;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> views, size;
    std::optional<double> baseline, plane_depth, front_depth, near, far;
    gen->add_option("out", gen_out, "output directory")->required();
    gen->add_option("--scene", bundled, "bundled starting point")
        ->check(CLI::IsMember({"plane", "plane3", "two_planes", "box_room"}));
    gen->add_option("--kind", kind)->check(CLI::IsMember({"textured_plane", "box_room", "two_planes"}));
    gen->add_option("--texture", texture)->check(CLI::IsMember({"checker", "noise", "gradient_mix"}));
    gen->add_option("--seed", seed, "texture seed");
    gen->add_option("--views", views);
    gen->add_option("--size", size, "square image size");
    gen->add_option("--baseline", baseline);
    gen->add_option("--plane-depth", plane_depth);
    gen->add_option("--front-depth", front_depth);
    gen->add_option("--near", near);
    gen->add_option("--far", far);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return e.get_exit_code() == 0 ? code : 2;
    }

    try {
        CommandResult result;
        bool print_json = true;
        if (*depth) {
            DepthCommand cmd{depth_scene, std::nullopt, depth_flags.resolve(scene_config_of(depth_scene)), timing};
            if (depth_out) {
                cmd.out_dir = *depth_out;
            }
            result = cmd_depth(cmd);
        } else if (*render) {
            RenderCommand cmd;
            cmd.scene_dir = render_scene;
            cmd.depth_source = depth_source == "predicted" ? DepthSource::predicted : DepthSource::gt;
            if (render_depth_dir) {
                cmd.depth_dir = *render_depth_dir;
            }
            cmd.targets = targets;
            cmd.self = self;
            if (render_out) {
                cmd.out_dir = *render_out;
            }
            cmd.footprint = footprint;
            cmd.opacity = opacity;
            cmd.min_psnr = min_psnr;
            cmd.config = render_flags.resolve(scene_config_of(render_scene));
            cmd.timing = timing;
            result = cmd_render(cmd);
        } else if (*bench) {
            bench_cmd.timing = timing;
            result = cmd_bench(bench_cmd);
            if (format != "json") {
                std::cout << (format == "markdown" ? bench_markdown(result.report) : bench_csv(result.report));
                print_json = false;
            }
        } else if (*gfm) {
            gfm_cmd.config.shift = !no_shift;
            gfm_cmd.config.residual = !no_residual;
            gfm_cmd.dense_oracle = !no_oracle;
            gfm_cmd.timing = timing;
            if (weights_dir) {
                gfm_cmd.weights_dir = *weights_dir;
            }
            validate(gfm_cmd.config);
            if (save_weights) {
                save_gfm_weights(make_gfm_weights(gfm_cmd.config, gfm_cmd.seed), *save_weights);
            }
            result = cmd_gfm_check(gfm_cmd);
        } else if (*gen) {
            SceneConfig cfg = bundled_scene_config(bundled);
            if (kind) {
                cfg.kind = nlohmann::json(*kind).get<SceneKind>();
            }
            if (texture) {
                cfg.texture = nlohmann::json(*texture).get<TextureKind>();
            }
            if (seed) {
                cfg.texture_seed = *seed;
            }
            if (views) {
                cfg.views = *views;
            }
            if (size) {
                cfg.width = cfg.height = *size;
                cfg.focal = static_cast<double>(*size);
            }
            if (baseline) {
                cfg.baseline = *baseline;
            }
            if (plane_depth) {
                cfg.plane_depth = *plane_depth;
            }
            if (front_depth) {
                cfg.front_depth = *front_depth;
            }
            if (near) {
                cfg.near = *near;
            }
            if (far) {
                cfg.far = *far;
            }
            result = cmd_gen_scene({cfg, gen_out});
        }
        emit(result, report_path, print_json);
        return result.pass ? 0 : 1;
    } catch (const Error& e) {
        std::cerr << nlohmann::json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "Internal"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    }
}
