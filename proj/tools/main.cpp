#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "d2dgs/io.hpp"
#include "d2dgs/metrics.hpp"

using namespace d2dgs;
namespace fs = std::filesystem;

namespace {

std::vector<Surfel> warp_at(const Checkpoint& ckpt, double t) {
    if (t < 0.0 || t > 1.0) throw std::runtime_error("timestamp out of range");
    const ControlSignals signals = predict_signals(ckpt.field, ckpt.scene.controls, t);
    const SkinningBinding binding = bind_surfels(ckpt.scene.surfels, ckpt.scene.controls,
                                                 ckpt.scene.config.neighbor_count);
    const SkinningWeights weights = skinning_weights(binding, ckpt.scene.controls);
    return warp_surfels(ckpt.scene.surfels, binding, weights, signals);
}

int cmd_init_config(const std::string& out) {
    save_pipeline_config(out, PipelineConfig{});
    std::printf("wrote %s\n", out.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_override,
              const std::string& out_override, int iter_override, int64_t seed_override) {
    PipelineConfig cfg = load_pipeline_config(config_path);
    if (!data_override.empty()) cfg.data_dir = data_override;
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (iter_override > 0) cfg.train.iterations = iter_override;
    if (seed_override >= 0) {
        cfg.seed = uint64_t(seed_override);
        Rng root(cfg.seed);
        cfg.scene.seed = root.fork("scene").next_u64();
        cfg.field.seed = root.fork("field").next_u64();
        cfg.train.seed = root.fork("train").next_u64();
    }
    if (cfg.data_dir.empty())
        throw std::runtime_error("config has no data_dir (or pass --data)");

    const Dataset dataset = load_nerf_synthetic(cfg.data_dir, "train");
    std::printf("loaded %zu training frames from %s\n", dataset.frames.size(),
                cfg.data_dir.c_str());
    const std::vector<TrainFrame> frames = load_frames(dataset);

    fs::create_directories(cfg.output_dir);
    if (cfg.train.log_path.empty())
        cfg.train.log_path = (fs::path(cfg.output_dir) / "loss_log.csv").string();
    if (cfg.train.snapshot_path.empty())
        cfg.train.snapshot_path = (fs::path(cfg.output_dir) / "diagnostic.txt").string();
    cfg.scene.background = dataset.background;
    cfg.train.render.background = dataset.background;

    // No SfM points for these datasets: seed surfels uniformly in the bounds
    // hint and let density control do the rest.
    Rng rng = Rng(cfg.seed).fork("init");
    const double r = dataset.bounds_hint;
    std::vector<Vec3> points(size_t(cfg.init_points)), colors(points.size(), Vec3(0.5, 0.5, 0.5));
    for (Vec3& p : points)
        p = Vec3(rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r));

    SceneModel scene = init_scene(points, colors, cfg.scene);
    DeformationField field(cfg.field);
    std::printf("training %d iterations on %zu surfels, %zu control points\n",
                cfg.train.iterations, scene.surfels.size(), scene.controls.size());

    const fs::path ckpt_path = fs::path(cfg.output_dir) / "checkpoint.bin";
    std::vector<CameraView> cameras;
    for (const TrainFrame& f : frames) cameras.push_back(f.camera);
    const CheckpointFn save_cb = [&](int it, const SceneModel& s, const DeformationField& df) {
        save_checkpoint(ckpt_path.string(), {s, df, cameras, dataset.background});
        std::printf("iteration %d: checkpoint -> %s\n", it, ckpt_path.string().c_str());
    };
    const TrainResult result =
        train(frames, scene, field, cfg.train, cfg.train.checkpoint_interval > 0 ? save_cb : CheckpointFn{});

    save_checkpoint(ckpt_path.string(), {scene, field, cameras, dataset.background});
    std::printf("final loss %.6f after %zu iterations; checkpoint -> %s\n",
                result.log.empty() ? 0.0 : result.log.back().total, result.log.size(),
                ckpt_path.string().c_str());
    std::printf("loss log -> %s\n", cfg.train.log_path.c_str());
    return 0;
}

int cmd_render(const std::string& ckpt_path, double t, int view, bool want_depth, bool want_normal,
               bool want_alpha, const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    if (view < 0 || size_t(view) >= ckpt.cameras.size())
        throw std::runtime_error("view index out of range (checkpoint has " +
                                 std::to_string(ckpt.cameras.size()) + " cameras)");
    const std::vector<Surfel> warped = warp_at(ckpt, t);
    CameraView cam = ckpt.cameras[view];
    cam.time = t;

    RenderConfig rc;
    rc.background = ckpt.background;
    rc.keep_records = false;
    const RenderTargets rt = render_view(warped, cam, rc);

    fs::create_directories(out_dir);
    const fs::path out(out_dir);
    write_png((out / "rgb.png").string(), rt.rgb);
    std::printf("wrote %s\n", (out / "rgb.png").string().c_str());
    if (want_depth) {
        write_fmap((out / "depth_median.fmap").string(), rt.depth_median);
        write_fmap((out / "depth_expected.fmap").string(), rt.depth_expected);
        std::printf("wrote %s and depth_expected.fmap\n",
                    (out / "depth_median.fmap").string().c_str());
    }
    if (want_normal) {
        write_fmap((out / "normal.fmap").string(), rt.normal);
        std::printf("wrote %s\n", (out / "normal.fmap").string().c_str());
    }
    if (want_alpha) {
        write_fmap((out / "alpha.fmap").string(), rt.alpha);
        std::printf("wrote %s\n", (out / "alpha.fmap").string().c_str());
    }
    return 0;
}

int cmd_mesh(const std::string& ckpt_path, double t, bool all_times, bool no_filter, int resolution,
             const std::string& out_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    MeshingConfig cfg;
    if (resolution > 0) cfg.resolution = resolution;
    cfg.filter = !no_filter;

    std::vector<double> times;
    if (all_times) {
        for (const CameraView& cam : ckpt.cameras) times.push_back(cam.time);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
    } else {
        if (t < 0.0 || t > 1.0) throw std::runtime_error("timestamp out of range");
        times.push_back(t);
    }

    RenderConfig rc;
    rc.background = ckpt.background;
    fs::create_directories(out_dir);
    for (size_t i = 0; i < times.size(); ++i) {
        const TriangleMesh mesh =
            extract_mesh_at(times[i], ckpt.scene, ckpt.field, ckpt.cameras, cfg, rc);
        char name[32];
        std::snprintf(name, sizeof(name), "mesh_%05zu.obj", i);
        const fs::path path = fs::path(out_dir) / name;
        save_obj(path.string(), mesh);
        const MeshStats stats = mesh_stats(mesh);
        std::printf("t=%.4f: %zu vertices, %zu triangles, %zu components, %zu holes -> %s\n",
                    times[i], mesh.vertices.size(), mesh.triangles.size(), stats.components,
                    stats.boundary_loops, path.string().c_str());
    }
    return 0;
}

std::vector<fs::path> mesh_files(const std::string& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) throw std::runtime_error(dir + " is not a directory");
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("mesh_", 0) == 0 && entry.path().extension() == ".obj")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no mesh_*.obj files in " + dir);
    return files;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& csv_path) {
    const std::vector<fs::path> pred_files = mesh_files(pred_dir);
    const std::vector<fs::path> gt_files = mesh_files(gt_dir);
    if (pred_files.size() != gt_files.size())
        throw std::runtime_error("prediction and ground truth mesh counts differ");

    std::vector<double> times;
    std::vector<TriangleMesh> pred, gt;
    for (size_t i = 0; i < pred_files.size(); ++i) {
        times.push_back(pred_files.size() > 1 ? double(i) / (pred_files.size() - 1) : 0.0);
        pred.push_back(load_obj(pred_files[i].string()));
        gt.push_back(load_obj(gt_files[i].string()));
    }

    const SequenceReport report = evaluate_sequence(times, pred, gt, {}, {});
    std::fputs(format_report(report).c_str(), stdout);
    if (!csv_path.empty()) {
        write_report_csv(csv_path, report);
        std::printf("report -> %s\n", csv_path.c_str());
    }
    return 0;
}

int cmd_synth(const std::string& kind, const std::string& out_dir, const SynthParams& params) {
    const Dataset ds = generate_synthetic(kind, out_dir, params);
    std::printf("wrote %s dataset (%zu train frames) to %s\n", kind.c_str(), ds.frames.size(),
                out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic 2D Gaussian surfels: train, render, mesh, evaluate"};
    app.require_subcommand(1);

    std::string config_out = "config.json";
    CLI::App* init = app.add_subcommand("init-config", "Write a config file with full defaults");
    init->add_option("out", config_out, "Output path")->required();

    std::string train_config, train_data, train_out;
    int train_iters = 0;
    int64_t train_seed = -1;
    CLI::App* tr = app.add_subcommand("train", "Fit a model to a dataset");
    tr->add_option("config", train_config, "Pipeline config JSON")->required();
    tr->add_option("--data", train_data, "Override data_dir");
    tr->add_option("--out", train_out, "Override output_dir");
    tr->add_option("--iterations", train_iters, "Override iteration count");
    tr->add_option("--seed", train_seed, "Override the root seed");

    std::string render_ckpt, render_out = ".";
    double render_t = 0.0;
    int render_view = 0;
    bool want_depth = false, want_normal = false, want_alpha = false;
    CLI::App* re = app.add_subcommand("render", "Render one view of a checkpoint");
    re->add_option("ckpt", render_ckpt, "Checkpoint file")->required();
    re->add_option("--t", render_t, "Timestamp in [0,1]")->required();
    re->add_option("--view", render_view, "Camera index from the checkpoint");
    re->add_flag("--depth", want_depth, "Also write depth maps (.fmap)");
    re->add_flag("--normal", want_normal, "Also write the normal map (.fmap)");
    re->add_flag("--alpha", want_alpha, "Also write the alpha map (.fmap)");
    re->add_option("--out", render_out, "Output directory");

    std::string mesh_ckpt, mesh_out = ".";
    double mesh_t = 0.0;
    bool all_times = false, no_filter = false;
    int mesh_resolution = 0;
    CLI::App* me = app.add_subcommand("mesh", "Extract a surface mesh from a checkpoint");
    me->add_option("ckpt", mesh_ckpt, "Checkpoint file")->required();
    me->add_option("--t", mesh_t, "Timestamp in [0,1]");
    me->add_flag("--all-times", all_times, "Mesh every distinct training timestamp");
    me->add_flag("--no-filter", no_filter, "Disable mask-based depth filtering");
    me->add_option("--resolution", mesh_resolution, "TSDF grid resolution");
    me->add_option("--out", mesh_out, "Output directory");

    std::string eval_pred, eval_gt, eval_csv;
    CLI::App* ev = app.add_subcommand("eval", "Compare mesh_*.obj directories");
    ev->add_option("pred-dir", eval_pred, "Predicted meshes")->required();
    ev->add_option("gt-dir", eval_gt, "Ground-truth meshes")->required();
    ev->add_option("--csv", eval_csv, "Also write a CSV report");

    std::string synth_kind, synth_out;
    SynthParams params;
    std::vector<double> velocity;
    int64_t synth_seed = 0;
    CLI::App* sy = app.add_subcommand("synth", "Generate a synthetic dataset");
    sy->add_option("kind", synth_kind, "sphere | disc | floater-scene | translating-disc")
        ->required();
    sy->add_option("out", synth_out, "Output directory")->required();
    sy->add_option("--seed", synth_seed, "Random seed");
    sy->add_option("--views", params.views, "Camera count");
    sy->add_option("--timestamps", params.timestamps, "Timestamps (time-varying kinds)");
    sy->add_option("--size", params.image_size, "Image side length in pixels");
    sy->add_option("--surfels", params.surfels, "Ground-truth surfel budget");
    sy->add_option("--velocity", velocity, "World velocity vx vy vz")->expected(3);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(init)) return cmd_init_config(config_out);
        if (app.got_subcommand(tr))
            return cmd_train(train_config, train_data, train_out, train_iters, train_seed);
        if (app.got_subcommand(re))
            return cmd_render(render_ckpt, render_t, render_view, want_depth, want_normal,
                              want_alpha, render_out);
        if (app.got_subcommand(me))
            return cmd_mesh(mesh_ckpt, mesh_t, all_times, no_filter, mesh_resolution, mesh_out);
        if (app.got_subcommand(ev)) return cmd_eval(eval_pred, eval_gt, eval_csv);
        if (app.got_subcommand(sy)) {
            params.seed = uint64_t(synth_seed);
            if (!velocity.empty()) params.velocity = Vec3(velocity[0], velocity[1], velocity[2]);
            return cmd_synth(synth_kind, synth_out, params);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
