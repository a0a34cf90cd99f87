#include "d2dgs/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "d2dgs/parallel.hpp"
#include "d2dgs/renderer.hpp"
#include "json.hpp"

namespace d2dgs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PngReader {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngReader(const std::string& path) {
        fp = std::fopen(path.c_str(), "rb");
        if (!fp) throw std::runtime_error("cannot open " + path);
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (png) info = png_create_info_struct(png);
        if (!png || !info) throw std::runtime_error("libpng init failed");
    }
    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
    PngReader(const PngReader&) = delete;
    PngReader& operator=(const PngReader&) = delete;
};

}  // namespace

Image read_png(const std::string& path) {
    PngReader r(path);
    if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("failed to decode " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);

    const int color_type = png_get_color_type(r.png, r.info);
    const int bit_depth = png_get_bit_depth(r.png, r.info);
    if (bit_depth == 16) png_set_strip_16(r.png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(r.png);
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(r.png);
    png_set_filler(r.png, 0xFF, PNG_FILLER_AFTER);
    png_read_update_info(r.png, r.info);

    const int w = int(png_get_image_width(r.png, r.info));
    const int h = int(png_get_image_height(r.png, r.info));
    std::vector<png_byte> row(png_get_rowbytes(r.png, r.info));
    if (row.size() != size_t(w) * 4) throw std::runtime_error("unexpected PNG layout in " + path);

    Image img(h, w, 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            const double a = row[size_t(x) * 4 + 3] / 255.0;
            for (int c = 0; c < 3; ++c) {
                const double v = row[size_t(x) * 4 + c] / 255.0;
                img.at(y, x, c) = v * a + (1.0 - a);  // over white
            }
        }
    }
    return img;
}

namespace {

std::pair<int, int> read_png_size(const std::string& path) {
    PngReader r(path);
    if (setjmp(png_jmpbuf(r.png))) throw std::runtime_error("failed to decode " + path);
    png_init_io(r.png, r.fp);
    png_read_info(r.png, r.info);
    return {int(png_get_image_width(r.png, r.info)), int(png_get_image_height(r.png, r.info))};
}

struct PngWriter {
    FILE* fp = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngWriter(const std::string& path) {
        fp = std::fopen(path.c_str(), "wb");
        if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        if (png) info = png_create_info_struct(png);
        if (!png || !info) throw std::runtime_error("libpng init failed");
    }
    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
    PngWriter(const PngWriter&) = delete;
    PngWriter& operator=(const PngWriter&) = delete;
};

}  // namespace

void write_png(const std::string& path, const Image& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::invalid_argument("write_png: expected 1 or 3 channels");
    if (img.empty()) throw std::invalid_argument("write_png: empty image");
    PngWriter w(path);
    if (setjmp(png_jmpbuf(w.png))) throw std::runtime_error("failed to encode " + path);
    png_init_io(w.png, w.fp);
    png_set_IHDR(w.png, w.info, img.width(), img.height(), 8,
                 img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    std::vector<png_byte> row(size_t(img.width()) * img.channels());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                row[size_t(x) * img.channels() + c] =
                    png_byte(std::lround(clamp01(img.at(y, x, c)) * 255.0));
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

Image read_fmap(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[4];
    uint32_t w = 0, h = 0, c = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&c), 4);
    if (!f || std::memcmp(magic, "FMAP", 4) != 0)
        throw std::runtime_error(path + ": not an FMAP file");
    if (w == 0 || h == 0 || c == 0 || w > 1u << 20 || h > 1u << 20 || c > 64)
        throw std::runtime_error(path + ": implausible FMAP header");
    Image img{int(h), int(w), int(c)};
    std::vector<float> buf(img.size());
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
    if (!f) throw std::runtime_error(path + ": truncated FMAP payload");
    for (size_t i = 0; i < buf.size(); ++i) img.raw()[i] = buf[i];
    return img;
}

void write_fmap(const std::string& path, const Image& img) {
    if (img.empty()) throw std::invalid_argument("write_fmap: empty image");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    const uint32_t w = uint32_t(img.width()), h = uint32_t(img.height()),
                   c = uint32_t(img.channels());
    f.write("FMAP", 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&c), 4);
    std::vector<float> buf(img.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = float(img.raw()[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * 4));
    if (!f) throw std::runtime_error("failed writing " + path);
}

namespace {

std::string resolve_image_path(const fs::path& root, std::string rel) {
    if (rel.rfind("./", 0) == 0) rel = rel.substr(2);
    fs::path p = root / rel;
    if (!p.has_extension()) p += ".png";
    return p.string();
}

json parse_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("missing file: " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        // nlohmann reports "parse error at line L, column C: ..." — keep it.
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace

Dataset load_nerf_synthetic(const std::string& dir, const std::string& split) {
    const fs::path root(dir);
    const json doc = parse_json_file(root / ("transforms_" + split + ".json"));

    if (!doc.contains("camera_angle_x"))
        throw std::runtime_error(dir + ": transforms file lacks camera_angle_x");
    const double angle_x = doc.at("camera_angle_x").get<double>();
    if (!doc.contains("frames") || !doc.at("frames").is_array() || doc.at("frames").empty())
        throw std::runtime_error(dir + ": transforms file has no frames");

    Dataset ds;
    ds.split = split;
    double dist_sum = 0.0;
    for (const json& fr : doc.at("frames")) {
        if (!fr.contains("time"))
            throw std::runtime_error(dir + ": not a dynamic dataset (frame missing 'time')");
        DatasetFrame frame;
        frame.image_path = resolve_image_path(root, fr.at("file_path").get<std::string>());
        if (!fs::exists(frame.image_path))
            throw std::runtime_error("missing file: " + frame.image_path);

        const json& m = fr.at("transform_matrix");
        Mat3 rot_gl;
        Vec3 cam_pos;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) rot_gl(r, c) = m.at(r).at(c).get<double>();
            cam_pos[r] = m.at(r).at(3).get<double>();
        }
        // OpenGL camera-to-world (looks down -z, y up) -> CV axes, then invert.
        Mat3 rot_cv = rot_gl;
        rot_cv.col(1) = -rot_gl.col(1);
        rot_cv.col(2) = -rot_gl.col(2);
        frame.camera.rot_w2c = rot_cv.transpose();
        frame.camera.t_w2c = -frame.camera.rot_w2c * cam_pos;
        frame.camera.time = clamp01(fr.at("time").get<double>());
        ds.frames.push_back(std::move(frame));
        dist_sum += cam_pos.norm();
    }

    const auto [w, h] = read_png_size(ds.frames.front().image_path);
    const double fx = 0.5 * w / std::tan(0.5 * angle_x);
    for (DatasetFrame& frame : ds.frames) {
        frame.camera.width = w;
        frame.camera.height = h;
        frame.camera.fx = frame.camera.fy = fx;
        frame.camera.cx = 0.5 * w;
        frame.camera.cy = 0.5 * h;
    }
    ds.bounds_hint = 0.5 * dist_sum / double(ds.frames.size());
    return ds;
}

std::vector<TrainFrame> load_frames(const Dataset& dataset) {
    std::vector<TrainFrame> frames(dataset.frames.size());
    std::vector<std::string> errors(dataset.frames.size());
    parallel_for(int64_t(dataset.frames.size()), [&](int64_t i) {
        try {
            frames[i].camera = dataset.frames[i].camera;
            frames[i].image = read_png(dataset.frames[i].image_path);
            if (frames[i].image.width() != frames[i].camera.width ||
                frames[i].image.height() != frames[i].camera.height)
                errors[i] = dataset.frames[i].image_path + ": image size differs from dataset";
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (const std::string& e : errors)
        if (!e.empty()) throw std::runtime_error(e);
    return frames;
}

namespace {

CameraView look_at(const Vec3& pos, const Vec3& target, int wh, double focal, double time) {
    CameraView cam;
    cam.width = cam.height = wh;
    cam.fx = cam.fy = focal;
    cam.cx = cam.cy = 0.5 * wh;
    cam.time = time;
    const Vec3 fwd = (target - pos).normalized();
    Vec3 up(0, 1, 0);
    if (std::abs(fwd.dot(up)) > 0.95) up = Vec3(1, 0, 0);
    const Vec3 x = fwd.cross(up).normalized();
    const Vec3 y = fwd.cross(x).normalized();
    cam.rot_w2c.row(0) = x;
    cam.rot_w2c.row(1) = y;
    cam.rot_w2c.row(2) = fwd;
    cam.t_w2c = -cam.rot_w2c * pos;
    return cam;
}

Quat quat_from_z(const Vec3& n) {
    const Vec3 z(0, 0, 1);
    const double c = z.dot(n);
    if (c > 1.0 - 1e-12) return Quat::identity();
    if (c < -1.0 + 1e-12) return {0, 1, 0, 0};
    const Vec3 axis = z.cross(n).normalized();
    const double half = 0.5 * std::acos(std::clamp(c, -1.0, 1.0));
    const double s = std::sin(half);
    return {std::cos(half), axis[0] * s, axis[1] * s, axis[2] * s};
}

Surfel shell_surfel(const Vec3& center, const Vec3& normal, double scale, const Vec3& color,
                    double opacity) {
    Surfel s;
    s.center = center;
    s.rot_raw = quat_from_z(normal);
    s.log_scales = Vec2(std::log(scale), std::log(scale));
    s.opacity_logit = logit(opacity);
    s.sh.assign(3, 0.0);
    for (int c = 0; c < 3; ++c) s.sh[c] = (color[c] - 0.5) / sh::kC0;
    return s;
}

std::vector<Vec3> fibonacci_dirs(int n) {
    std::vector<Vec3> dirs(n);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double y = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
        dirs[i] = Vec3(r * std::cos(golden * i), y, r * std::sin(golden * i));
    }
    return dirs;
}

ControlPointSet interior_controls(const Vec3& center, double spread) {
    ControlPointSet controls;
    const Vec3 offs[4] = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
    for (const Vec3& o : offs) {
        ControlPoint p;
        p.position = center + spread * o;
        p.log_radius = std::log(4.0 * spread);
        controls.points.push_back(p);
    }
    return controls;
}

struct SynthScene {
    std::vector<Surfel> surfels;
    ControlPointSet controls;
    std::vector<Vec3> gt_points;  // canonical ground-truth surface samples
    Vec3 centroid = Vec3::Zero();
};

SynthScene build_sphere(int n, double radius, bool with_floater) {
    SynthScene scene;
    const double scale = 1.3 * std::sqrt(4.0 * M_PI * radius * radius / n) / 2.0;
    for (const Vec3& d : fibonacci_dirs(n)) {
        const Vec3 color(0.5 + 0.4 * d.x(), 0.5 + 0.4 * d.y(), 0.5 + 0.4 * d.z());
        scene.surfels.push_back(shell_surfel(radius * d, d, scale, color, 0.95));
    }
    if (with_floater) {
        // A near-background-colored blob off the object, mimicking the kind of
        // floater density control fails to prune.
        const Vec3 center(0, 0, 1.8 * radius);
        for (const Vec3& d : fibonacci_dirs(16))
            scene.surfels.push_back(
                shell_surfel(center + 0.16 * radius * d, d, 1.4 * scale, Vec3(0.97, 0.97, 0.97), 0.9));
    }
    scene.controls = interior_controls(Vec3::Zero(), 0.3 * radius);
    for (const Vec3& d : fibonacci_dirs(1000)) scene.gt_points.push_back(radius * d);
    return scene;
}

SynthScene build_disc(int n, double radius) {
    SynthScene scene;
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    const double scale = 1.3 * radius / std::sqrt(double(n));
    for (int i = 0; i < n; ++i) {
        const double r = radius * std::sqrt((i + 0.5) / n);
        const double th = golden * i;
        const Vec3 c(r * std::cos(th), r * std::sin(th), 0.0);
        const int band = int(std::floor(r / (0.25 * radius))) + int(std::floor(th / (M_PI / 3)));
        const Vec3 color = band % 2 ? Vec3(0.85, 0.25, 0.2) : Vec3(0.15, 0.35, 0.8);
        scene.surfels.push_back(shell_surfel(c, Vec3(0, 0, 1), scale, color, 0.95));
        scene.gt_points.push_back(c);
    }
    scene.controls = interior_controls(Vec3::Zero(), 0.3 * radius);
    return scene;
}

void write_transforms(const fs::path& path, const std::vector<CameraView>& cams,
                      const std::vector<std::string>& file_paths) {
    json doc;
    doc["camera_angle_x"] = 2.0 * std::atan(0.5 * cams.front().width / cams.front().fx);
    json frames = json::array();
    for (size_t i = 0; i < cams.size(); ++i) {
        const Mat3 rot_c2w = cams[i].rot_w2c.transpose();
        Mat3 rot_gl = rot_c2w;
        rot_gl.col(1) = -rot_c2w.col(1);
        rot_gl.col(2) = -rot_c2w.col(2);
        const Vec3 pos = cams[i].cam_position();
        json m = json::array();
        for (int r = 0; r < 3; ++r)
            m.push_back({rot_gl(r, 0), rot_gl(r, 1), rot_gl(r, 2), pos[r]});
        m.push_back({0.0, 0.0, 0.0, 1.0});
        frames.push_back({{"file_path", file_paths[i]},
                          {"time", cams[i].time},
                          {"transform_matrix", m}});
    }
    doc["frames"] = std::move(frames);
    std::ofstream f(path);
    f << doc.dump(1) << "\n";
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

void render_split(const fs::path& root, const std::string& split,
                  const std::vector<CameraView>& cams, const std::vector<Surfel>& base,
                  const Vec3& velocity, const Vec3& path_origin) {
    fs::create_directories(root / split);
    RenderConfig rc;
    rc.keep_records = false;
    std::vector<std::string> names(cams.size());
    for (size_t i = 0; i < cams.size(); ++i) names[i] = "./" + split + "/r_" + std::to_string(i);

    // render_view is parallel inside; keep the frame loop serial.
    for (size_t i = 0; i < cams.size(); ++i) {
        std::vector<Surfel> moved = base;
        const Vec3 shift = path_origin + velocity * cams[i].time;
        for (Surfel& s : moved) s.center += shift;
        const RenderTargets rt = render_view(moved, cams[i], rc);
        write_png((root / split / ("r_" + std::to_string(i) + ".png")).string(), rt.rgb);
    }
    write_transforms(root / ("transforms_" + split + ".json"), cams, names);
}

}  // namespace

Dataset generate_synthetic(const std::string& kind, const std::string& out_dir,
                           const SynthParams& params) {
    if (params.views < 2 || params.image_size < 8 || params.surfels < 8)
        throw std::invalid_argument("generate_synthetic: implausible parameters");
    const bool moving = kind == "translating-disc";

    SynthScene scene;
    if (kind == "sphere")
        scene = build_sphere(params.surfels, 0.5, false);
    else if (kind == "floater-scene")
        scene = build_sphere(params.surfels, 0.5, true);
    else if (kind == "disc" || moving)
        scene = build_disc(params.surfels, 0.4);
    else
        throw std::invalid_argument("generate_synthetic: unknown kind '" + kind + "'");

    const fs::path root(out_dir);
    fs::create_directories(root);
    const double focal = 0.78 * params.image_size;

    std::vector<double> times;
    std::vector<CameraView> train_cams, test_cams;
    Vec3 velocity = Vec3::Zero(), path_origin = Vec3::Zero();

    if (moving) {
        const int T = std::max(2, params.timestamps);
        velocity = params.velocity;
        path_origin = -0.5 * velocity;  // centered trajectory
        for (int j = 0; j < T; ++j) times.push_back(double(j) / (T - 1));
        // Camera fan on the +z side, every pose captured at every timestamp.
        auto cap_pos = [&](double phi, double tilt) -> Vec3 {
            return 2.0 * Vec3(tilt * std::cos(phi), tilt * std::sin(phi), 1.0).normalized();
        };
        for (int v = 0; v < params.views; ++v)
            for (double t : times)
                train_cams.push_back(look_at(cap_pos(2.0 * M_PI * v / params.views, 0.45),
                                             Vec3::Zero(), params.image_size, focal, t));
        for (int v = 0; v < 2; ++v)
            for (double t : times)
                test_cams.push_back(look_at(cap_pos(2.0 * M_PI * (v + 0.5) / 2.0, 0.3),
                                            Vec3::Zero(), params.image_size, focal, t));
    } else {
        times.push_back(0.0);
        const bool flat = kind == "disc";
        for (int v = 0; v < params.views; ++v) {
            const double th = 2.0 * M_PI * v / params.views;
            const Vec3 pos = flat ? 2.0 * Vec3(0.45 * std::cos(th), 0.45 * std::sin(th), 1.0).normalized()
                                  : 2.2 * Vec3(0.93 * std::cos(th), 0.36, 0.93 * std::sin(th));
            train_cams.push_back(look_at(pos, Vec3::Zero(), params.image_size, focal,
                                         params.views > 1 ? double(v) / (params.views - 1) : 0.0));
        }
        for (int v = 0; v < 2; ++v) {
            const double th = 2.0 * M_PI * (v + 0.25) / 2.0;
            const Vec3 pos = flat ? 2.0 * Vec3(0.35 * std::cos(th), 0.35 * std::sin(th), 1.0).normalized()
                                  : 2.2 * Vec3(0.88 * std::cos(th), 0.47, 0.88 * std::sin(th));
            test_cams.push_back(look_at(pos, Vec3::Zero(), params.image_size, focal, 0.5 * (v + 0.5)));
        }
    }

    render_split(root, "train", train_cams, scene.surfels, velocity, path_origin);
    render_split(root, "test", test_cams, scene.surfels, velocity, path_origin);

    json gt;
    gt["kind"] = kind;
    gt["velocity"] = {velocity[0], velocity[1], velocity[2]};
    gt["times"] = times;
    json centroids = json::array(), point_sets = json::array();
    for (double t : times) {
        const Vec3 shift = path_origin + velocity * t;
        const Vec3 c = scene.centroid + shift;
        centroids.push_back({c[0], c[1], c[2]});
        json pts = json::array();
        for (const Vec3& p : scene.gt_points)
            pts.push_back({p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]});
        point_sets.push_back(std::move(pts));
    }
    gt["centroids"] = std::move(centroids);
    gt["points"] = std::move(point_sets);
    std::ofstream gf(root / "ground_truth.json");
    gf << gt.dump(1) << "\n";
    if (!gf) throw std::runtime_error("failed writing ground_truth.json");

    return load_nerf_synthetic(out_dir, "train");
}

GroundTruth load_ground_truth(const std::string& path) {
    const json doc = parse_json_file(path);
    GroundTruth gt;
    gt.kind = doc.at("kind").get<std::string>();
    for (int c = 0; c < 3; ++c) gt.velocity[c] = doc.at("velocity").at(c).get<double>();
    gt.times = doc.at("times").get<std::vector<double>>();
    for (const json& v : doc.at("centroids"))
        gt.centroids.emplace_back(v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>());
    for (const json& set : doc.at("points")) {
        std::vector<Vec3> pts;
        for (const json& v : set)
            pts.emplace_back(v.at(0).get<double>(), v.at(1).get<double>(), v.at(2).get<double>());
        gt.points.push_back(std::move(pts));
    }
    return gt;
}

// --- configuration -----------------------------------------------------------

namespace {

json vec3_to_json(const Vec3& v) { return {v[0], v[1], v[2]}; }
Vec3 vec3_from_json(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json to_json(const SceneConfig& c) {
    return {{"n_control_points", c.n_control_points},
            {"neighbor_count", c.neighbor_count},
            {"background", vec3_to_json(c.background)},
            {"sh_degree", c.sh_degree},
            {"seed", c.seed}};
}

SceneConfig scene_config_from_json(const json& j) {
    SceneConfig c;
    c.n_control_points = j.at("n_control_points").get<int>();
    c.neighbor_count = j.at("neighbor_count").get<int>();
    c.background = vec3_from_json(j.at("background"));
    c.sh_degree = j.at("sh_degree").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

json to_json(const FieldConfig& c) {
    return {{"hidden_width", c.hidden_width},   {"hidden_layers", c.hidden_layers},
            {"pe_position", c.pe_position},     {"pe_time", c.pe_time},
            {"activation", to_string(c.activation)}, {"seed", c.seed}};
}

FieldConfig field_config_from_json(const json& j) {
    FieldConfig c;
    c.hidden_width = j.at("hidden_width").get<int>();
    c.hidden_layers = j.at("hidden_layers").get<int>();
    c.pe_position = j.at("pe_position").get<int>();
    c.pe_time = j.at("pe_time").get<int>();
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

json to_json(const RenderConfig& c) {
    return {{"near_plane", c.near_plane},     {"cutoff_sq", c.cutoff_sq},
            {"screen_sigma", c.screen_sigma}, {"screen_radius", c.screen_radius},
            {"early_stop", c.early_stop},     {"tile_size", c.tile_size},
            {"background", vec3_to_json(c.background)}};
}

RenderConfig render_config_from_json(const json& j) {
    RenderConfig c;
    c.near_plane = j.at("near_plane").get<double>();
    c.cutoff_sq = j.at("cutoff_sq").get<double>();
    c.screen_sigma = j.at("screen_sigma").get<double>();
    c.screen_radius = j.at("screen_radius").get<double>();
    c.early_stop = j.at("early_stop").get<double>();
    c.tile_size = j.at("tile_size").get<int>();
    c.background = vec3_from_json(j.at("background"));
    return c;
}

json to_json(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"warmup_iterations", c.warmup_iterations},
            {"densify_interval", c.densify_interval},
            {"densify_grad_threshold", c.densify_grad_threshold},
            {"prune_opacity", c.prune_opacity},
            {"split_scale_fraction", c.split_scale_fraction},
            {"split_scale_divisor", c.split_scale_divisor},
            {"max_surfels", c.max_surfels},
            {"seed", c.seed},
            {"lambda_ssim", c.loss.lambda_s},
            {"lambda_normal", c.loss.lambda_n},
            {"lambda_depth", c.loss.lambda_d},
            {"render", to_json(c.render)},
            {"lr_position", c.lr_position},
            {"lr_rotation", c.lr_rotation},
            {"lr_scale", c.lr_scale},
            {"lr_opacity", c.lr_opacity},
            {"lr_sh", c.lr_sh},
            {"lr_control_position", c.lr_control_position},
            {"lr_control_radius", c.lr_control_radius},
            {"lr_field", c.lr_field},
            {"field_lr_decay", c.field_lr_decay},
            {"adam_beta1", c.adam_beta1},
            {"adam_beta2", c.adam_beta2},
            {"adam_eps", c.adam_eps},
            {"checkpoint_interval", c.checkpoint_interval}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.iterations = j.at("iterations").get<int>();
    c.warmup_iterations = j.at("warmup_iterations").get<int>();
    c.densify_interval = j.at("densify_interval").get<int>();
    c.densify_grad_threshold = j.at("densify_grad_threshold").get<double>();
    c.prune_opacity = j.at("prune_opacity").get<double>();
    c.split_scale_fraction = j.at("split_scale_fraction").get<double>();
    c.split_scale_divisor = j.at("split_scale_divisor").get<double>();
    c.max_surfels = j.at("max_surfels").get<size_t>();
    c.seed = j.at("seed").get<uint64_t>();
    c.loss.lambda_s = j.at("lambda_ssim").get<double>();
    c.loss.lambda_n = j.at("lambda_normal").get<double>();
    c.loss.lambda_d = j.at("lambda_depth").get<double>();
    c.render = render_config_from_json(j.at("render"));
    c.lr_position = j.at("lr_position").get<double>();
    c.lr_rotation = j.at("lr_rotation").get<double>();
    c.lr_scale = j.at("lr_scale").get<double>();
    c.lr_opacity = j.at("lr_opacity").get<double>();
    c.lr_sh = j.at("lr_sh").get<double>();
    c.lr_control_position = j.at("lr_control_position").get<double>();
    c.lr_control_radius = j.at("lr_control_radius").get<double>();
    c.lr_field = j.at("lr_field").get<double>();
    c.field_lr_decay = j.at("field_lr_decay").get<double>();
    c.adam_beta1 = j.at("adam_beta1").get<double>();
    c.adam_beta2 = j.at("adam_beta2").get<double>();
    c.adam_eps = j.at("adam_eps").get<double>();
    c.checkpoint_interval = j.at("checkpoint_interval").get<int>();
    return c;
}

json to_json(const MeshingConfig& c) {
    return {{"resolution", c.resolution},
            {"trunc_voxels", c.trunc_voxels},
            {"mask_tolerance", c.mask_tolerance},
            {"use_median_depth", c.use_median_depth},
            {"filter", c.filter},
            {"carve_background", c.carve_background},
            {"erode_mask", c.erode_mask},
            {"margin", c.margin}};
}

MeshingConfig meshing_config_from_json(const json& j) {
    MeshingConfig c;
    c.resolution = j.at("resolution").get<int>();
    c.trunc_voxels = j.at("trunc_voxels").get<double>();
    c.mask_tolerance = j.at("mask_tolerance").get<double>();
    c.use_median_depth = j.at("use_median_depth").get<bool>();
    c.filter = j.at("filter").get<bool>();
    c.carve_background = j.at("carve_background").get<bool>();
    c.erode_mask = j.at("erode_mask").get<bool>();
    c.margin = j.at("margin").get<double>();
    return c;
}

}  // namespace

PipelineConfig load_pipeline_config(const std::string& path) {
    const json doc = parse_json_file(path);
    PipelineConfig cfg;
    cfg.scene = scene_config_from_json(doc.at("scene"));
    cfg.field = field_config_from_json(doc.at("field"));
    cfg.train = train_config_from_json(doc.at("train"));
    cfg.meshing = meshing_config_from_json(doc.at("meshing"));
    cfg.data_dir = doc.at("data_dir").get<std::string>();
    cfg.output_dir = doc.at("output_dir").get<std::string>();
    cfg.init_points = doc.at("init_points").get<int>();
    cfg.seed = doc.at("seed").get<uint64_t>();
    return cfg;
}

void save_pipeline_config(const std::string& path, const PipelineConfig& cfg) {
    json doc = {{"scene", to_json(cfg.scene)},     {"field", to_json(cfg.field)},
                {"train", to_json(cfg.train)},     {"meshing", to_json(cfg.meshing)},
                {"data_dir", cfg.data_dir},        {"output_dir", cfg.output_dir},
                {"init_points", cfg.init_points},  {"seed", cfg.seed}};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << doc.dump(2) << "\n";
    if (!f) throw std::runtime_error("failed writing " + path);
}

// --- checkpoint --------------------------------------------------------------

namespace {

constexpr char kCkptMagic[] = "D2DGS-CKPT-v1\n";

template <typename T>
void put(std::ostream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

void put_vec3(std::ostream& f, const Vec3& v) {
    for (int i = 0; i < 3; ++i) put(f, v[i]);
}

Vec3 get_vec3(std::istream& f) {
    Vec3 v;
    for (int i = 0; i < 3; ++i) v[i] = get<double>(f);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(kCkptMagic, sizeof(kCkptMagic) - 1);

    const SceneConfig& sc = ckpt.scene.config;
    put<int32_t>(f, sc.n_control_points);
    put<int32_t>(f, sc.neighbor_count);
    put_vec3(f, sc.background);
    put<int32_t>(f, sc.sh_degree);
    put<uint64_t>(f, sc.seed);

    put<uint64_t>(f, ckpt.scene.surfels.size());
    for (const Surfel& s : ckpt.scene.surfels) {
        put_vec3(f, s.center);
        put(f, s.rot_raw.w);
        put(f, s.rot_raw.x);
        put(f, s.rot_raw.y);
        put(f, s.rot_raw.z);
        put(f, s.log_scales[0]);
        put(f, s.log_scales[1]);
        put(f, s.opacity_logit);
        put<uint32_t>(f, uint32_t(s.sh.size()));
        f.write(reinterpret_cast<const char*>(s.sh.data()), std::streamsize(s.sh.size() * 8));
    }

    put<uint64_t>(f, ckpt.scene.controls.size());
    for (const ControlPoint& p : ckpt.scene.controls.points) {
        put_vec3(f, p.position);
        put(f, p.log_radius);
    }

    const FieldConfig& fc = ckpt.field.config();
    put<int32_t>(f, fc.hidden_width);
    put<int32_t>(f, fc.hidden_layers);
    put<int32_t>(f, fc.pe_position);
    put<int32_t>(f, fc.pe_time);
    put<int32_t>(f, int32_t(fc.activation));
    put<uint64_t>(f, fc.seed);
    put<uint32_t>(f, uint32_t(ckpt.field.layers().size()));
    for (const Linear& l : ckpt.field.layers()) {
        put<int32_t>(f, l.in);
        put<int32_t>(f, l.out);
        f.write(reinterpret_cast<const char*>(l.weight.data()),
                std::streamsize(l.weight.size() * 8));
        f.write(reinterpret_cast<const char*>(l.bias.data()), std::streamsize(l.bias.size() * 8));
    }

    put<uint64_t>(f, ckpt.cameras.size());
    for (const CameraView& cam : ckpt.cameras) {
        put<int32_t>(f, cam.width);
        put<int32_t>(f, cam.height);
        put(f, cam.fx);
        put(f, cam.fy);
        put(f, cam.cx);
        put(f, cam.cy);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) put(f, cam.rot_w2c(r, c));
        put_vec3(f, cam.t_w2c);
        put(f, cam.time);
    }
    put_vec3(f, ckpt.background);
    if (!f) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[sizeof(kCkptMagic) - 1];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error(path + ": not a checkpoint file");

    Checkpoint ckpt;
    SceneConfig& sc = ckpt.scene.config;
    sc.n_control_points = get<int32_t>(f);
    sc.neighbor_count = get<int32_t>(f);
    sc.background = get_vec3(f);
    sc.sh_degree = get<int32_t>(f);
    sc.seed = get<uint64_t>(f);

    const uint64_t n_surfels = get<uint64_t>(f);
    if (n_surfels > (1ull << 32)) throw std::runtime_error(path + ": implausible surfel count");
    ckpt.scene.surfels.resize(n_surfels);
    for (Surfel& s : ckpt.scene.surfels) {
        s.center = get_vec3(f);
        s.rot_raw.w = get<double>(f);
        s.rot_raw.x = get<double>(f);
        s.rot_raw.y = get<double>(f);
        s.rot_raw.z = get<double>(f);
        s.log_scales[0] = get<double>(f);
        s.log_scales[1] = get<double>(f);
        s.opacity_logit = get<double>(f);
        const uint32_t sh_len = get<uint32_t>(f);
        if (sh_len > 48) throw std::runtime_error(path + ": implausible SH size");
        s.sh.resize(sh_len);
        f.read(reinterpret_cast<char*>(s.sh.data()), std::streamsize(sh_len * 8));
    }

    const uint64_t n_controls = get<uint64_t>(f);
    if (n_controls > (1ull << 32)) throw std::runtime_error(path + ": implausible control count");
    ckpt.scene.controls.points.resize(n_controls);
    for (ControlPoint& p : ckpt.scene.controls.points) {
        p.position = get_vec3(f);
        p.log_radius = get<double>(f);
    }

    FieldConfig fc;
    fc.hidden_width = get<int32_t>(f);
    fc.hidden_layers = get<int32_t>(f);
    fc.pe_position = get<int32_t>(f);
    fc.pe_time = get<int32_t>(f);
    fc.activation = Activation(get<int32_t>(f));
    fc.seed = get<uint64_t>(f);
    ckpt.field = DeformationField(fc);
    const uint32_t n_layers = get<uint32_t>(f);
    if (n_layers != ckpt.field.layers().size())
        throw std::runtime_error(path + ": layer count mismatch");
    for (Linear& l : ckpt.field.layers()) {
        const int32_t in = get<int32_t>(f), out = get<int32_t>(f);
        if (in != l.in || out != l.out) throw std::runtime_error(path + ": layer shape mismatch");
        f.read(reinterpret_cast<char*>(l.weight.data()), std::streamsize(l.weight.size() * 8));
        f.read(reinterpret_cast<char*>(l.bias.data()), std::streamsize(l.bias.size() * 8));
    }

    const uint64_t n_cams = get<uint64_t>(f);
    if (n_cams > (1ull << 24)) throw std::runtime_error(path + ": implausible camera count");
    ckpt.cameras.resize(n_cams);
    for (CameraView& cam : ckpt.cameras) {
        cam.width = get<int32_t>(f);
        cam.height = get<int32_t>(f);
        cam.fx = get<double>(f);
        cam.fy = get<double>(f);
        cam.cx = get<double>(f);
        cam.cy = get<double>(f);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) cam.rot_w2c(r, c) = get<double>(f);
        cam.t_w2c = get_vec3(f);
        cam.time = get<double>(f);
    }
    ckpt.background = get_vec3(f);
    if (!f) throw std::runtime_error(path + ": truncated checkpoint");
    return ckpt;
}

}  // namespace d2dgs
