#include "d2dgs/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "d2dgs/parallel.hpp"
#include "d2dgs/sh.hpp"

namespace d2dgs {

double gaussian_value(double u, double v) { return std::exp(-0.5 * (u * u + v * v)); }

ViewSurfel make_view_surfel(const Surfel& s, const CameraView& cam, int index) {
    ViewSurfel vs;
    vs.index = index;
    vs.center = cam.world_to_cam(s.center);
    SurfelFrame f = surfel_frame(s);
    vs.tu = cam.rot_w2c * f.t_u;
    vs.tv = cam.rot_w2c * f.t_v;
    vs.tw = cam.rot_w2c * f.t_w;
    Vec2 sc = s.scales();
    vs.su = sc[0];
    vs.sv = sc[1];
    vs.opacity = s.opacity();

    Vec3 dir = s.center - cam.cam_position();
    double n = dir.norm();
    dir = n > 0.0 ? Vec3(dir / n) : Vec3(0.0, 0.0, 1.0);
    int n_basis = s.sh_basis();
    int degree = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_basis)))) - 1;
    double basis[16];
    sh::eval_basis(degree, dir, basis);
    for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.5;
        for (int b = 0; b < n_basis; ++b) acc += s.sh[ch * n_basis + b] * basis[b];
        vs.color[ch] = clamp01(acc);
    }

    vs.normal = (vs.tw.dot(vs.center) > 0.0) ? Vec3(-vs.tw) : vs.tw;
    return vs;
}

std::vector<ViewSurfel> prepare_view_surfels(const std::vector<Surfel>& surfels,
                                             const CameraView& cam) {
    std::vector<ViewSurfel> out(surfels.size());
    parallel_for(surfels.size(), [&](size_t i) {
        out[i] = make_view_surfel(surfels[i], cam, static_cast<int>(i));
    });
    return out;
}

std::optional<Intersection> ray_splat_intersect(const Vec3& dir, const ViewSurfel& s,
                                                double near_plane, double cutoff_sq) {
    double denom = dir.dot(s.tw);
    if (std::abs(denom) < 1e-8) return std::nullopt;
    double tau = s.center.dot(s.tw) / denom;
    double z = tau * dir.z();
    if (z <= near_plane) return std::nullopt;
    Vec3 rel = tau * dir - s.center;
    double u = rel.dot(s.tu) / s.su;
    double v = rel.dot(s.tv) / s.sv;
    double r2 = u * u + v * v;
    if (r2 > cutoff_sq) return std::nullopt;
    Intersection hit;
    hit.surfel = s.index;
    hit.u = u;
    hit.v = v;
    hit.z = z;
    hit.gauss = std::exp(-0.5 * r2);
    hit.a = s.opacity * hit.gauss;
    return hit;
}

std::optional<Intersection> intersect_view_surfel(const ViewSurfel& s, const Vec3& dir,
                                                  double pixel_x, double pixel_y,
                                                  const CameraView& cam,
                                                  const RenderConfig& config) {
    double denom = dir.dot(s.tw);
    if (std::abs(denom) < 1e-8) return std::nullopt;
    double tau = s.center.dot(s.tw) / denom;
    double z = tau * dir.z();
    if (z <= config.near_plane) return std::nullopt;
    Vec3 rel = tau * dir - s.center;
    double u = rel.dot(s.tu) / s.su;
    double v = rel.dot(s.tv) / s.sv;
    double r2 = u * u + v * v;

    // Screen distance from the pixel center to the projected surfel center.
    double rho_sq = std::numeric_limits<double>::infinity();
    if (s.center.z() > config.near_plane) {
        double px = cam.fx * s.center.x() / s.center.z() + cam.cx;
        double py = cam.fy * s.center.y() / s.center.z() + cam.cy;
        double dx = px - (pixel_x + 0.5);
        double dy = py - (pixel_y + 0.5);
        rho_sq = dx * dx + dy * dy;
    }

    bool keep = r2 <= config.cutoff_sq || rho_sq <= config.screen_radius * config.screen_radius;
    if (!keep) return std::nullopt;

    double g_obj = std::exp(-0.5 * r2);
    double g_scr = std::isfinite(rho_sq)
                       ? std::exp(-rho_sq / (2.0 * config.screen_sigma * config.screen_sigma))
                       : 0.0;
    Intersection hit;
    hit.surfel = s.index;
    hit.u = u;
    hit.v = v;
    hit.z = z;
    hit.gauss = std::max(g_obj, g_scr);
    hit.a = s.opacity * hit.gauss;
    return hit;
}

PixelComposite composite_pixel(std::vector<Fragment>& frags, const Vec3& background,
                               const RenderConfig& config) {
    if (config.debug_verify) {
        for (size_t i = 1; i < frags.size(); ++i) {
            const Fragment& p = frags[i - 1];
            const Fragment& q = frags[i];
            if (p.z > q.z || (p.z == q.z && p.surfel >= q.surfel))
                throw std::logic_error("composite_pixel: unsorted input");
        }
    }

    PixelComposite out;
    double T = 1.0;
    double depth_acc = 0.0;
    Vec3 normal_acc = Vec3::Zero();
    bool median_set = false;
    for (Fragment& f : frags) {
        if (T < config.early_stop) {
            f.weight = 0.0;
            continue;
        }
        double w = f.a * T;
        f.weight = w;
        out.color += w * f.color;
        out.alpha += w;
        depth_acc += w * f.z;
        normal_acc += w * f.normal;
        if (!median_set && out.alpha >= 0.5) {
            out.depth_median = f.z;
            median_set = true;
        }
        T *= (1.0 - f.a);
    }
    out.color += T * background;
    out.depth_expected = depth_acc / std::max(out.alpha, 1e-8);
    if (out.alpha > 0.5) {
        double n = normal_acc.norm();
        out.normal = n > 1e-12 ? Vec3(normal_acc / n) : Vec3::Zero();
    }
    return out;
}

namespace {

struct TileGrid {
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> bins;
};

TileGrid bin_surfels(const std::vector<ViewSurfel>& vs, const CameraView& cam,
                     const RenderConfig& cfg) {
    TileGrid g;
    g.tiles_x = (cam.width + cfg.tile_size - 1) / cfg.tile_size;
    g.tiles_y = (cam.height + cfg.tile_size - 1) / cfg.tile_size;
    g.bins.resize(static_cast<size_t>(g.tiles_x) * g.tiles_y);

    for (const ViewSurfel& s : vs) {
        double rho = 3.0 * std::sqrt(s.su * s.su + s.sv * s.sv);
        double zmin = s.center.z() - rho;
        int tx0 = 0, tx1 = g.tiles_x - 1, ty0 = 0, ty1 = g.tiles_y - 1;
        if (zmin > cfg.near_plane) {
            double px = cam.fx * s.center.x() / s.center.z() + cam.cx;
            double py = cam.fy * s.center.y() / s.center.z() + cam.cy;
            double rx = cam.fx * rho / zmin + 2.0;
            double ry = cam.fy * rho / zmin + 2.0;
            double x0 = px - rx, x1 = px + rx;
            double y0 = py - ry, y1 = py + ry;
            if (x1 < 0.0 || y1 < 0.0 || x0 > cam.width || y0 > cam.height) continue;
            tx0 = std::clamp(static_cast<int>(std::floor(x0)) / cfg.tile_size, 0, g.tiles_x - 1);
            tx1 = std::clamp(static_cast<int>(std::floor(x1)) / cfg.tile_size, 0, g.tiles_x - 1);
            ty0 = std::clamp(static_cast<int>(std::floor(y0)) / cfg.tile_size, 0, g.tiles_y - 1);
            ty1 = std::clamp(static_cast<int>(std::floor(y1)) / cfg.tile_size, 0, g.tiles_y - 1);
        }
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                g.bins[static_cast<size_t>(ty) * g.tiles_x + tx].push_back(s.index);
    }
    return g;
}

}  // namespace

RenderTargets render_view(const std::vector<Surfel>& surfels, const CameraView& cam,
                          const RenderConfig& config) {
    cam.validate();
    RenderTargets rt;
    rt.width = cam.width;
    rt.height = cam.height;
    rt.rgb = Image(cam.height, cam.width, 3);
    rt.depth_expected = Image(cam.height, cam.width, 1);
    rt.depth_median = Image(cam.height, cam.width, 1);
    rt.normal = Image(cam.height, cam.width, 3);
    rt.alpha = Image(cam.height, cam.width, 1);
    if (config.keep_records) rt.records.resize(static_cast<size_t>(cam.width) * cam.height);

    std::vector<ViewSurfel> vs = prepare_view_surfels(surfels, cam);

    TileGrid grid;
    std::vector<int> all_ids;
    if (!config.brute_force) {
        grid = bin_surfels(vs, cam, config);
    } else {
        all_ids.resize(vs.size());
        for (size_t i = 0; i < vs.size(); ++i) all_ids[i] = static_cast<int>(i);
        grid.tiles_x = (cam.width + config.tile_size - 1) / config.tile_size;
        grid.tiles_y = (cam.height + config.tile_size - 1) / config.tile_size;
    }

    size_t n_tiles = static_cast<size_t>(grid.tiles_x) * grid.tiles_y;
    parallel_for(n_tiles, [&](size_t tile) {
        int tx = static_cast<int>(tile) % grid.tiles_x;
        int ty = static_cast<int>(tile) / grid.tiles_x;
        const std::vector<int>& candidates = config.brute_force ? all_ids : grid.bins[tile];
        int x0 = tx * config.tile_size, x1 = std::min(cam.width, x0 + config.tile_size);
        int y0 = ty * config.tile_size, y1 = std::min(cam.height, y0 + config.tile_size);
        std::vector<Fragment> frags;
        for (int py = y0; py < y1; ++py) {
            for (int px = x0; px < x1; ++px) {
                Vec3 dir = cam.pixel_ray(px, py);
                frags.clear();
                for (int id : candidates) {
                    const ViewSurfel& s = vs[id];
                    auto hit = intersect_view_surfel(s, dir, px, py, cam, config);
                    if (!hit) continue;
                    Fragment f;
                    f.surfel = id;
                    f.z = hit->z;
                    f.a = hit->a;
                    f.color = s.color;
                    f.normal = s.normal;
                    frags.push_back(f);
                }
                std::sort(frags.begin(), frags.end(), [](const Fragment& a, const Fragment& b) {
                    return a.z != b.z ? a.z < b.z : a.surfel < b.surfel;
                });
                PixelComposite pc = composite_pixel(frags, config.background, config);
                rt.rgb.set_rgb(py, px, pc.color);
                rt.depth_expected.at(py, px, 0) = pc.depth_expected;
                rt.depth_median.at(py, px, 0) = pc.depth_median;
                rt.normal.set_rgb(py, px, pc.normal);
                rt.alpha.at(py, px, 0) = pc.alpha;
                if (config.keep_records)
                    rt.records[static_cast<size_t>(py) * cam.width + px] = frags;
            }
        }
    });
    return rt;
}

}  // namespace d2dgs
