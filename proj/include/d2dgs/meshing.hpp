#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "d2dgs/deform.hpp"
#include "d2dgs/image.hpp"
#include "d2dgs/renderer.hpp"

namespace d2dgs {

struct ForegroundMask {
    int width = 0, height = 0;
    std::vector<uint8_t> values;  // row-major, 1 = foreground

    ForegroundMask() = default;
    ForegroundMask(int h, int w, uint8_t fill = 0)
        : width(w), height(h), values(size_t(h) * w, fill) {}

    uint8_t at(int y, int x) const { return values[size_t(y) * width + x]; }
    uint8_t& at(int y, int x) { return values[size_t(y) * width + x]; }
    size_t count() const;
};

// 1 where the color differs from bg in any channel by more than tolerance.
ForegroundMask extract_mask(const Image& rgb, const Vec3& bg, double tolerance = 2.0 / 255.0);

// 1-pixel erosion over the 4-neighborhood (border pixels become 0).
ForegroundMask erode_mask(const ForegroundMask& mask);

// D' = D * M; zero depth is the no-observation sentinel downstream.
Image filter_depth(const Image& depth, const ForegroundMask& mask);

struct TsdfVolume {
    Vec3 origin = Vec3::Zero();  // position of grid node (0,0,0)
    double voxel = 0.01;
    double trunc = 0.04;
    int nx = 0, ny = 0, nz = 0;
    std::vector<double> sdf;
    std::vector<double> weight;
    std::vector<Vec3> color;

    static TsdfVolume create(const Vec3& bb_min, const Vec3& bb_max, int resolution,
                             double trunc_voxels = 4.0);

    size_t index(int ix, int iy, int iz) const { return (size_t(ix) * ny + iy) * nz + iz; }
    Vec3 node(int ix, int iy, int iz) const {
        return origin + voxel * Vec3(double(ix), double(iy), double(iz));
    }
};

// Weight-1 running average fusion of one registered depth (+ optional color) map.
void tsdf_integrate(TsdfVolume& vol, const Image& depth, const Image& rgb,
                    const CameraView& cam);

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Vec3> colors;  // empty or one per vertex
};

// Standard 256-case marching cubes over cells whose 8 corners are all observed.
TriangleMesh marching_cubes(const TsdfVolume& vol, double iso = 0.0);

struct MeshingConfig {
    int resolution = 64;
    double trunc_voxels = 4.0;
    double mask_tolerance = 2.0 / 255.0;
    bool use_median_depth = true;
    bool filter = true;
    bool carve_background = true;  // background pixels vote free space
    bool erode_mask = false;
    double margin = 0.1;  // bounding-box padding fraction
};

TriangleMesh extract_mesh_at(double t, const SceneModel& scene, const DeformationField& field,
                             const std::vector<CameraView>& cameras, const MeshingConfig& cfg,
                             const RenderConfig& render = {});

struct MeshStats {
    size_t components = 0;
    size_t boundary_edges = 0;
    size_t boundary_loops = 0;
    size_t nonmanifold_edges = 0;  // undirected edges shared by > 2 triangles
};

MeshStats mesh_stats(const TriangleMesh& mesh);

void save_obj(const std::string& path, const TriangleMesh& mesh);
void save_ply(const std::string& path, const TriangleMesh& mesh);
TriangleMesh load_obj(const std::string& path);

}  // namespace d2dgs
