#pragma once

#include <string>
#include <vector>

#include "d2dgs/deform.hpp"
#include "d2dgs/meshing.hpp"
#include "d2dgs/training.hpp"

namespace d2dgs {

// 8-bit PNG codec. Gray and palette images expand to RGB; an alpha channel is
// composited over white at load. Values are in [0, 1].
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);  // 1 or 3 channels

// Raw float map: "FMAP" magic, u32 width/height/channels, float32 row-major,
// all little-endian. Used for depth/normal/alpha outputs.
Image read_fmap(const std::string& path);
void write_fmap(const std::string& path, const Image& img);

struct DatasetFrame {
    CameraView camera;
    std::string image_path;  // resolved relative to the dataset directory
};

struct Dataset {
    std::vector<DatasetFrame> frames;
    Vec3 background = Vec3::Ones();
    std::string split = "train";
    double bounds_hint = 1.0;  // rough scene radius around the origin
};

// NeRF-synthetic convention: transforms_<split>.json with camera_angle_x and
// per-frame transform_matrix (camera-to-world, OpenGL axes), time, file_path.
Dataset load_nerf_synthetic(const std::string& dir, const std::string& split = "train");

// Reads every referenced image (in parallel) and pairs it with its camera.
std::vector<TrainFrame> load_frames(const Dataset& dataset);

struct SynthParams {
    int views = 20;
    int timestamps = 10;  // only time-varying kinds use more than one
    int image_size = 64;
    int surfels = 400;
    Vec3 velocity = Vec3(0.25, 0.1, 0.0);  // world displacement over t in [0,1]
    uint64_t seed = 0;
};

// Builds an analytic scene of the given kind ("sphere", "disc",
// "floater-scene", "translating-disc"), renders it, and writes a complete
// dataset directory: transforms_{train,test}.json, PNG images, and
// ground_truth.json with per-timestamp point sets and centroids. Returns the
// train dataset.
Dataset generate_synthetic(const std::string& kind, const std::string& out_dir,
                           const SynthParams& params = {});

struct GroundTruth {
    std::string kind;
    Vec3 velocity = Vec3::Zero();
    std::vector<double> times;
    std::vector<Vec3> centroids;              // one per timestamp
    std::vector<std::vector<Vec3>> points;    // one set per timestamp
};

GroundTruth load_ground_truth(const std::string& path);

struct PipelineConfig {
    SceneConfig scene;
    FieldConfig field;
    TrainConfig train;
    MeshingConfig meshing;
    std::string data_dir;
    std::string output_dir = "out";
    int init_points = 2000;  // random-cube initialization budget
    uint64_t seed = 0;
};

PipelineConfig load_pipeline_config(const std::string& path);
void save_pipeline_config(const std::string& path, const PipelineConfig& cfg);

struct Checkpoint {
    SceneModel scene;
    DeformationField field;
    std::vector<CameraView> cameras;  // training cameras, kept for render/mesh
    Vec3 background = Vec3::Ones();
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace d2dgs
