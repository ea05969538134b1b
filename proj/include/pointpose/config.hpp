#pragma once

#include <string>
#include <vector>

#include "pointpose/dataset.hpp"
#include "pointpose/net.hpp"
#include "pointpose/pose.hpp"
#include "pointpose/render.hpp"

namespace pointpose::config {

// Thrown on malformed configs / missing inputs; the CLI maps it to exit 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Checkpoint/dataset incompatibilities; exit 3.
struct CompatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ObjectSpec {
    int id = 0;
    std::string mesh_path;
    bool symmetric = false;
};

// One JSON document fully determines a run: a preset (desk|paper) expands
// defaults, explicit keys override, unknown keys are rejected.
struct RunConfig {
    std::string preset = "desk";
    uint64_t seed = 1;
    std::string out;
    std::vector<ObjectSpec> objects;
    int target_object = 0;

    render::CameraIntrinsics camera;
    // Scene recipe fields (meshes are attached by the caller).
    double camera_distance_min = 650.0, camera_distance_max = 1100.0;
    double camera_elevation_min_deg = 25.0, camera_elevation_max_deg = 65.0;
    double light_intensity_min = 0.5, light_intensity_max = 1.0;
    double light_ambient_min = 0.15, light_ambient_max = 0.35;
    double ground_extent = 600.0, placement_extent = 240.0, hover_max = 12.0;

    dataset::AugmentConfig augment;
    net::NetworkConfig network;   // m filled from feature selection
    net::TrainConfig train;
    pose::PipelineConfig pipeline;

    int64_t dataset_target = 4000;
    int64_t genscenes_count = 300;

    const ObjectSpec& target_spec() const;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config(const std::string& json_text, const std::string& origin);

}  // namespace pointpose::config

namespace pointpose::cli {

// Entry point shared by the binary and in-process tests.
int run(const std::vector<std::string>& args);

}  // namespace pointpose::cli
