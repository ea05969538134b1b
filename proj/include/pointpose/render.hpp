#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pointpose/geom.hpp"
#include "pointpose/model.hpp"

namespace pointpose::render {

using geom::Pose;
using geom::Vec3;

struct CameraIntrinsics {
    double fx = 572.0, fy = 572.0;
    double cx = 319.5, cy = 239.5;
    int width = 640, height = 480;

    static CameraIntrinsics default_vga() { return {}; }
};

struct Light {
    Vec3 direction = Vec3(0, 0, -1);  // direction from surface toward the light
    double intensity = 0.8;
    double ambient = 0.2;
};

// One object instance given to the rasterizer. `world_pose` places the model
// in the world frame; `features` may be null for untracked geometry (which
// must then use a negative id so it reads as background).
struct SceneObject {
    const model::TriangleMesh* mesh = nullptr;
    Pose world_pose;
    int id = -1;
    const model::FeaturePointSet* features = nullptr;
};

struct RenderedFrame {
    CameraIntrinsics camera;
    std::vector<double> depth;      // mm, 0 = no hit
    std::vector<float> color;      // 3 floats per pixel, [0,1]
    std::vector<int32_t> instance;  // object id, -1 = background
    std::vector<int32_t> feature;   // nearest feature index, -1 = none
    Pose camera_pose;               // world -> camera
    // Ground-truth object poses expressed in the camera frame.
    std::map<int, Pose> object_poses;
    std::vector<int> skipped;  // ids that failed scene placement

    size_t pixel_count() const { return depth.size(); }
    double& depth_at(int u, int v) { return depth[static_cast<size_t>(v) * camera.width + u]; }
    double depth_at(int u, int v) const { return depth[static_cast<size_t>(v) * camera.width + u]; }
};

// Z-buffered perspective rasterization with Lambertian shading
// max(0,n.l)*intensity + ambient, per-pixel instance ids, and per-pixel
// nearest-feature labels for objects that carry a feature set.
RenderedFrame rasterize(const std::vector<SceneObject>& objects, const CameraIntrinsics& camera,
                        const Pose& camera_pose, const Light& light);

// One Point9D per valid-depth pixel, positions in the camera frame, normals
// from depth gradients re-oriented toward the camera. When annotate_id >= 0
// the cloud carries seg (instance == annotate_id) and feat labels.
geom::PointCloud backproject(const RenderedFrame& frame, const CameraIntrinsics& camera,
                             int annotate_id = -1);

struct RecipeObject {
    int id = 0;
    const model::TriangleMesh* mesh = nullptr;
    const model::FeaturePointSet* features = nullptr;
};

struct SceneRecipe {
    std::vector<RecipeObject> objects;
    CameraIntrinsics camera;
    double camera_distance_min = 650.0, camera_distance_max = 1100.0;  // mm
    double camera_elevation_min_deg = 25.0, camera_elevation_max_deg = 65.0;
    double light_intensity_min = 0.5, light_intensity_max = 1.0;
    double light_ambient_min = 0.15, light_ambient_max = 0.35;
    double ground_extent = 600.0;  // half-size of the ground square, mm
    double placement_extent = 240.0;  // objects land within +-this in x/y
    double hover_max = 12.0;          // resting height above the plane
    uint64_t seed = 0;                // base salt; per-scene seed passed to generate_scene
};

// Objects at non-overlapping random poses on a ground plane, camera on the
// upper hemisphere looking at the scene center, randomized light.
// Deterministic under (recipe.seed, seed).
RenderedFrame generate_scene(const SceneRecipe& recipe, uint64_t seed);

// Renders `mesh` at `pose` and scores depth agreement: occluded pixels
// (observed closer than rendered by >10mm) are excluded, remaining rendered
// pixels match when |rendered - observed| <= 10mm. Returns matched fraction.
double verify_pose(const Pose& pose, const model::TriangleMesh& mesh,
                   const std::vector<double>& observed_depth, const CameraIntrinsics& camera,
                   double threshold_mm = 10.0);

// Frame directory: depth.png (16-bit, 0.1mm), color.png, instance.png and
// feature.png (16-bit, value+1 so 0 = none), meta.json sidecar.
void save_frame(const std::string& dir, const RenderedFrame& frame);
RenderedFrame load_frame(const std::string& dir);

}  // namespace pointpose::render
