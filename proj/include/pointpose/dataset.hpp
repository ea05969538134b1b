#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pointpose/geom.hpp"
#include "pointpose/model.hpp"
#include "pointpose/render.hpp"

namespace pointpose::dataset {

using geom::PointCloud;
using geom::Vec3;

// Fixed-size network input: a candidate sphere re-centered at its center.
struct CandidateCloud {
    PointCloud cloud;              // exactly target_size points, positions re-centered
    Vec3 center = Vec3::Zero();    // sphere center, camera frame
    std::vector<int> dup_map;      // slot -> index in the pre-duplication set
    std::vector<int> scene_index;  // pre-duplication set -> index in the source cloud
    bool low_density = false;      // padded although the model is >= 120mm

    int size() const { return static_cast<int>(cloud.size()); }
};

struct TrainSample {
    CandidateCloud cloud;
    uint8_t label = 0;              // object present at the sphere center
    std::vector<uint8_t> seg;       // per slot, {0,1}
    std::vector<int32_t> feat;      // per slot, [-1, m)
    bool background_removed = false;
};

struct AugmentConfig {
    double value_sigma = 0.06;      // on all 9 values
    double color_shift_sigma = 0.03;  // one shared RGB shift per cloud
    double position_sigma = 3.0;    // mm
    double position_clip = 8.0;     // mm
    double max_rotation_deg = 15.0;
    bool enabled = true;

    void check() const;
};

// Radius search at 0.6 * diagonal around `center`, subsampled or cyclically
// duplicated to exactly `target_size` points, positions re-centered.
// Duplication is the normal path only below 120mm max extent; larger models
// are still padded but flagged low-density.
CandidateCloud extract_candidate(const PointCloud& scene, const geom::NeighborIndex& index,
                                 const Vec3& center, double model_diagonal,
                                 double model_max_extent, int target_size, uint64_t seed);

// Seven spheres per frame: 4 positives on the object (2 with background
// stripped before fill), 2 negatives >40mm from the object, 1 hard negative
// 20..40mm from it. Labels [1,1,1,1,0,0,0].
std::vector<TrainSample> make_train_samples(const render::RenderedFrame& frame, int object_id,
                                            const model::FeaturePointSet& features,
                                            double model_diagonal, double model_max_extent,
                                            int target_size, uint64_t seed);

// In order: value noise on all 9 fields, shared RGB shift, clipped XYZ
// noise, bounded random rotation about the cloud centroid. Labels unchanged,
// colors re-clamped to [0,1]. Normals are intentionally left denormalized.
TrainSample augment(const TrainSample& sample, const AugmentConfig& cfg, uint64_t seed);

struct DatasetManifest {
    int object_id = 0;
    int m = 0;             // feature count
    int n_points = 0;      // points per sample
    int64_t count = 0;
    std::vector<uint64_t> scene_seeds;
    AugmentConfig augment;
};

// Generates scenes from the recipe and extracts samples until target_count,
// one binary record per sample plus a JSON manifest.
DatasetManifest build_dataset(const render::SceneRecipe& recipe, int object_id,
                              const model::FeaturePointSet& features, double model_diagonal,
                              double model_max_extent, int target_size, int64_t target_count,
                              uint64_t seed, const std::string& out_dir);

void save_manifest(const std::string& dir, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& dir);

void save_sample(const std::string& path, const TrainSample& s, int object_id, uint64_t seed);
TrainSample load_sample(const std::string& path);
// Paths of all records in a dataset dir, in manifest order.
std::vector<std::string> list_samples(const std::string& dir, int64_t count);

}  // namespace pointpose::dataset
