#include "pointpose/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "pointpose/util.hpp"

namespace pointpose::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

void AugmentConfig::check() const {
    if (value_sigma < 0 || color_shift_sigma < 0 || position_sigma < 0)
        throw std::invalid_argument("AugmentConfig: sigma must be >= 0");
    if (position_clip < position_sigma)
        throw std::invalid_argument("AugmentConfig: clip must be >= sigma");
    if (max_rotation_deg < 0) throw std::invalid_argument("AugmentConfig: negative rotation bound");
}

CandidateCloud extract_candidate(const PointCloud& scene, const geom::NeighborIndex& index,
                                 const Vec3& center, double model_diagonal,
                                 double model_max_extent, int target_size, uint64_t seed) {
    if (scene.size() == 0) throw std::invalid_argument("extract_candidate: empty scene");
    if (target_size < 1) throw std::invalid_argument("extract_candidate: target_size must be >= 1");
    double radius = 0.6 * model_diagonal;
    std::vector<int> inside = index.radius(center, radius);
    if (inside.empty()) throw std::runtime_error("empty candidate");

    CandidateCloud cand;
    cand.center = center;

    const int n = target_size;
    if (static_cast<int>(inside.size()) > n) {
        Rng rng(seed);
        std::vector<int> chosen;
        chosen.reserve(n);
        std::sample(inside.begin(), inside.end(), std::back_inserter(chosen), n, rng);
        cand.scene_index = std::move(chosen);
        cand.dup_map.resize(n);
        for (int i = 0; i < n; ++i) cand.dup_map[i] = i;
    } else {
        cand.scene_index = std::move(inside);
        int cnt = static_cast<int>(cand.scene_index.size());
        cand.dup_map.resize(n);
        for (int i = 0; i < n; ++i) cand.dup_map[i] = i % cnt;
        if (cnt < n && model_max_extent >= 120.0) cand.low_density = true;
    }

    cand.cloud.points.resize(n);
    bool has_seg = scene.has_seg(), has_feat = scene.has_feat();
    if (has_seg) cand.cloud.seg.resize(n);
    if (has_feat) cand.cloud.feat.resize(n);
    for (int i = 0; i < n; ++i) {
        int src = cand.scene_index[cand.dup_map[i]];
        cand.cloud.points[i] = scene.points[src];
        cand.cloud.points[i].position -= center;
        if (has_seg) cand.cloud.seg[i] = scene.seg[src];
        if (has_feat) cand.cloud.feat[i] = scene.feat[src];
    }
    return cand;
}

namespace {

TrainSample sample_from_candidate(CandidateCloud&& cand, uint8_t label, bool bg_removed) {
    TrainSample s;
    s.label = label;
    s.background_removed = bg_removed;
    s.seg = cand.cloud.seg;
    s.feat = cand.cloud.feat;
    if (s.seg.empty()) s.seg.assign(cand.cloud.size(), 0);
    if (s.feat.empty()) s.feat.assign(cand.cloud.size(), -1);
    cand.cloud.seg.clear();
    cand.cloud.feat.clear();
    s.cloud = std::move(cand);
    return s;
}

}  // namespace

std::vector<TrainSample> make_train_samples(const render::RenderedFrame& frame, int object_id,
                                            const model::FeaturePointSet& features,
                                            double model_diagonal, double model_max_extent,
                                            int target_size, uint64_t seed) {
    (void)features;
    PointCloud scene = render::backproject(frame, frame.camera, object_id);
    std::vector<int> object_pts, background_pts;
    for (size_t i = 0; i < scene.size(); ++i)
        (scene.seg[i] ? object_pts : background_pts).push_back(static_cast<int>(i));
    if (object_pts.empty())
        throw std::runtime_error("make_train_samples: object not visible in frame");

    geom::NeighborIndex scene_index = geom::NeighborIndex::build(scene);

    // Object-only subcloud for the background-removed positives.
    PointCloud object_cloud;
    object_cloud.points.reserve(object_pts.size());
    object_cloud.seg.reserve(object_pts.size());
    object_cloud.feat.reserve(object_pts.size());
    for (int i : object_pts) {
        object_cloud.points.push_back(scene.points[i]);
        object_cloud.seg.push_back(1);
        object_cloud.feat.push_back(scene.feat[i]);
    }
    geom::NeighborIndex object_index = geom::NeighborIndex::build(object_cloud);

    Rng rng(derive_seed(seed, 0x7a11));
    auto pick = [&rng](const std::vector<int>& v) {
        std::uniform_int_distribution<size_t> d(0, v.size() - 1);
        return v[d(rng)];
    };

    // Distance from a background point to the nearest object point.
    auto object_distance = [&](int idx) {
        return object_index.nearest(scene.points[idx].position).second;
    };

    // Draw a background center whose object distance satisfies `accept`;
    // random tries first, exhaustive scan as fallback.
    auto draw_background = [&](auto&& accept) -> int {
        if (background_pts.empty()) return -1;
        for (int t = 0; t < 300; ++t) {
            int idx = pick(background_pts);
            if (accept(object_distance(idx))) return idx;
        }
        std::vector<int> eligible;
        for (int idx : background_pts)
            if (accept(object_distance(idx))) eligible.push_back(idx);
        if (eligible.empty()) return -1;
        return pick(eligible);
    };

    std::vector<TrainSample> out;
    out.reserve(7);

    // 4 positives centered on object surface points; 2 of them (slots 2,3)
    // lose all background points before the fill to target size.
    for (int p = 0; p < 4; ++p) {
        int center_idx = pick(object_pts);
        const Vec3 center = scene.points[center_idx].position;
        bool strip = p >= 2;
        uint64_t cseed = derive_seed(seed, 100 + p);
        CandidateCloud cand =
            strip ? extract_candidate(object_cloud, object_index, center, model_diagonal,
                                      model_max_extent, target_size, cseed)
                  : extract_candidate(scene, scene_index, center, model_diagonal,
                                      model_max_extent, target_size, cseed);
        out.push_back(sample_from_candidate(std::move(cand), 1, strip));
    }

    // 2 plain negatives: background farther than 40mm from the object.
    for (int p = 0; p < 2; ++p) {
        int idx = draw_background([](double d) { return d > 40.0; });
        if (idx < 0) {
            idx = draw_background([](double) { return true; });
            log_info("make_train_samples: no background >40mm, negative relaxed");
        }
        if (idx < 0) {
            log_info("make_train_samples: no background points, negative skipped");
            continue;
        }
        CandidateCloud cand =
            extract_candidate(scene, scene_index, scene.points[idx].position, model_diagonal,
                              model_max_extent, target_size, derive_seed(seed, 200 + p));
        out.push_back(sample_from_candidate(std::move(cand), 0, false));
    }

    // 1 hard negative: background at 20..40mm from the object.
    {
        int idx = draw_background([](double d) { return d >= 20.0 && d <= 40.0; });
        if (idx < 0) {
            idx = draw_background([](double d) { return d > 40.0; });
            if (idx >= 0) log_info("make_train_samples: hard negative replaced by plain negative");
        }
        if (idx < 0) idx = draw_background([](double) { return true; });
        if (idx >= 0) {
            CandidateCloud cand =
                extract_candidate(scene, scene_index, scene.points[idx].position, model_diagonal,
                                  model_max_extent, target_size, derive_seed(seed, 300));
            out.push_back(sample_from_candidate(std::move(cand), 0, false));
        } else {
            log_info("make_train_samples: no background points, hard negative skipped");
        }
    }
    return out;
}

TrainSample augment(const TrainSample& sample, const AugmentConfig& cfg, uint64_t seed) {
    cfg.check();
    TrainSample out = sample;
    if (!cfg.enabled) return out;
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto& pts = out.cloud.cloud.points;

    // (1) value noise on all nine fields of every point
    if (cfg.value_sigma > 0) {
        for (auto& p : pts) {
            for (int d = 0; d < 3; ++d) p.position[d] += cfg.value_sigma * gauss(rng);
            for (int d = 0; d < 3; ++d) p.normal[d] += cfg.value_sigma * gauss(rng);
            for (int d = 0; d < 3; ++d) p.color[d] += cfg.value_sigma * gauss(rng);
        }
    }
    // (2) one shared RGB shift for the whole cloud
    if (cfg.color_shift_sigma > 0) {
        Vec3 shift(cfg.color_shift_sigma * gauss(rng), cfg.color_shift_sigma * gauss(rng),
                   cfg.color_shift_sigma * gauss(rng));
        for (auto& p : pts) p.color += shift;
    }
    // (3) clipped XYZ noise
    if (cfg.position_sigma > 0) {
        for (auto& p : pts)
            for (int d = 0; d < 3; ++d) {
                double dx = cfg.position_sigma * gauss(rng);
                p.position[d] += std::clamp(dx, -cfg.position_clip, cfg.position_clip);
            }
    }
    // (4) bounded rotation about the cloud centroid
    if (cfg.max_rotation_deg > 0 && !pts.empty()) {
        geom::Mat3 rot = geom::random_rotation_bounded(cfg.max_rotation_deg * M_PI / 180.0, rng());
        Vec3 centroid = Vec3::Zero();
        for (const auto& p : pts) centroid += p.position;
        centroid /= static_cast<double>(pts.size());
        for (auto& p : pts) {
            p.position = rot * (p.position - centroid) + centroid;
            p.normal = rot * p.normal;
        }
    }
    for (auto& p : pts) p.color = p.color.cwiseMax(0.0).cwiseMin(1.0);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {
constexpr char kSampleMagic[8] = {'P', 'P', 'S', 'M', 'P', '0', '1', '\0'};

template <typename T>
void wr(std::ostream& o, T v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T rd(std::istream& i) {
    T v;
    i.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
}  // namespace

void save_sample(const std::string& path, const TrainSample& s, int object_id, uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kSampleMagic, 8);
    wr<int32_t>(out, object_id);
    wr<uint64_t>(out, seed);
    int32_t n = s.cloud.size();
    wr<int32_t>(out, n);
    wr<uint8_t>(out, s.label);
    wr<uint8_t>(out, s.background_removed ? 1 : 0);
    wr<uint8_t>(out, s.cloud.low_density ? 1 : 0);
    wr<uint8_t>(out, 0);
    for (int d = 0; d < 3; ++d) wr<double>(out, s.cloud.center[d]);
    for (const auto& p : s.cloud.cloud.points) {
        for (int d = 0; d < 3; ++d) wr<float>(out, static_cast<float>(p.position[d]));
        for (int d = 0; d < 3; ++d) wr<float>(out, static_cast<float>(p.normal[d]));
        for (int d = 0; d < 3; ++d) wr<float>(out, static_cast<float>(p.color[d]));
    }
    out.write(reinterpret_cast<const char*>(s.seg.data()), n);
    for (int32_t v : s.feat) wr<uint16_t>(out, v < 0 ? 0xFFFF : static_cast<uint16_t>(v));
    if (!out) throw std::runtime_error("write failed: " + path);
}

TrainSample load_sample(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (std::memcmp(magic, kSampleMagic, 8) != 0)
        throw std::runtime_error(path + ": bad sample magic");
    rd<int32_t>(in);   // object id (redundant with manifest)
    rd<uint64_t>(in);  // seed
    int32_t n = rd<int32_t>(in);
    TrainSample s;
    s.label = rd<uint8_t>(in);
    s.background_removed = rd<uint8_t>(in) != 0;
    s.cloud.low_density = rd<uint8_t>(in) != 0;
    rd<uint8_t>(in);
    for (int d = 0; d < 3; ++d) s.cloud.center[d] = rd<double>(in);
    s.cloud.cloud.points.resize(n);
    for (auto& p : s.cloud.cloud.points) {
        for (int d = 0; d < 3; ++d) p.position[d] = rd<float>(in);
        for (int d = 0; d < 3; ++d) p.normal[d] = rd<float>(in);
        for (int d = 0; d < 3; ++d) p.color[d] = rd<float>(in);
    }
    s.seg.resize(n);
    in.read(reinterpret_cast<char*>(s.seg.data()), n);
    s.feat.resize(n);
    for (auto& v : s.feat) {
        uint16_t raw = rd<uint16_t>(in);
        v = raw == 0xFFFF ? -1 : raw;
    }
    s.cloud.dup_map.resize(n);
    for (int i = 0; i < n; ++i) s.cloud.dup_map[i] = i;
    if (!in) throw std::runtime_error(path + ": truncated sample");
    return s;
}

void save_manifest(const std::string& dir, const DatasetManifest& m) {
    json j;
    j["object_id"] = m.object_id;
    j["m"] = m.m;
    j["n_points"] = m.n_points;
    j["count"] = m.count;
    j["seeds"] = m.scene_seeds;
    j["augment_config"] = {{"value_sigma", m.augment.value_sigma},
                           {"color_shift_sigma", m.augment.color_shift_sigma},
                           {"position_sigma", m.augment.position_sigma},
                           {"position_clip", m.augment.position_clip},
                           {"max_rotation_deg", m.augment.max_rotation_deg},
                           {"enabled", m.augment.enabled}};
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
    out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw std::runtime_error("cannot open " + dir + "/manifest.json");
    json j;
    in >> j;
    DatasetManifest m;
    m.object_id = j.at("object_id");
    m.m = j.at("m");
    m.n_points = j.at("n_points");
    m.count = j.at("count");
    m.scene_seeds = j.at("seeds").get<std::vector<uint64_t>>();
    const auto& a = j.at("augment_config");
    m.augment.value_sigma = a.at("value_sigma");
    m.augment.color_shift_sigma = a.at("color_shift_sigma");
    m.augment.position_sigma = a.at("position_sigma");
    m.augment.position_clip = a.at("position_clip");
    m.augment.max_rotation_deg = a.at("max_rotation_deg");
    m.augment.enabled = a.at("enabled");
    return m;
}

std::vector<std::string> list_samples(const std::string& dir, int64_t count) {
    std::vector<std::string> paths;
    paths.reserve(count);
    for (int64_t i = 0; i < count; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%08lld.bin", static_cast<long long>(i));
        paths.push_back(dir + "/records/" + buf);
    }
    return paths;
}

DatasetManifest build_dataset(const render::SceneRecipe& recipe, int object_id,
                              const model::FeaturePointSet& features, double model_diagonal,
                              double model_max_extent, int target_size, int64_t target_count,
                              uint64_t seed, const std::string& out_dir) {
    if (target_count < 7) throw std::invalid_argument("build_dataset: target count must be >= 7");
    fs::create_directories(out_dir + "/records");

    DatasetManifest manifest;
    manifest.object_id = object_id;
    manifest.m = features.count();
    manifest.n_points = target_size;

    int64_t written = 0;
    uint64_t scene_idx = 0;
    while (written < target_count) {
        uint64_t scene_seed = derive_seed(seed, scene_idx);
        ++scene_idx;
        render::RenderedFrame frame;
        try {
            frame = render::generate_scene(recipe, scene_seed);
        } catch (const std::exception& e) {
            throw std::runtime_error("build_dataset: scene seed " + std::to_string(scene_seed) +
                                     ": " + e.what());
        }
        if (std::find(frame.skipped.begin(), frame.skipped.end(), object_id) != frame.skipped.end())
            continue;
        bool visible = false;
        for (int32_t v : frame.instance)
            if (v == object_id) {
                visible = true;
                break;
            }
        if (!visible) continue;

        std::vector<TrainSample> samples;
        try {
            samples = make_train_samples(frame, object_id, features, model_diagonal,
                                         model_max_extent, target_size,
                                         derive_seed(scene_seed, 0x5a));
        } catch (const std::exception& e) {
            throw std::runtime_error("build_dataset: scene seed " + std::to_string(scene_seed) +
                                     ": " + e.what());
        }
        manifest.scene_seeds.push_back(scene_seed);
        for (auto& s : samples) {
            if (written >= target_count) break;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%08lld.bin", static_cast<long long>(written));
            save_sample(out_dir + "/records/" + buf, s, object_id, scene_seed);
            ++written;
        }
        if (scene_idx % 50 == 0)
            log_info("build_dataset: " + std::to_string(written) + "/" +
                     std::to_string(target_count) + " samples");
    }
    manifest.count = written;
    save_manifest(out_dir, manifest);
    return manifest;
}

}  // namespace pointpose::dataset
