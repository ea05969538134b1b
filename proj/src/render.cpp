#include "pointpose/render.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "pointpose/png_io.hpp"
#include "pointpose/util.hpp"

namespace pointpose::render {

namespace {

constexpr double kNearPlane = 50.0;  // mm

struct ClipVertex {
    Vec3 cam;     // camera-space position
    Vec3 normal;  // camera-space normal
    Vec3 color;
    Vec3 local;   // model-space position (for feature lookup)
};

ClipVertex lerp(const ClipVertex& a, const ClipVertex& b, double t) {
    ClipVertex v;
    v.cam = a.cam + t * (b.cam - a.cam);
    v.normal = a.normal + t * (b.normal - a.normal);
    v.color = a.color + t * (b.color - a.color);
    v.local = a.local + t * (b.local - a.local);
    return v;
}

// Sutherland-Hodgman against z = near.
int clip_near(const ClipVertex in[3], ClipVertex out[4]) {
    int n = 0;
    for (int i = 0; i < 3; ++i) {
        const ClipVertex& a = in[i];
        const ClipVertex& b = in[(i + 1) % 3];
        bool ain = a.cam.z() >= kNearPlane, bin = b.cam.z() >= kNearPlane;
        if (ain) out[n++] = a;
        if (ain != bin) {
            double t = (kNearPlane - a.cam.z()) / (b.cam.z() - a.cam.z());
            out[n++] = lerp(a, b, t);
        }
    }
    return n;
}

void raster_triangle(RenderedFrame& f, std::vector<Vec3>& local_pos,
                     std::vector<const model::FeaturePointSet*>& px_features,
                     const ClipVertex& v0, const ClipVertex& v1, const ClipVertex& v2, int id,
                     const model::FeaturePointSet* features, const Light& light) {
    const auto& cam = f.camera;
    // Project to continuous pixel coordinates.
    auto project = [&](const ClipVertex& v) {
        return Eigen::Vector2d(cam.fx * v.cam.x() / v.cam.z() + cam.cx,
                               cam.fy * v.cam.y() / v.cam.z() + cam.cy);
    };
    Eigen::Vector2d p0 = project(v0), p1 = project(v1), p2 = project(v2);
    double area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
    if (std::abs(area) < 1e-12) return;

    int min_x = std::max(0, static_cast<int>(std::floor(std::min({p0.x(), p1.x(), p2.x()}))));
    int max_x = std::min(cam.width - 1, static_cast<int>(std::ceil(std::max({p0.x(), p1.x(), p2.x()}))));
    int min_y = std::max(0, static_cast<int>(std::floor(std::min({p0.y(), p1.y(), p2.y()}))));
    int max_y = std::min(cam.height - 1, static_cast<int>(std::ceil(std::max({p0.y(), p1.y(), p2.y()}))));
    if (min_x > max_x || min_y > max_y) return;

    double iz0 = 1.0 / v0.cam.z(), iz1 = 1.0 / v1.cam.z(), iz2 = 1.0 / v2.cam.z();
    double inv_area = 1.0 / area;

    for (int y = min_y; y <= max_y; ++y) {
        for (int x = min_x; x <= max_x; ++x) {
            double px = x, py = y;
            double w0 = (p1.x() - px) * (p2.y() - py) - (p2.x() - px) * (p1.y() - py);
            double w1 = (p2.x() - px) * (p0.y() - py) - (p0.x() - px) * (p2.y() - py);
            double w2 = (p0.x() - px) * (p1.y() - py) - (p1.x() - px) * (p0.y() - py);
            w0 *= inv_area;
            w1 *= inv_area;
            w2 *= inv_area;
            if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
            // Perspective-correct interpolation via 1/z.
            double iz = w0 * iz0 + w1 * iz1 + w2 * iz2;
            double z = 1.0 / iz;
            size_t pix = static_cast<size_t>(y) * cam.width + x;
            double old = f.depth[pix];
            if (old > 0.0 && old <= z) continue;

            double a0 = w0 * iz0 * z, a1 = w1 * iz1 * z, a2 = w2 * iz2 * z;
            Vec3 n = a0 * v0.normal + a1 * v1.normal + a2 * v2.normal;
            Vec3 albedo = a0 * v0.color + a1 * v1.color + a2 * v2.color;
            Vec3 pos = a0 * v0.cam + a1 * v1.cam + a2 * v2.cam;
            double nl = n.norm();
            n = nl > 1e-12 ? Vec3(n / nl) : Vec3(0, 0, -1);
            if (n.dot(pos) > 0.0) n = -n;  // face the camera
            double diff = std::max(0.0, n.dot(light.direction));
            Vec3 shade = albedo * (diff * light.intensity + light.ambient);

            f.depth[pix] = z;
            f.instance[pix] = id;
            for (int c = 0; c < 3; ++c)
                f.color[pix * 3 + c] = static_cast<float>(std::clamp(shade[c], 0.0, 1.0));
            local_pos[pix] = a0 * v0.local + a1 * v1.local + a2 * v2.local;
            px_features[pix] = features;
        }
    }
}

}  // namespace

RenderedFrame rasterize(const std::vector<SceneObject>& objects, const CameraIntrinsics& camera,
                        const Pose& camera_pose, const Light& light) {
    if (objects.empty()) throw std::invalid_argument("rasterize: no objects");
    RenderedFrame f;
    f.camera = camera;
    size_t n = static_cast<size_t>(camera.width) * camera.height;
    f.depth.assign(n, 0.0);
    f.color.assign(n * 3, 0.0f);
    f.instance.assign(n, -1);
    f.feature.assign(n, -1);
    f.camera_pose = camera_pose;

    std::vector<Vec3> local_pos(n, Vec3::Zero());
    std::vector<const model::FeaturePointSet*> px_features(n, nullptr);

    Vec3 light_cam = camera_pose.rotation * light.direction;
    Light cam_light{light_cam.normalized(), light.intensity, light.ambient};

    for (const auto& obj : objects) {
        if (!obj.mesh) throw std::invalid_argument("rasterize: null mesh");
        Pose cam_obj = camera_pose.compose(obj.world_pose);
        if (obj.id >= 0) f.object_poses[obj.id] = cam_obj;
        const auto& mesh = *obj.mesh;
        for (const auto& tri : mesh.triangles) {
            ClipVertex cv[3];
            bool any_front = false;
            for (int j = 0; j < 3; ++j) {
                const Vec3& v = mesh.vertices[tri[j]];
                cv[j].local = v;
                cv[j].cam = cam_obj.apply(v);
                cv[j].normal = cam_obj.rotation * mesh.normals[tri[j]];
                cv[j].color = mesh.colors[tri[j]];
                any_front |= cv[j].cam.z() >= kNearPlane;
            }
            if (!any_front) continue;
            ClipVertex clipped[4];
            int nc = clip_near(cv, clipped);
            for (int j = 2; j < nc; ++j)
                raster_triangle(f, local_pos, px_features, clipped[0], clipped[j - 1], clipped[j],
                                obj.id, obj.features, cam_light);
        }
    }

    // Deferred nearest-feature labels from the model-space hit points.
    for (size_t pix = 0; pix < n; ++pix) {
        const model::FeaturePointSet* fs = px_features[pix];
        if (!fs || fs->points.empty()) continue;
        const Vec3& p = local_pos[pix];
        int best = 0;
        double best_d = (fs->points[0].position - p).squaredNorm();
        for (int i = 1; i < fs->count(); ++i) {
            double d = (fs->points[i].position - p).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        f.feature[pix] = best;
    }
    return f;
}

geom::PointCloud backproject(const RenderedFrame& frame, const CameraIntrinsics& camera,
                             int annotate_id) {
    const int w = camera.width, h = camera.height;
    geom::PointCloud cloud;
    std::vector<int64_t> pix_of;
    pix_of.reserve(frame.depth.size());

    auto pos_at = [&](int u, int v) {
        double z = frame.depth[static_cast<size_t>(v) * w + u];
        return Vec3((u - camera.cx) * z / camera.fx, (v - camera.cy) * z / camera.fy, z);
    };

    for (int v = 0; v < h; ++v) {
        for (int u = 0; u < w; ++u) {
            size_t pix = static_cast<size_t>(v) * w + u;
            double z = frame.depth[pix];
            if (z <= 0.0) continue;
            geom::Point9D p;
            p.position = pos_at(u, v);
            // Depth-gradient normals: central differences where neighbors
            // are valid and not across a depth discontinuity.
            auto valid = [&](int uu, int vv) {
                if (uu < 0 || uu >= w || vv < 0 || vv >= h) return false;
                double dz = frame.depth[static_cast<size_t>(vv) * w + uu];
                return dz > 0.0 && std::abs(dz - z) < 25.0;
            };
            Vec3 du = Vec3::Zero(), dv = Vec3::Zero();
            if (valid(u - 1, v) && valid(u + 1, v)) du = pos_at(u + 1, v) - pos_at(u - 1, v);
            else if (valid(u + 1, v)) du = pos_at(u + 1, v) - p.position;
            else if (valid(u - 1, v)) du = p.position - pos_at(u - 1, v);
            if (valid(u, v - 1) && valid(u, v + 1)) dv = pos_at(u, v + 1) - pos_at(u, v - 1);
            else if (valid(u, v + 1)) dv = pos_at(u, v + 1) - p.position;
            else if (valid(u, v - 1)) dv = p.position - pos_at(u, v - 1);
            Vec3 nrm = du.cross(dv);
            double l = nrm.norm();
            if (l > 1e-12) {
                nrm /= l;
                if (nrm.dot(p.position) > 0.0) nrm = -nrm;  // toward the camera
            } else {
                nrm = Vec3(0, 0, -1);
            }
            p.normal = nrm;
            p.color = Vec3(frame.color[pix * 3], frame.color[pix * 3 + 1], frame.color[pix * 3 + 2]);
            cloud.points.push_back(p);
            pix_of.push_back(static_cast<int64_t>(pix));
        }
    }

    if (annotate_id >= 0) {
        cloud.seg.resize(cloud.size());
        cloud.feat.resize(cloud.size());
        for (size_t i = 0; i < cloud.size(); ++i) {
            size_t pix = static_cast<size_t>(pix_of[i]);
            bool on = frame.instance[pix] == annotate_id;
            cloud.seg[i] = on ? 1 : 0;
            cloud.feat[i] = on ? frame.feature[pix] : -1;
        }
    }
    return cloud;
}

RenderedFrame generate_scene(const SceneRecipe& recipe, uint64_t seed) {
    if (recipe.objects.empty()) throw std::invalid_argument("generate_scene: recipe has no objects");
    for (const auto& o : recipe.objects) {
        if (!o.mesh) throw std::invalid_argument("generate_scene: recipe object without mesh");
        if (!o.features || o.features->points.empty())
            throw std::invalid_argument("generate_scene: recipe object without feature set");
        if (o.id < 0) throw std::invalid_argument("generate_scene: recipe object id must be >= 0");
    }
    Rng rng(derive_seed(recipe.seed, seed));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    // Ground plane, id -1 so its pixels read as background.
    model::TriangleMesh plane;
    {
        double e = recipe.ground_extent;
        double g = 0.35 + 0.4 * uni(rng);
        Vec3 c(g, g * (0.9 + 0.2 * uni(rng)), g * (0.9 + 0.2 * uni(rng)));
        plane.vertices = {{-e, -e, 0}, {e, -e, 0}, {e, e, 0}, {-e, e, 0}};
        plane.triangles = {{0, 1, 2}, {0, 2, 3}};
        plane.normals.assign(4, Vec3::UnitZ());
        plane.colors.assign(4, c.cwiseMin(1.0));
    }

    struct Placed {
        Vec3 center;
        double radius;
    };
    std::vector<Placed> placed;
    std::vector<SceneObject> scene;
    scene.push_back({&plane, Pose::identity(), -1, nullptr});

    std::vector<int> skipped;
    for (const auto& obj : recipe.objects) {
        Vec3 lo = obj.mesh->aabb_min(), hi = obj.mesh->aabb_max();
        Vec3 mid = 0.5 * (lo + hi);
        double radius = 0.5 * (hi - lo).norm();
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
            geom::Mat3 rot = geom::random_rotation(rng());
            double px = (2.0 * uni(rng) - 1.0) * recipe.placement_extent;
            double py = (2.0 * uni(rng) - 1.0) * recipe.placement_extent;
            // Drop to the plane: rotated AABB min z rests at a small hover.
            double min_z = std::numeric_limits<double>::max();
            for (int cx = 0; cx < 2; ++cx)
                for (int cy = 0; cy < 2; ++cy)
                    for (int cz = 0; cz < 2; ++cz) {
                        Vec3 corner(cx ? hi.x() : lo.x(), cy ? hi.y() : lo.y(), cz ? hi.z() : lo.z());
                        min_z = std::min(min_z, (rot * corner).z());
                    }
            double pz = -min_z + recipe.hover_max * uni(rng);
            Pose pose{rot, Vec3(px, py, pz)};
            Vec3 center = pose.apply(mid);
            bool clash = false;
            for (const auto& pl : placed)
                if ((pl.center - center).norm() < pl.radius + radius) {
                    clash = true;
                    break;
                }
            if (clash) continue;
            placed.push_back({center, radius});
            scene.push_back({obj.mesh, pose, obj.id, obj.features});
            ok = true;
        }
        if (!ok) {
            skipped.push_back(obj.id);
            log_info("generate_scene: placement failed for object " + std::to_string(obj.id));
        }
    }

    // Camera on the upper hemisphere looking at the placement area center.
    Vec3 target(0, 0, 40.0);
    double az = 2.0 * M_PI * uni(rng);
    double el_lo = recipe.camera_elevation_min_deg * M_PI / 180.0;
    double el_hi = recipe.camera_elevation_max_deg * M_PI / 180.0;
    double el = el_lo + (el_hi - el_lo) * uni(rng);
    double dist = recipe.camera_distance_min +
                  (recipe.camera_distance_max - recipe.camera_distance_min) * uni(rng);
    Vec3 eye = target + dist * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                    std::sin(el));
    Vec3 fwd = (target - eye).normalized();
    Vec3 right = fwd.cross(Vec3::UnitZ()).normalized();
    Vec3 down = fwd.cross(right).normalized();
    geom::Mat3 rot;
    rot.row(0) = right;
    rot.row(1) = down;
    rot.row(2) = fwd;
    Pose cam_pose{rot, -(rot * eye)};

    Light light;
    {
        double laz = 2.0 * M_PI * uni(rng);
        double lel = (20.0 + 60.0 * uni(rng)) * M_PI / 180.0;
        light.direction = Vec3(std::cos(lel) * std::cos(laz), std::cos(lel) * std::sin(laz),
                               std::sin(lel));
        light.intensity = recipe.light_intensity_min +
                          (recipe.light_intensity_max - recipe.light_intensity_min) * uni(rng);
        light.ambient = recipe.light_ambient_min +
                        (recipe.light_ambient_max - recipe.light_ambient_min) * uni(rng);
    }

    RenderedFrame f = rasterize(scene, recipe.camera, cam_pose, light);
    f.skipped = std::move(skipped);
    return f;
}

double verify_pose(const Pose& pose, const model::TriangleMesh& mesh,
                   const std::vector<double>& observed_depth, const CameraIntrinsics& camera,
                   double threshold_mm) {
    if (observed_depth.size() != static_cast<size_t>(camera.width) * camera.height)
        throw std::invalid_argument("verify_pose: depth size mismatch");
    std::vector<SceneObject> objs{{&mesh, pose, 0, nullptr}};
    RenderedFrame r = rasterize(objs, camera, Pose::identity(), Light{});
    int64_t evaluable = 0, matched = 0;
    for (size_t pix = 0; pix < r.depth.size(); ++pix) {
        double rend = r.depth[pix];
        if (rend <= 0.0) continue;
        double obs = observed_depth[pix];
        if (obs > 0.0 && obs < rend - threshold_mm) continue;  // occluded: excluded
        ++evaluable;
        if (obs > 0.0 && std::abs(rend - obs) <= threshold_mm) ++matched;
    }
    if (evaluable == 0) return 0.0;
    return static_cast<double>(matched) / static_cast<double>(evaluable);
}

// ---------------------------------------------------------------------------
// Frame persistence

namespace fs = std::filesystem;
using nlohmann::json;

void save_frame(const std::string& dir, const RenderedFrame& frame) {
    fs::create_directories(dir);
    const auto& cam = frame.camera;
    size_t n = frame.pixel_count();

    std::vector<uint16_t> depth16(n);
    for (size_t i = 0; i < n; ++i) {
        double d = frame.depth[i] * 10.0;  // 0.1mm units
        depth16[i] = static_cast<uint16_t>(std::clamp(std::llround(d), 0ll, 65535ll));
    }
    io::save_png_gray16(dir + "/depth.png", cam.width, cam.height, depth16);

    std::vector<uint8_t> rgb(n * 3);
    for (size_t i = 0; i < n * 3; ++i)
        rgb[i] = static_cast<uint8_t>(std::lround(std::clamp(frame.color[i], 0.0f, 1.0f) * 255.0f));
    io::save_png_rgb8(dir + "/color.png", cam.width, cam.height, rgb);

    std::vector<uint16_t> inst(n), feat(n);
    for (size_t i = 0; i < n; ++i) {
        inst[i] = static_cast<uint16_t>(frame.instance[i] + 1);  // 0 = background
        feat[i] = static_cast<uint16_t>(frame.feature[i] + 1);   // 0 = none
    }
    io::save_png_gray16(dir + "/instance.png", cam.width, cam.height, inst);
    io::save_png_gray16(dir + "/feature.png", cam.width, cam.height, feat);

    json j;
    j["camera"] = {{"fx", cam.fx}, {"fy", cam.fy}, {"cx", cam.cx}, {"cy", cam.cy},
                   {"width", cam.width}, {"height", cam.height}};
    json objs = json::array();
    for (const auto& [id, pose] : frame.object_poses) {
        json o;
        o["id"] = id;
        json r = json::array();
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) r.push_back(pose.rotation(i, k));
        o["R"] = r;
        o["t"] = {pose.translation.x(), pose.translation.y(), pose.translation.z()};
        objs.push_back(o);
    }
    j["objects"] = objs;
    j["skipped"] = frame.skipped;
    std::ofstream out(dir + "/meta.json");
    if (!out) throw std::runtime_error("cannot write " + dir + "/meta.json");
    out << j.dump(2) << "\n";
}

RenderedFrame load_frame(const std::string& dir) {
    RenderedFrame f;
    std::ifstream in(dir + "/meta.json");
    if (!in) throw std::runtime_error("cannot open " + dir + "/meta.json");
    json j;
    in >> j;
    const auto& c = j.at("camera");
    f.camera.fx = c.at("fx");
    f.camera.fy = c.at("fy");
    f.camera.cx = c.at("cx");
    f.camera.cy = c.at("cy");
    f.camera.width = c.at("width");
    f.camera.height = c.at("height");
    for (const auto& o : j.at("objects")) {
        geom::Mat3 r;
        const auto& rv = o.at("R");
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) r(i, k) = rv.at(i * 3 + k);
        const auto& tv = o.at("t");
        f.object_poses[o.at("id")] = Pose{r, Vec3(tv.at(0), tv.at(1), tv.at(2))};
    }
    if (j.contains("skipped")) f.skipped = j.at("skipped").get<std::vector<int>>();

    int w = 0, h = 0;
    auto depth16 = io::load_png_gray16(dir + "/depth.png", w, h);
    if (w != f.camera.width || h != f.camera.height)
        throw std::runtime_error(dir + ": depth image size mismatch");
    size_t n = static_cast<size_t>(w) * h;
    f.depth.resize(n);
    for (size_t i = 0; i < n; ++i) f.depth[i] = depth16[i] * 0.1;

    auto rgb = io::load_png_rgb8(dir + "/color.png", w, h);
    f.color.resize(n * 3);
    for (size_t i = 0; i < n * 3; ++i) f.color[i] = rgb[i] / 255.0f;

    auto inst = io::load_png_gray16(dir + "/instance.png", w, h);
    auto feat = io::load_png_gray16(dir + "/feature.png", w, h);
    f.instance.resize(n);
    f.feature.resize(n);
    for (size_t i = 0; i < n; ++i) {
        f.instance[i] = static_cast<int32_t>(inst[i]) - 1;
        f.feature[i] = static_cast<int32_t>(feat[i]) - 1;
    }
    return f;
}

}  // namespace pointpose::render
