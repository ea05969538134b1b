#include "pointpose/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pointpose/ply_io.hpp"
#include "pointpose/util.hpp"

namespace pointpose::model {

namespace {

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
    return 0.5 * (b - a).cross(c - a).norm();
}

std::string lower_ext(const std::string& path) {
    auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

double TriangleMesh::area() const {
    double a = 0.0;
    for (const auto& t : triangles)
        a += triangle_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
    return a;
}

Vec3 TriangleMesh::aabb_min() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
    for (const auto& v : vertices) lo = lo.cwiseMin(v);
    return lo;
}

Vec3 TriangleMesh::aabb_max() const {
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (const auto& v : vertices) hi = hi.cwiseMax(v);
    return hi;
}

TriangleMesh load_mesh(const std::string& path) {
    std::string ext = lower_ext(path);
    io::MeshData raw;
    try {
        if (ext == "ply") raw = io::load_mesh_ply(path);
        else if (ext == "obj") raw = io::load_mesh_obj(path);
        else throw std::runtime_error("unsupported mesh format ." + ext);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    if (raw.vertices.empty()) throw std::runtime_error(path + ": mesh has no vertices");
    if (raw.triangles.empty()) throw std::runtime_error(path + ": mesh has no triangles");

    TriangleMesh mesh;
    mesh.vertices = std::move(raw.vertices);
    const int nv = static_cast<int>(mesh.vertices.size());
    mesh.triangles.reserve(raw.triangles.size());
    for (const auto& t : raw.triangles) {
        if (t[0] < 0 || t[0] >= nv || t[1] < 0 || t[1] >= nv || t[2] < 0 || t[2] >= nv)
            throw std::runtime_error(path + ": triangle index out of range");
        if (triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]) < 1e-9)
            continue;  // drop degenerate faces
        mesh.triangles.push_back(t);
    }
    if (mesh.triangles.empty()) throw std::runtime_error(path + ": all triangles degenerate");

    if (raw.colors.size() == mesh.vertices.size()) {
        mesh.colors = std::move(raw.colors);
        for (auto& c : mesh.colors)
            c = c.cwiseMax(0.0).cwiseMin(1.0);
    } else {
        mesh.colors.assign(mesh.vertices.size(), Vec3::Constant(0.5));
    }

    if (raw.normals.size() == mesh.vertices.size()) {
        mesh.normals = std::move(raw.normals);
        for (auto& n : mesh.normals) {
            double l = n.norm();
            n = l > 1e-12 ? Vec3(n / l) : Vec3::UnitZ();
        }
    } else {
        // Area-weighted face-normal averaging.
        mesh.normals.assign(mesh.vertices.size(), Vec3::Zero());
        for (const auto& t : mesh.triangles) {
            Vec3 fn = (mesh.vertices[t[1]] - mesh.vertices[t[0]])
                          .cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);  // |fn| = 2*area
            for (int j = 0; j < 3; ++j) mesh.normals[t[j]] += fn;
        }
        for (auto& n : mesh.normals) {
            double l = n.norm();
            n = l > 1e-12 ? Vec3(n / l) : Vec3::UnitZ();
        }
    }
    return mesh;
}

void save_mesh(const std::string& path, const TriangleMesh& mesh) {
    io::MeshData raw;
    raw.vertices = mesh.vertices;
    raw.triangles = mesh.triangles;
    raw.colors = mesh.colors;
    raw.normals = mesh.normals;
    io::save_mesh_ply(path, raw);
}

double diagonal(const TriangleMesh& mesh) {
    return (mesh.aabb_max() - mesh.aabb_min()).norm();
}

double max_extent(const TriangleMesh& mesh) {
    return (mesh.aabb_max() - mesh.aabb_min()).maxCoeff();
}

geom::PointCloud sample_surface(const TriangleMesh& mesh, double density, uint64_t seed) {
    if (density <= 0.0) throw std::invalid_argument("sample_surface: density must be > 0");
    std::vector<double> cum(mesh.triangles.size());
    double total = 0.0;
    for (size_t i = 0; i < mesh.triangles.size(); ++i) {
        const auto& t = mesh.triangles[i];
        total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
        cum[i] = total;
    }
    size_t count = static_cast<size_t>(std::llround(density * total));
    if (count == 0) count = 1;

    Rng rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    geom::PointCloud cloud;
    cloud.points.resize(count);
    for (size_t i = 0; i < count; ++i) {
        double pick = uni(rng) * total;
        size_t ti = std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
        if (ti >= mesh.triangles.size()) ti = mesh.triangles.size() - 1;
        const auto& t = mesh.triangles[ti];
        // Uniform barycentric via the sqrt trick.
        double r1 = std::sqrt(uni(rng)), r2 = uni(rng);
        double w0 = 1.0 - r1, w1 = r1 * (1.0 - r2), w2 = r1 * r2;
        auto& p = cloud.points[i];
        p.position = w0 * mesh.vertices[t[0]] + w1 * mesh.vertices[t[1]] + w2 * mesh.vertices[t[2]];
        Vec3 n = w0 * mesh.normals[t[0]] + w1 * mesh.normals[t[1]] + w2 * mesh.normals[t[2]];
        double l = n.norm();
        p.normal = l > 1e-12 ? Vec3(n / l) : Vec3::UnitZ();
        p.color = w0 * mesh.colors[t[0]] + w1 * mesh.colors[t[1]] + w2 * mesh.colors[t[2]];
        p.color = p.color.cwiseMax(0.0).cwiseMin(1.0);
    }
    return cloud;
}

FeaturePointSet select_feature_points(const TriangleMesh& mesh, uint64_t seed,
                                      double initial_spacing) {
    // Dense pre-sampling: >= 1 point/mm^2 and >= 20k samples for stable
    // voxel occupancy.
    double area = mesh.area();
    double density = std::max(1.0, 20000.0 / std::max(area, 1e-6));
    geom::PointCloud dense = sample_surface(mesh, density, seed);

    double spacing = initial_spacing;
    geom::PointCloud picked = geom::voxel_downsample(dense, spacing);
    while (picked.size() >= 100) {
        spacing *= 1.1;
        picked = geom::voxel_downsample(dense, spacing);
    }

    FeaturePointSet fps;
    fps.points = std::move(picked.points);
    fps.spacing = spacing;
    return fps;
}

void save_feature_points(const std::string& path, const FeaturePointSet& fps) {
    geom::PointCloud cloud;
    cloud.points = fps.points;
    cloud.feat.resize(fps.points.size());
    for (size_t i = 0; i < fps.points.size(); ++i) cloud.feat[i] = static_cast<int32_t>(i);
    // Reuse the cloud PLY writer; the feature id rides in "feat".
    io::save_cloud_ply(path, cloud);
}

FeaturePointSet load_feature_points(const std::string& path) {
    geom::PointCloud cloud = io::load_cloud_ply(path);
    FeaturePointSet fps;
    fps.points = cloud.points;
    fps.spacing = 0.0;
    return fps;
}

double surface_distance(const TriangleMesh& mesh, const Vec3& p) {
    double best = std::numeric_limits<double>::max();
    for (const auto& t : mesh.triangles) {
        const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
        // Closest point on triangle (Ericson).
        Vec3 ab = b - a, ac = c - a, ap = p - a;
        double d1 = ab.dot(ap), d2 = ac.dot(ap);
        Vec3 q;
        if (d1 <= 0.0 && d2 <= 0.0) {
            q = a;
        } else {
            Vec3 bp = p - b;
            double d3 = ab.dot(bp), d4 = ac.dot(bp);
            if (d3 >= 0.0 && d4 <= d3) {
                q = b;
            } else {
                Vec3 cp = p - c;
                double d5 = ab.dot(cp), d6 = ac.dot(cp);
                if (d6 >= 0.0 && d5 <= d6) {
                    q = c;
                } else {
                    double vc = d1 * d4 - d3 * d2;
                    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
                        q = a + ab * (d1 / (d1 - d3));
                    } else {
                        double vb = d5 * d2 - d1 * d6;
                        if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
                            q = a + ac * (d2 / (d2 - d6));
                        } else {
                            double va = d3 * d6 - d5 * d4;
                            if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
                                q = b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
                            } else {
                                double denom = 1.0 / (va + vb + vc);
                                q = a + ab * (vb * denom) + ac * (vc * denom);
                            }
                        }
                    }
                }
            }
        }
        best = std::min(best, (p - q).squaredNorm());
    }
    return std::sqrt(best);
}

}  // namespace pointpose::model
