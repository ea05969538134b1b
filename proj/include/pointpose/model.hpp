#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pointpose/geom.hpp"

namespace pointpose::model {

using geom::Vec3;

struct TriangleMesh {
    std::vector<Vec3> vertices;                 // mm
    std::vector<std::array<int, 3>> triangles;  // indices into vertices
    std::vector<Vec3> colors;                   // per-vertex RGB [0,1]
    std::vector<Vec3> normals;                  // per-vertex unit normals

    double area() const;
    // Axis-aligned bounding-box extents in the model frame.
    Vec3 aabb_min() const;
    Vec3 aabb_max() const;
};

// Voxel-grid-selected surface points that scene points vote for.
struct FeaturePointSet {
    std::vector<geom::Point9D> points;  // m entries, 1 <= m <= 100
    double spacing = 0.0;               // voxel spacing that produced them, mm

    int count() const { return static_cast<int>(points.size()); }
};

// PLY or OBJ. Cleans degenerate triangles, fills colors with 0.5 gray when
// absent, computes area-weighted vertex normals when absent.
TriangleMesh load_mesh(const std::string& path);
void save_mesh(const std::string& path, const TriangleMesh& mesh);

// Length of the axis-aligned bounding-box diagonal of the vertices.
double diagonal(const TriangleMesh& mesh);
// Largest AABB side; gates point duplication in candidate extraction.
double max_extent(const TriangleMesh& mesh);

// Area-weighted uniform surface sampling, `density` points per mm^2, with
// interpolated normals and colors. Deterministic under seed.
geom::PointCloud sample_surface(const TriangleMesh& mesh, double density, uint64_t seed);

// Dense surface samples voxel-downsampled at 25 mm; the grid is up-scaled by
// 1.1 until fewer than 100 points remain.
FeaturePointSet select_feature_points(const TriangleMesh& mesh, uint64_t seed,
                                      double initial_spacing = 25.0);

void save_feature_points(const std::string& path, const FeaturePointSet& fps);
FeaturePointSet load_feature_points(const std::string& path);

// Distance from a point to the mesh surface (exact point-triangle distance).
double surface_distance(const TriangleMesh& mesh, const Vec3& p);

}  // namespace pointpose::model
