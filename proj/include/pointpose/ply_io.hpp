#pragma once

#include <array>
#include <string>
#include <vector>

#include "pointpose/geom.hpp"

namespace pointpose::io {

// Point clouds travel as binary little-endian PLY with float properties
// x,y,z,nx,ny,nz, 8-bit red/green/blue (normalized to [0,1] on load), and
// optional scalar properties "seg" (uchar) and "feat" (short, -1 = none).
void save_cloud_ply(const std::string& path, const geom::PointCloud& cloud);
geom::PointCloud load_cloud_ply(const std::string& path);

// Raw mesh data as parsed from file; cleanup happens in the model module.
struct MeshData {
    std::vector<geom::Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<geom::Vec3> colors;   // empty if the file has none
    std::vector<geom::Vec3> normals;  // empty if the file has none
};

MeshData load_mesh_ply(const std::string& path);
MeshData load_mesh_obj(const std::string& path);
void save_mesh_ply(const std::string& path, const MeshData& mesh);

}  // namespace pointpose::io
