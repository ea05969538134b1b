#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace pointpose::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// XYZ in millimeters, unit normal, RGB in [0,1].
struct Point9D {
    Vec3 position = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    Vec3 color = Vec3::Constant(0.5);

    // Checked constructor: |normal| = 1 +- 1e-6, color in [0,1]. Later
    // processing (augmentation) may denormalize fields in place; that is
    // deliberate and not re-validated here.
    static Point9D make(const Vec3& pos, const Vec3& n, const Vec3& rgb);
};

struct PointCloud {
    std::vector<Point9D> points;
    std::vector<uint8_t> seg;    // empty or one {0,1} entry per point
    std::vector<int32_t> feat;   // empty or one entry per point, -1 = none

    size_t size() const { return points.size(); }
    bool has_seg() const { return !seg.empty(); }
    bool has_feat() const { return !feat.empty(); }
    // Throws if a non-empty annotation array does not match the point count.
    void check_annotations() const;
};

// Rigid transform: rotation + translation in mm.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    // Checked constructor: rotation orthonormal with det +1 (+- 1e-6).
    static Pose make(const Mat3& r, const Vec3& t);
    static Pose identity() { return {}; }

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
    Pose inverse() const;
    // this ∘ other: applies `other` first.
    Pose compose(const Pose& other) const;
};

// Exact nearest-neighbor index over 3D positions (kd-tree) or D-dimensional
// feature vectors (linear scan). Results match a brute-force scan exactly;
// distance ties break toward the lower point index.
class NeighborIndex {
  public:
    static NeighborIndex build(std::span<const Vec3> pts);
    static NeighborIndex build(const PointCloud& cloud);
    // Flat row-major data, `dim` values per point.
    static NeighborIndex build(std::span<const double> flat, int dim);

    size_t size() const { return count_; }
    int dim() const { return dim_; }

    // min(k, size) results sorted ascending by (distance, index).
    std::vector<std::pair<int, double>> knn(std::span<const double> query, int k) const;
    std::vector<std::pair<int, double>> knn(const Vec3& query, int k) const;
    // All indices with distance <= radius (inclusive), ascending index order.
    std::vector<int> radius(std::span<const double> query, double r) const;
    std::vector<int> radius(const Vec3& query, double r) const;
    // Index and distance of the single nearest point.
    std::pair<int, double> nearest(const Vec3& query) const;

  private:
    struct KdNode {
        int axis = -1;         // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into order_
    };

    void build_tree();
    int build_node(int begin, int end, int depth);

    std::vector<double> data_;  // count_ x dim_
    size_t count_ = 0;
    int dim_ = 0;
    std::vector<KdNode> nodes_;
    std::vector<int> order_;
    int root_ = -1;
};

// Least-squares rigid transform mapping src onto dst (dst ~= R*src + t).
// Requires >= 3 non-collinear correspondences; the rotation is proper
// (det +1) via sign correction of the smallest singular direction.
Pose kabsch(std::span<const Vec3> src, std::span<const Vec3> dst);

// One representative point per occupied voxel: the input point nearest to
// the voxel's point centroid. Output in ascending lexicographic voxel order.
PointCloud voxel_downsample(const PointCloud& cloud, double spacing);

// Positions mapped by R*x + t, normals by R*n; colors/annotations unchanged.
PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose);

// Uniformly distributed random rotation.
Mat3 random_rotation(uint64_t seed);
// Rotation by `angle_rad` about a uniformly random axis.
Mat3 random_rotation_bounded(double max_angle_rad, uint64_t seed);
// Geodesic distance between rotations, radians.
double rotation_angle(const Mat3& a, const Mat3& b);

}  // namespace pointpose::geom
