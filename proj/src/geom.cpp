#include "pointpose/geom.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>
#include <unordered_map>

#include "pointpose/util.hpp"

namespace pointpose::geom {

Point9D Point9D::make(const Vec3& pos, const Vec3& n, const Vec3& rgb) {
    if (std::abs(n.norm() - 1.0) > 1e-6)
        throw std::invalid_argument("Point9D: normal is not unit length");
    for (int i = 0; i < 3; ++i)
        if (rgb[i] < 0.0 || rgb[i] > 1.0)
            throw std::invalid_argument("Point9D: color component outside [0,1]");
    return Point9D{pos, n, rgb};
}

void PointCloud::check_annotations() const {
    if (!seg.empty() && seg.size() != points.size())
        throw std::invalid_argument("PointCloud: seg annotation size mismatch");
    if (!feat.empty() && feat.size() != points.size())
        throw std::invalid_argument("PointCloud: feat annotation size mismatch");
}

Pose Pose::make(const Mat3& r, const Vec3& t) {
    Mat3 should_be_identity = r.transpose() * r;
    if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw std::invalid_argument("Pose: rotation is not orthonormal");
    if (std::abs(r.determinant() - 1.0) > 1e-6)
        throw std::invalid_argument("Pose: rotation determinant is not +1");
    return Pose{r, t};
}

Pose Pose::inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -(rotation.transpose() * translation);
    return p;
}

Pose Pose::compose(const Pose& other) const {
    Pose p;
    p.rotation = rotation * other.rotation;
    p.translation = rotation * other.translation + translation;
    return p;
}

// ---------------------------------------------------------------------------
// NeighborIndex

namespace {
constexpr int kLeafSize = 16;

inline double sqdist(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}
}  // namespace

NeighborIndex NeighborIndex::build(std::span<const Vec3> pts) {
    NeighborIndex idx;
    idx.count_ = pts.size();
    idx.dim_ = 3;
    idx.data_.resize(pts.size() * 3);
    for (size_t i = 0; i < pts.size(); ++i)
        for (int d = 0; d < 3; ++d) idx.data_[i * 3 + d] = pts[i][d];
    idx.build_tree();
    return idx;
}

NeighborIndex NeighborIndex::build(const PointCloud& cloud) {
    NeighborIndex idx;
    idx.count_ = cloud.size();
    idx.dim_ = 3;
    idx.data_.resize(cloud.size() * 3);
    for (size_t i = 0; i < cloud.size(); ++i)
        for (int d = 0; d < 3; ++d) idx.data_[i * 3 + d] = cloud.points[i].position[d];
    idx.build_tree();
    return idx;
}

NeighborIndex NeighborIndex::build(std::span<const double> flat, int dim) {
    if (dim < 1) throw std::invalid_argument("NeighborIndex: dim must be >= 1");
    if (flat.size() % dim != 0) throw std::invalid_argument("NeighborIndex: flat size not divisible by dim");
    NeighborIndex idx;
    idx.count_ = flat.size() / dim;
    idx.dim_ = dim;
    idx.data_.assign(flat.begin(), flat.end());
    if (dim == 3) idx.build_tree();
    return idx;
}

void NeighborIndex::build_tree() {
    if (count_ == 0) return;
    order_.resize(count_);
    for (size_t i = 0; i < count_; ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * count_ / kLeafSize + 8);
    root_ = build_node(0, static_cast<int>(count_), 0);
}

int NeighborIndex::build_node(int begin, int end, int depth) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= kLeafSize) {
        // Keep leaves in ascending index order so scans hit ties low-first.
        std::sort(order_.begin() + begin, order_.begin() + end);
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    // Split on widest axis for balanced trees on skewed data.
    int axis = depth % dim_;
    double best_spread = -1.0;
    for (int a = 0; a < dim_; ++a) {
        double lo = data_[static_cast<size_t>(order_[begin]) * dim_ + a];
        double hi = lo;
        for (int i = begin + 1; i < end; ++i) {
            double v = data_[static_cast<size_t>(order_[i]) * dim_ + a];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi - lo > best_spread) {
            best_spread = hi - lo;
            axis = a;
        }
    }
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         double va = data_[static_cast<size_t>(a) * dim_ + axis];
                         double vb = data_[static_cast<size_t>(b) * dim_ + axis];
                         return va < vb || (va == vb && a < b);
                     });
    double split = data_[static_cast<size_t>(order_[mid]) * dim_ + axis];
    int left = build_node(begin, mid, depth + 1);
    int right = build_node(mid, end, depth + 1);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

namespace {
// (distance, index) candidate ordering; lower index wins ties.
struct Cand {
    double d;
    int i;
    bool operator<(const Cand& o) const { return d < o.d || (d == o.d && i < o.i); }
};
}  // namespace

std::vector<std::pair<int, double>> NeighborIndex::knn(std::span<const double> query, int k) const {
    if (count_ == 0) throw std::invalid_argument("empty index");
    if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
    if (static_cast<int>(query.size()) != dim_) throw std::invalid_argument("knn: query dim mismatch");
    size_t want = std::min<size_t>(k, count_);
    // Max-heap of current best candidates under (d, i) order.
    std::priority_queue<Cand> heap;

    auto offer = [&](int i) {
        Cand c{sqdist(data_.data() + static_cast<size_t>(i) * dim_, query.data(), dim_), i};
        if (heap.size() < want) {
            heap.push(c);
        } else if (c < heap.top()) {
            heap.pop();
            heap.push(c);
        }
    };

    if (root_ < 0) {
        for (size_t i = 0; i < count_; ++i) offer(static_cast<int>(i));
    } else {
        // Iterative traversal, near side first.
        std::vector<int> stack{root_};
        std::vector<double> bound{0.0};
        while (!stack.empty()) {
            int id = stack.back();
            stack.pop_back();
            double b = bound.back();
            bound.pop_back();
            // <= keeps equal-distance candidates reachable for index tiebreak.
            if (heap.size() == want && !(b <= heap.top().d)) continue;
            const KdNode& nd = nodes_[id];
            if (nd.axis < 0) {
                for (int i = nd.begin; i < nd.end; ++i) offer(order_[i]);
                continue;
            }
            double diff = query[nd.axis] - nd.split;
            int near = diff < 0 ? nd.left : nd.right;
            int far = diff < 0 ? nd.right : nd.left;
            double far_bound = std::max(b, diff * diff);
            stack.push_back(far);
            bound.push_back(far_bound);
            stack.push_back(near);
            bound.push_back(b);
        }
    }

    std::vector<std::pair<int, double>> out(heap.size());
    for (size_t i = heap.size(); i-- > 0;) {
        out[i] = {heap.top().i, std::sqrt(heap.top().d)};
        heap.pop();
    }
    return out;
}

std::vector<std::pair<int, double>> NeighborIndex::knn(const Vec3& query, int k) const {
    return knn(std::span<const double>(query.data(), 3), k);
}

std::vector<int> NeighborIndex::radius(std::span<const double> query, double r) const {
    if (static_cast<int>(query.size()) != dim_) throw std::invalid_argument("radius: query dim mismatch");
    if (r <= 0.0) throw std::invalid_argument("radius: radius must be > 0");
    double r2 = r * r;
    std::vector<int> out;
    if (root_ < 0) {
        for (size_t i = 0; i < count_; ++i)
            if (sqdist(data_.data() + i * dim_, query.data(), dim_) <= r2) out.push_back(static_cast<int>(i));
        return out;
    }
    std::vector<int> stack{root_};
    std::vector<double> bound{0.0};
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        double b = bound.back();
        bound.pop_back();
        if (b > r2) continue;
        const KdNode& nd = nodes_[id];
        if (nd.axis < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                int pi = order_[i];
                if (sqdist(data_.data() + static_cast<size_t>(pi) * dim_, query.data(), dim_) <= r2)
                    out.push_back(pi);
            }
            continue;
        }
        double diff = query[nd.axis] - nd.split;
        int near = diff < 0 ? nd.left : nd.right;
        int far = diff < 0 ? nd.right : nd.left;
        stack.push_back(far);
        bound.push_back(std::max(b, diff * diff));
        stack.push_back(near);
        bound.push_back(b);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> NeighborIndex::radius(const Vec3& query, double r) const {
    return radius(std::span<const double>(query.data(), 3), r);
}

std::pair<int, double> NeighborIndex::nearest(const Vec3& query) const {
    auto r = knn(query, 1);
    return r.front();
}

// ---------------------------------------------------------------------------

Pose kabsch(std::span<const Vec3> src, std::span<const Vec3> dst) {
    if (src.size() != dst.size()) throw std::invalid_argument("kabsch: size mismatch");
    if (src.size() < 3) throw std::invalid_argument("degenerate correspondence set");
    const double n = static_cast<double>(src.size());
    Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
    for (size_t i = 0; i < src.size(); ++i) {
        cs += src[i];
        cd += dst[i];
    }
    cs /= n;
    cd /= n;
    Mat3 h = Mat3::Zero();
    for (size_t i = 0; i < src.size(); ++i)
        h += (src[i] - cs) * (dst[i] - cd).transpose();
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d sv = svd.singularValues();
    // Rank < 2 means the correspondences are collinear (or all coincident):
    // the in-plane rotation is unobservable.
    if (!(sv[1] > sv[0] * 1e-9) || sv[0] <= 0.0)
        throw std::invalid_argument("degenerate correspondence set");
    Mat3 u = svd.matrixU(), v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
    Pose p;
    p.rotation = v * d * u.transpose();
    p.translation = cd - p.rotation * cs;
    return p;
}

PointCloud voxel_downsample(const PointCloud& cloud, double spacing) {
    if (spacing <= 0.0) throw std::invalid_argument("voxel_downsample: spacing must be > 0");
    cloud.check_annotations();

    struct VoxelKey {
        int64_t x, y, z;
        bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
    };
    struct VoxelHash {
        size_t operator()(const VoxelKey& k) const {
            uint64_t h = hash_mix(static_cast<uint64_t>(k.x));
            h = hash_mix(h ^ static_cast<uint64_t>(k.y));
            h = hash_mix(h ^ static_cast<uint64_t>(k.z));
            return static_cast<size_t>(h);
        }
    };
    struct Cell {
        Vec3 sum = Vec3::Zero();
        std::vector<int> indices;
    };

    std::unordered_map<VoxelKey, Cell, VoxelHash> cells;
    cells.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.points[i].position;
        VoxelKey key{static_cast<int64_t>(std::floor(p.x() / spacing)),
                     static_cast<int64_t>(std::floor(p.y() / spacing)),
                     static_cast<int64_t>(std::floor(p.z() / spacing))};
        Cell& c = cells[key];
        c.sum += p;
        c.indices.push_back(static_cast<int>(i));
    }

    std::vector<std::pair<VoxelKey, int>> reps;
    reps.reserve(cells.size());
    for (auto& [key, cell] : cells) {
        Vec3 centroid = cell.sum / static_cast<double>(cell.indices.size());
        int best = -1;
        double best_d = 0.0;
        for (int idx : cell.indices) {
            double d = (cloud.points[idx].position - centroid).squaredNorm();
            if (best < 0 || d < best_d || (d == best_d && idx < best)) {
                best = idx;
                best_d = d;
            }
        }
        reps.push_back({key, best});
    }
    std::sort(reps.begin(), reps.end(), [](const auto& a, const auto& b) {
        if (a.first.x != b.first.x) return a.first.x < b.first.x;
        if (a.first.y != b.first.y) return a.first.y < b.first.y;
        return a.first.z < b.first.z;
    });

    PointCloud out;
    out.points.reserve(reps.size());
    for (auto& [key, idx] : reps) {
        out.points.push_back(cloud.points[idx]);
        if (cloud.has_seg()) out.seg.push_back(cloud.seg[idx]);
        if (cloud.has_feat()) out.feat.push_back(cloud.feat[idx]);
    }
    return out;
}

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
    PointCloud out = cloud;
    for (auto& p : out.points) {
        p.position = pose.rotation * p.position + pose.translation;
        p.normal = pose.rotation * p.normal;
    }
    return out;
}

Mat3 random_rotation(uint64_t seed) {
    // Uniform quaternion (Shoemake).
    Rng rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double u1 = uni(rng), u2 = uni(rng), u3 = uni(rng);
    double two_pi = 2.0 * M_PI;
    double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
    Eigen::Quaterniond q(a * std::sin(two_pi * u2), a * std::cos(two_pi * u2),
                         b * std::sin(two_pi * u3), b * std::cos(two_pi * u3));
    return q.normalized().toRotationMatrix();
}

Mat3 random_rotation_bounded(double max_angle_rad, uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    Vec3 axis;
    do {
        axis = Vec3(uni(rng), uni(rng), uni(rng));
    } while (axis.squaredNorm() > 1.0 || axis.squaredNorm() < 1e-12);
    axis.normalize();
    std::uniform_real_distribution<double> ang(0.0, max_angle_rad);
    double angle = ang(rng);
    return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

double rotation_angle(const Mat3& a, const Mat3& b) {
    Mat3 r = a.transpose() * b;
    double c = (r.trace() - 1.0) * 0.5;
    c = std::clamp(c, -1.0, 1.0);
    return std::acos(c);
}

}  // namespace pointpose::geom
