#include "pointpose/procedural.hpp"

#include <cmath>

namespace pointpose::model {

namespace {

void add_tri(TriangleMesh& m, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& n,
             const Vec3& color) {
    int base = static_cast<int>(m.vertices.size());
    for (const Vec3& v : {a, b, c}) {
        m.vertices.push_back(v);
        m.normals.push_back(n);
        m.colors.push_back(color);
    }
    m.triangles.push_back({base, base + 1, base + 2});
}

void add_quad(TriangleMesh& m, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
              const Vec3& n, const Vec3& color) {
    int base = static_cast<int>(m.vertices.size());
    for (const Vec3& v : {a, b, c, d}) {
        m.vertices.push_back(v);
        m.normals.push_back(n);
        m.colors.push_back(color);
    }
    m.triangles.push_back({base, base + 1, base + 2});
    m.triangles.push_back({base, base + 2, base + 3});
}

}  // namespace

TriangleMesh make_box_faces(const Vec3& e, const std::array<Vec3, 6>& fc) {
    TriangleMesh m;
    Vec3 h = e * 0.5;
    double x = h.x(), y = h.y(), z = h.z();
    add_quad(m, {x, -y, -z}, {x, y, -z}, {x, y, z}, {x, -y, z}, {1, 0, 0}, fc[0]);
    add_quad(m, {-x, y, -z}, {-x, -y, -z}, {-x, -y, z}, {-x, y, z}, {-1, 0, 0}, fc[1]);
    add_quad(m, {x, y, -z}, {-x, y, -z}, {-x, y, z}, {x, y, z}, {0, 1, 0}, fc[2]);
    add_quad(m, {-x, -y, -z}, {x, -y, -z}, {x, -y, z}, {-x, -y, z}, {0, -1, 0}, fc[3]);
    add_quad(m, {-x, -y, z}, {x, -y, z}, {x, y, z}, {-x, y, z}, {0, 0, 1}, fc[4]);
    add_quad(m, {-x, y, -z}, {x, y, -z}, {x, -y, -z}, {-x, -y, -z}, {0, 0, -1}, fc[5]);
    return m;
}

TriangleMesh make_box(const Vec3& extents, const Vec3& color) {
    std::array<Vec3, 6> fc;
    fc.fill(color);
    return make_box_faces(extents, fc);
}

TriangleMesh make_cylinder(double radius, double height, int segments, const Vec3& color) {
    TriangleMesh m;
    double h = height * 0.5;
    for (int i = 0; i < segments; ++i) {
        double a0 = 2.0 * M_PI * i / segments;
        double a1 = 2.0 * M_PI * (i + 1) / segments;
        Vec3 n0(std::cos(a0), std::sin(a0), 0.0), n1(std::cos(a1), std::sin(a1), 0.0);
        Vec3 p0 = radius * n0, p1 = radius * n1;
        // side quad with smooth normals
        int base = static_cast<int>(m.vertices.size());
        m.vertices.push_back(p0 + Vec3(0, 0, -h));
        m.vertices.push_back(p1 + Vec3(0, 0, -h));
        m.vertices.push_back(p1 + Vec3(0, 0, h));
        m.vertices.push_back(p0 + Vec3(0, 0, h));
        m.normals.push_back(n0);
        m.normals.push_back(n1);
        m.normals.push_back(n1);
        m.normals.push_back(n0);
        for (int j = 0; j < 4; ++j) m.colors.push_back(color);
        m.triangles.push_back({base, base + 1, base + 2});
        m.triangles.push_back({base, base + 2, base + 3});
        // caps
        add_tri(m, Vec3(0, 0, h), p0 + Vec3(0, 0, h), p1 + Vec3(0, 0, h), {0, 0, 1}, color);
        add_tri(m, Vec3(0, 0, -h), p1 + Vec3(0, 0, -h), p0 + Vec3(0, 0, -h), {0, 0, -1}, color);
    }
    return m;
}

TriangleMesh make_uv_sphere(double radius, int segments, int rings, const Vec3& color) {
    TriangleMesh m;
    for (int r = 0; r < rings; ++r) {
        double t0 = M_PI * r / rings, t1 = M_PI * (r + 1) / rings;
        for (int s = 0; s < segments; ++s) {
            double a0 = 2.0 * M_PI * s / segments, a1 = 2.0 * M_PI * (s + 1) / segments;
            auto pt = [&](double t, double a) {
                return Vec3(std::sin(t) * std::cos(a), std::sin(t) * std::sin(a), std::cos(t));
            };
            Vec3 n00 = pt(t0, a0), n01 = pt(t0, a1), n10 = pt(t1, a0), n11 = pt(t1, a1);
            int base = static_cast<int>(m.vertices.size());
            for (const Vec3& n : {n00, n10, n11, n01}) {
                m.vertices.push_back(radius * n);
                m.normals.push_back(n);
                m.colors.push_back(color);
            }
            m.triangles.push_back({base, base + 1, base + 2});
            m.triangles.push_back({base, base + 2, base + 3});
        }
    }
    return m;
}

TriangleMesh merge(const TriangleMesh& a, const TriangleMesh& b) {
    TriangleMesh m = a;
    int off = static_cast<int>(a.vertices.size());
    m.vertices.insert(m.vertices.end(), b.vertices.begin(), b.vertices.end());
    m.normals.insert(m.normals.end(), b.normals.begin(), b.normals.end());
    m.colors.insert(m.colors.end(), b.colors.begin(), b.colors.end());
    for (const auto& t : b.triangles)
        m.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
    return m;
}

TriangleMesh translated(const TriangleMesh& m, const Vec3& offset) {
    TriangleMesh out = m;
    for (auto& v : out.vertices) v += offset;
    return out;
}

TriangleMesh make_lbracket() {
    // 140mm long arm, 90mm short arm, 36mm square section.
    TriangleMesh a = make_box({140, 36, 36}, {0.85, 0.25, 0.2});
    TriangleMesh b = translated(make_box({36, 36, 90}, {0.2, 0.4, 0.85}), {-52, 0, 63});
    return merge(a, b);
}

TriangleMesh make_wedge() {
    // Asymmetric house-profile prism: offset ridge, split colors.
    TriangleMesh m;
    double L = 130, W = 80, H0 = 40, H1 = 85, ridge_x = -20;
    Vec3 cA(0.9, 0.75, 0.2), cB(0.3, 0.75, 0.35);
    auto v = [&](double x, double y, double z) { return Vec3(x, y, z); };
    Vec3 p0 = v(-L / 2, -W / 2, 0), p1 = v(L / 2, -W / 2, 0), p2 = v(L / 2, W / 2, 0),
         p3 = v(-L / 2, W / 2, 0);
    Vec3 q0 = v(-L / 2, -W / 2, H0), q1 = v(L / 2, -W / 2, H0), q2 = v(L / 2, W / 2, H0),
         q3 = v(-L / 2, W / 2, H0);
    Vec3 r0 = v(ridge_x, -W / 2, H1), r1 = v(ridge_x, W / 2, H1);
    add_quad(m, p1, p0, q0, q1, {0, -1, 0}, cA);               // front wall
    add_quad(m, p3, p2, q2, q3, {0, 1, 0}, cB);                // back wall
    add_quad(m, p0, p3, q3, q0, {-1, 0, 0}, cA);               // left wall
    add_quad(m, p2, p1, q1, q2, {1, 0, 0}, cB);                // right wall
    add_quad(m, p0, p1, p2, p3, {0, 0, -1}, cA);               // bottom
    // roof slopes; ridge offset makes the two pitches unequal
    add_quad(m, q0, r0, r1, q3, Vec3(-(H1 - H0), 0, ridge_x + L / 2).normalized(), cA);
    add_quad(m, r0, q1, q2, r1, Vec3(H1 - H0, 0, L / 2 - ridge_x).normalized(), cB);
    // gable triangles
    add_tri(m, q0, q1, r0, {0, -1, 0}, cB);
    add_tri(m, q3, r1, q2, {0, 1, 0}, cA);
    return m;
}

TriangleMesh make_mug() {
    TriangleMesh body = make_cylinder(42, 110, 24, {0.25, 0.55, 0.85});
    TriangleMesh handle = translated(make_box({34, 18, 70}, {0.9, 0.5, 0.15}), {56, 0, 0});
    return merge(body, handle);
}

TriangleMesh make_tbar() {
    TriangleMesh stem = make_box({30, 30, 120}, {0.6, 0.3, 0.7});
    TriangleMesh cross = translated(make_box({110, 34, 30}, {0.95, 0.85, 0.3}), {10, 0, 72});
    return merge(stem, cross);
}

TriangleMesh make_c4_prism() {
    return make_box({70, 70, 150}, {0.8, 0.45, 0.25});
}

}  // namespace pointpose::model
