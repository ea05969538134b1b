#pragma once

#include "pointpose/model.hpp"

namespace pointpose::model {

// Procedural desk-scale objects, mm units, per-vertex colors. Vertices are
// duplicated per face so shading normals stay sharp.

TriangleMesh make_box(const Vec3& extents, const Vec3& color);
// Box with one color per face (+x,-x,+y,-y,+z,-z); breaks color symmetry.
TriangleMesh make_box_faces(const Vec3& extents, const std::array<Vec3, 6>& face_colors);
TriangleMesh make_cylinder(double radius, double height, int segments, const Vec3& color);
TriangleMesh make_uv_sphere(double radius, int segments, int rings, const Vec3& color);

// Concatenation; overlapping geometry is fine for rendering and sampling.
TriangleMesh merge(const TriangleMesh& a, const TriangleMesh& b);
TriangleMesh translated(const TriangleMesh& m, const Vec3& offset);

// Benchmark objects. The first three have no rotational symmetry; the C4
// prism is rotation invariant by 90 degrees about z.
TriangleMesh make_lbracket();   // two unequal arms, distinct colors
TriangleMesh make_wedge();      // asymmetric house-profile prism
TriangleMesh make_mug();        // cylinder body + offset handle block
TriangleMesh make_tbar();       // unequal stem/cross bars
TriangleMesh make_c4_prism();   // square prism, uniform color (symmetric)

}  // namespace pointpose::model
