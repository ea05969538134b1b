#include "pointpose/ply_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pointpose::io {

namespace {

enum class PType { i8, u8, i16, u16, i32, u32, f32, f64 };

PType parse_type(const std::string& s) {
    if (s == "char" || s == "int8") return PType::i8;
    if (s == "uchar" || s == "uint8") return PType::u8;
    if (s == "short" || s == "int16") return PType::i16;
    if (s == "ushort" || s == "uint16") return PType::u16;
    if (s == "int" || s == "int32") return PType::i32;
    if (s == "uint" || s == "uint32") return PType::u32;
    if (s == "float" || s == "float32") return PType::f32;
    if (s == "double" || s == "float64") return PType::f64;
    throw std::runtime_error("ply: unknown property type " + s);
}

size_t type_size(PType t) {
    switch (t) {
        case PType::i8:
        case PType::u8: return 1;
        case PType::i16:
        case PType::u16: return 2;
        case PType::i32:
        case PType::u32:
        case PType::f32: return 4;
        case PType::f64: return 8;
    }
    return 0;
}

struct PlyProp {
    std::string name;
    PType type = PType::f32;
    bool is_list = false;
    PType count_type = PType::u8;
};

struct PlyElement {
    std::string name;
    size_t count = 0;
    std::vector<PlyProp> props;
    // Scalar values per property (lists excluded), doubles.
    std::vector<std::vector<double>> scalars;
    // List values per property (scalars excluded).
    std::vector<std::vector<std::vector<int>>> lists;
};

double read_binary_value(std::istream& in, PType t) {
    char buf[8];
    in.read(buf, static_cast<std::streamsize>(type_size(t)));
    switch (t) {
        case PType::i8: { int8_t v; std::memcpy(&v, buf, 1); return v; }
        case PType::u8: { uint8_t v; std::memcpy(&v, buf, 1); return v; }
        case PType::i16: { int16_t v; std::memcpy(&v, buf, 2); return v; }
        case PType::u16: { uint16_t v; std::memcpy(&v, buf, 2); return v; }
        case PType::i32: { int32_t v; std::memcpy(&v, buf, 4); return v; }
        case PType::u32: { uint32_t v; std::memcpy(&v, buf, 4); return v; }
        case PType::f32: { float v; std::memcpy(&v, buf, 4); return v; }
        case PType::f64: { double v; std::memcpy(&v, buf, 8); return v; }
    }
    return 0.0;
}

struct PlyFile {
    std::vector<PlyElement> elements;

    const PlyElement* find(const std::string& name) const {
        for (const auto& e : elements)
            if (e.name == name) return &e;
        return nullptr;
    }
};

PlyFile parse_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
    if (line.size() && line.back() == '\r') line.pop_back();
    if (line != "ply") throw std::runtime_error(path + ": not a PLY file");

    bool binary = false;
    PlyFile file;
    while (std::getline(in, line)) {
        if (line.size() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok == "obj_info") continue;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii") binary = false;
            else if (fmt == "binary_little_endian") binary = true;
            else throw std::runtime_error(path + ": unsupported PLY format " + fmt);
        } else if (tok == "element") {
            PlyElement e;
            ls >> e.name >> e.count;
            file.elements.push_back(std::move(e));
        } else if (tok == "property") {
            if (file.elements.empty()) throw std::runtime_error(path + ": property before element");
            PlyProp p;
            std::string t;
            ls >> t;
            if (t == "list") {
                std::string ct, vt;
                ls >> ct >> vt >> p.name;
                p.is_list = true;
                p.count_type = parse_type(ct);
                p.type = parse_type(vt);
            } else {
                ls >> p.name;
                p.type = parse_type(t);
            }
            file.elements.back().props.push_back(std::move(p));
        } else if (tok == "end_header") {
            break;
        }
    }

    for (auto& e : file.elements) {
        e.scalars.resize(e.props.size());
        e.lists.resize(e.props.size());
        for (size_t p = 0; p < e.props.size(); ++p) {
            if (e.props[p].is_list) e.lists[p].reserve(e.count);
            else e.scalars[p].reserve(e.count);
        }
        for (size_t i = 0; i < e.count; ++i) {
            if (binary) {
                for (size_t p = 0; p < e.props.size(); ++p) {
                    const PlyProp& pr = e.props[p];
                    if (pr.is_list) {
                        int n = static_cast<int>(read_binary_value(in, pr.count_type));
                        std::vector<int> vals(n);
                        for (int j = 0; j < n; ++j)
                            vals[j] = static_cast<int>(read_binary_value(in, pr.type));
                        e.lists[p].push_back(std::move(vals));
                    } else {
                        e.scalars[p].push_back(read_binary_value(in, pr.type));
                    }
                }
            } else {
                if (!std::getline(in, line)) throw std::runtime_error(path + ": truncated PLY data");
                std::istringstream ls(line);
                for (size_t p = 0; p < e.props.size(); ++p) {
                    const PlyProp& pr = e.props[p];
                    if (pr.is_list) {
                        int n;
                        ls >> n;
                        std::vector<int> vals(n);
                        for (int j = 0; j < n; ++j) ls >> vals[j];
                        e.lists[p].push_back(std::move(vals));
                    } else {
                        double v;
                        ls >> v;
                        e.scalars[p].push_back(v);
                    }
                }
            }
            if (!in) throw std::runtime_error(path + ": truncated PLY data");
        }
    }
    return file;
}

int prop_index(const PlyElement& e, const std::string& name) {
    for (size_t i = 0; i < e.props.size(); ++i)
        if (e.props[i].name == name) return static_cast<int>(i);
    return -1;
}

template <typename T>
void write_le(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

void save_cloud_ply(const std::string& path, const geom::PointCloud& cloud) {
    cloud.check_annotations();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << cloud.size() << "\n";
    for (const char* p : {"x", "y", "z", "nx", "ny", "nz"}) out << "property float " << p << "\n";
    for (const char* p : {"red", "green", "blue"}) out << "property uchar " << p << "\n";
    if (cloud.has_seg()) out << "property uchar seg\n";
    if (cloud.has_feat()) out << "property short feat\n";
    out << "end_header\n";
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& pt = cloud.points[i];
        for (int d = 0; d < 3; ++d) write_le<float>(out, static_cast<float>(pt.position[d]));
        for (int d = 0; d < 3; ++d) write_le<float>(out, static_cast<float>(pt.normal[d]));
        for (int d = 0; d < 3; ++d) {
            double c = std::clamp(pt.color[d], 0.0, 1.0);
            write_le<uint8_t>(out, static_cast<uint8_t>(std::lround(c * 255.0)));
        }
        if (cloud.has_seg()) write_le<uint8_t>(out, cloud.seg[i]);
        if (cloud.has_feat()) write_le<int16_t>(out, static_cast<int16_t>(cloud.feat[i]));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

geom::PointCloud load_cloud_ply(const std::string& path) {
    PlyFile f = parse_ply(path);
    const PlyElement* v = f.find("vertex");
    if (!v || v->count == 0) throw std::runtime_error(path + ": PLY has no vertices");
    int ix = prop_index(*v, "x"), iy = prop_index(*v, "y"), iz = prop_index(*v, "z");
    if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error(path + ": PLY missing x/y/z");
    int inx = prop_index(*v, "nx"), iny = prop_index(*v, "ny"), inz = prop_index(*v, "nz");
    int ir = prop_index(*v, "red"), ig = prop_index(*v, "green"), ib = prop_index(*v, "blue");
    int iseg = prop_index(*v, "seg"), ifeat = prop_index(*v, "feat");

    geom::PointCloud cloud;
    cloud.points.resize(v->count);
    for (size_t i = 0; i < v->count; ++i) {
        auto& p = cloud.points[i];
        p.position = {v->scalars[ix][i], v->scalars[iy][i], v->scalars[iz][i]};
        if (inx >= 0 && iny >= 0 && inz >= 0)
            p.normal = {v->scalars[inx][i], v->scalars[iny][i], v->scalars[inz][i]};
        if (ir >= 0 && ig >= 0 && ib >= 0) {
            double scale = v->props[ir].type == PType::u8 ? 1.0 / 255.0 : 1.0;
            p.color = {v->scalars[ir][i] * scale, v->scalars[ig][i] * scale, v->scalars[ib][i] * scale};
        }
    }
    if (iseg >= 0) {
        cloud.seg.resize(v->count);
        for (size_t i = 0; i < v->count; ++i) cloud.seg[i] = static_cast<uint8_t>(v->scalars[iseg][i]);
    }
    if (ifeat >= 0) {
        cloud.feat.resize(v->count);
        for (size_t i = 0; i < v->count; ++i) cloud.feat[i] = static_cast<int32_t>(v->scalars[ifeat][i]);
    }
    return cloud;
}

MeshData load_mesh_ply(const std::string& path) {
    PlyFile f = parse_ply(path);
    const PlyElement* v = f.find("vertex");
    if (!v || v->count == 0) throw std::runtime_error(path + ": PLY has no vertices");
    int ix = prop_index(*v, "x"), iy = prop_index(*v, "y"), iz = prop_index(*v, "z");
    if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error(path + ": PLY missing x/y/z");
    int inx = prop_index(*v, "nx"), iny = prop_index(*v, "ny"), inz = prop_index(*v, "nz");
    int ir = prop_index(*v, "red"), ig = prop_index(*v, "green"), ib = prop_index(*v, "blue");

    MeshData mesh;
    mesh.vertices.resize(v->count);
    for (size_t i = 0; i < v->count; ++i)
        mesh.vertices[i] = {v->scalars[ix][i], v->scalars[iy][i], v->scalars[iz][i]};
    if (inx >= 0 && iny >= 0 && inz >= 0) {
        mesh.normals.resize(v->count);
        for (size_t i = 0; i < v->count; ++i)
            mesh.normals[i] = {v->scalars[inx][i], v->scalars[iny][i], v->scalars[inz][i]};
    }
    if (ir >= 0 && ig >= 0 && ib >= 0) {
        double scale = v->props[ir].type == PType::u8 ? 1.0 / 255.0 : 1.0;
        mesh.colors.resize(v->count);
        for (size_t i = 0; i < v->count; ++i)
            mesh.colors[i] = {v->scalars[ir][i] * scale, v->scalars[ig][i] * scale, v->scalars[ib][i] * scale};
    }

    const PlyElement* fe = f.find("face");
    if (fe) {
        int fi = prop_index(*fe, "vertex_indices");
        if (fi < 0) fi = prop_index(*fe, "vertex_index");
        if (fi >= 0) {
            for (const auto& poly : fe->lists[fi]) {
                // Fan-triangulate polygons.
                for (size_t j = 2; j < poly.size(); ++j)
                    mesh.triangles.push_back({poly[0], poly[j - 1], poly[j]});
            }
        }
    }
    return mesh;
}

MeshData load_mesh_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    MeshData mesh;
    std::string line;
    while (std::getline(in, line)) {
        if (line.size() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "v") {
            double x, y, z;
            ls >> x >> y >> z;
            mesh.vertices.push_back({x, y, z});
            double r, g, b;
            if (ls >> r >> g >> b) {
                mesh.colors.resize(mesh.vertices.size(), geom::Vec3::Constant(0.5));
                mesh.colors.back() = {r, g, b};
            }
        } else if (tok == "f") {
            std::vector<int> idx;
            std::string vert;
            while (ls >> vert) {
                // "i", "i/t", "i//n", "i/t/n"; negative indices are relative.
                int vi = std::stoi(vert.substr(0, vert.find('/')));
                if (vi < 0) vi = static_cast<int>(mesh.vertices.size()) + vi + 1;
                idx.push_back(vi - 1);
            }
            for (size_t j = 2; j < idx.size(); ++j)
                mesh.triangles.push_back({idx[0], idx[j - 1], idx[j]});
        }
    }
    if (!mesh.colors.empty()) mesh.colors.resize(mesh.vertices.size(), geom::Vec3::Constant(0.5));
    return mesh;
}

void save_mesh_ply(const std::string& path, const MeshData& mesh) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    bool has_c = !mesh.colors.empty(), has_n = !mesh.normals.empty();
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    for (const char* p : {"x", "y", "z"}) out << "property float " << p << "\n";
    if (has_n)
        for (const char* p : {"nx", "ny", "nz"}) out << "property float " << p << "\n";
    if (has_c)
        for (const char* p : {"red", "green", "blue"}) out << "property uchar " << p << "\n";
    out << "element face " << mesh.triangles.size() << "\n";
    out << "property list uchar int vertex_indices\n";
    out << "end_header\n";
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        for (int d = 0; d < 3; ++d) write_le<float>(out, static_cast<float>(mesh.vertices[i][d]));
        if (has_n)
            for (int d = 0; d < 3; ++d) write_le<float>(out, static_cast<float>(mesh.normals[i][d]));
        if (has_c)
            for (int d = 0; d < 3; ++d) {
                double c = std::clamp(mesh.colors[i][d], 0.0, 1.0);
                write_le<uint8_t>(out, static_cast<uint8_t>(std::lround(c * 255.0)));
            }
    }
    for (const auto& t : mesh.triangles) {
        write_le<uint8_t>(out, 3);
        for (int d = 0; d < 3; ++d) write_le<int32_t>(out, t[d]);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace pointpose::io
