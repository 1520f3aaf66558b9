#pragma once

#include "cadrec/geometry.hpp"
#include "cadrec/sampling.hpp"

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cadrec {

inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::MalformedFile, "cannot open " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::MalformedFile, "write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MalformedFile, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace ply {

enum class Scalar { Char, UChar, Short, UShort, Int, UInt, Float, Double };

inline std::size_t scalar_size(Scalar s) {
    switch (s) {
        case Scalar::Char:
        case Scalar::UChar: return 1;
        case Scalar::Short:
        case Scalar::UShort: return 2;
        case Scalar::Int:
        case Scalar::UInt:
        case Scalar::Float: return 4;
        case Scalar::Double: return 8;
    }
    return 0;
}

inline Scalar parse_scalar(const std::string& t, const std::string& where) {
    if (t == "char" || t == "int8") return Scalar::Char;
    if (t == "uchar" || t == "uint8") return Scalar::UChar;
    if (t == "short" || t == "int16") return Scalar::Short;
    if (t == "ushort" || t == "uint16") return Scalar::UShort;
    if (t == "int" || t == "int32") return Scalar::Int;
    if (t == "uint" || t == "uint32") return Scalar::UInt;
    if (t == "float" || t == "float32") return Scalar::Float;
    if (t == "double" || t == "float64") return Scalar::Double;
    throw Error(ErrorCode::MalformedFile, "ply: unknown type '" + t + "' in " + where);
}

struct Property {
    std::string name;
    Scalar type = Scalar::Float;
    bool is_list = false;
    Scalar count_type = Scalar::UChar;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
};

struct Header {
    bool binary = false;
    std::vector<Element> elements;
    std::size_t end_offset = 0;  // byte offset just past "end_header\n"
};

inline Header parse_header(const std::string& bytes, const std::string& path) {
    Header h;
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const std::size_t eol = bytes.find('\n', pos);
        if (eol == std::string::npos)
            throw Error(ErrorCode::MalformedFile,
                        path + ": header truncated at byte " + std::to_string(pos));
        std::string line = bytes.substr(pos, eol - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = eol + 1;
        return line;
    };
    if (next_line() != "ply")
        throw Error(ErrorCode::MalformedFile, path + ": missing 'ply' magic");
    bool have_format = false;
    for (;;) {
        const std::string line = next_line();
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt, ver;
            ss >> fmt >> ver;
            if (fmt == "ascii")
                h.binary = false;
            else if (fmt == "binary_little_endian")
                h.binary = true;
            else
                throw Error(ErrorCode::MalformedFile, path + ": unsupported format " + fmt);
            have_format = true;
        } else if (tok == "element") {
            Element e;
            ss >> e.name >> e.count;
            h.elements.push_back(e);
        } else if (tok == "property") {
            if (h.elements.empty())
                throw Error(ErrorCode::MalformedFile, path + ": property before element");
            Property p;
            std::string t;
            ss >> t;
            if (t == "list") {
                std::string ct, vt;
                ss >> ct >> vt >> p.name;
                p.is_list = true;
                p.count_type = parse_scalar(ct, path);
                p.type = parse_scalar(vt, path);
            } else {
                ss >> p.name;
                p.type = parse_scalar(t, path);
            }
            h.elements.back().properties.push_back(p);
        } else if (tok == "end_header") {
            break;
        } else {
            throw Error(ErrorCode::MalformedFile, path + ": malformed header line '" + line + "'");
        }
    }
    if (!have_format) throw Error(ErrorCode::MalformedFile, path + ": missing format line");
    h.end_offset = pos;
    return h;
}

struct BinaryCursor {
    const std::string& bytes;
    std::size_t pos;
    const std::string& path;

    double read(Scalar type) {
        const std::size_t n = scalar_size(type);
        if (pos + n > bytes.size())
            throw Error(ErrorCode::MalformedFile,
                        path + ": truncated binary data at byte " + std::to_string(pos));
        const char* p = bytes.data() + pos;
        pos += n;
        switch (type) {
            case Scalar::Char: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
            case Scalar::UChar: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
            case Scalar::Short: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
            case Scalar::UShort: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
            case Scalar::Int: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
            case Scalar::UInt: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
            case Scalar::Float: { float v; std::memcpy(&v, p, 4); return v; }
            case Scalar::Double: { double v; std::memcpy(&v, p, 8); return v; }
        }
        return 0.0;
    }
};

struct AsciiCursor {
    std::istringstream stream;
    const std::string& path;

    AsciiCursor(const std::string& bytes, std::size_t offset, const std::string& p)
        : stream(bytes.substr(offset)), path(p) {}

    double read() {
        double v;
        if (!(stream >> v))
            throw Error(ErrorCode::MalformedFile, path + ": truncated ascii data");
        return v;
    }
};

}  // namespace ply

struct PlyData {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;  // empty if absent
    std::vector<std::array<std::uint32_t, 3>> faces;
};

inline PlyData load_ply(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    const ply::Header header = ply::parse_header(bytes, path.string());

    PlyData data;
    ply::BinaryCursor bin{bytes, header.end_offset, path.string()};
    ply::AsciiCursor asc{bytes, header.end_offset, path.string()};

    for (const ply::Element& elem : header.elements) {
        const bool is_vertex = elem.name == "vertex";
        const bool is_face = elem.name == "face";
        int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
        for (std::size_t p = 0; p < elem.properties.size(); ++p) {
            const auto& name = elem.properties[p].name;
            if (name == "x") ix = static_cast<int>(p);
            if (name == "y") iy = static_cast<int>(p);
            if (name == "z") iz = static_cast<int>(p);
            if (name == "nx") inx = static_cast<int>(p);
            if (name == "ny") iny = static_cast<int>(p);
            if (name == "nz") inz = static_cast<int>(p);
        }
        if (is_vertex && (ix < 0 || iy < 0 || iz < 0))
            throw Error(ErrorCode::MalformedFile, path.string() + ": vertex element lacks x/y/z");
        const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;

        for (std::size_t i = 0; i < elem.count; ++i) {
            Vec3 pt = Vec3::Zero(), nrm = Vec3::Zero();
            std::vector<double> list_values;
            for (std::size_t p = 0; p < elem.properties.size(); ++p) {
                const ply::Property& prop = elem.properties[p];
                if (prop.is_list) {
                    const double count =
                        header.binary ? bin.read(prop.count_type) : asc.read();
                    const auto c = static_cast<std::size_t>(count);
                    list_values.clear();
                    for (std::size_t k = 0; k < c; ++k)
                        list_values.push_back(header.binary ? bin.read(prop.type) : asc.read());
                } else {
                    const double v = header.binary ? bin.read(prop.type) : asc.read();
                    const int pi = static_cast<int>(p);
                    if (pi == ix) pt.x() = v;
                    else if (pi == iy) pt.y() = v;
                    else if (pi == iz) pt.z() = v;
                    else if (pi == inx) nrm.x() = v;
                    else if (pi == iny) nrm.y() = v;
                    else if (pi == inz) nrm.z() = v;
                }
                if (is_face && prop.is_list &&
                    (prop.name == "vertex_indices" || prop.name == "vertex_index")) {
                    if (list_values.size() < 3)
                        throw Error(ErrorCode::MalformedFile,
                                    path.string() + ": face with fewer than 3 indices");
                    for (std::size_t k = 1; k + 1 < list_values.size(); ++k)
                        data.faces.push_back({static_cast<std::uint32_t>(list_values[0]),
                                              static_cast<std::uint32_t>(list_values[k]),
                                              static_cast<std::uint32_t>(list_values[k + 1])});
                }
            }
            if (is_vertex) {
                data.points.push_back(pt);
                if (has_normals) data.normals.push_back(nrm);
            }
        }
    }
    return data;
}

namespace detail {

inline void filter_degenerate_faces(TriMesh& mesh) {
    std::vector<std::array<std::uint32_t, 3>> kept;
    kept.reserve(mesh.faces.size());
    for (const auto& f : mesh.faces) {
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
        if (f[0] >= mesh.vertices.size() || f[1] >= mesh.vertices.size() ||
            f[2] >= mesh.vertices.size())
            throw Error(ErrorCode::MalformedFile, "mesh: face index out of range");
        const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        if (e1.cross(e2).norm() <= 1e-30) continue;
        kept.push_back(f);
    }
    mesh.faces = std::move(kept);
}

inline TriMesh load_obj(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    TriMesh mesh;
    std::istringstream in(bytes);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string tok;
        if (!(ss >> tok)) continue;
        if (tok == "v") {
            Vec3 v;
            if (!(ss >> v.x() >> v.y() >> v.z()))
                throw Error(ErrorCode::MalformedFile,
                            path.string() + ": bad vertex at line " + std::to_string(line_no));
            mesh.vertices.push_back(v);
        } else if (tok == "f") {
            std::vector<std::uint32_t> idx;
            std::string ref;
            while (ss >> ref) {
                const std::size_t slash = ref.find('/');
                const std::string first = slash == std::string::npos ? ref : ref.substr(0, slash);
                long v = 0;
                const auto res =
                    std::from_chars(first.data(), first.data() + first.size(), v);
                if (res.ec != std::errc() || v == 0)
                    throw Error(ErrorCode::MalformedFile,
                                path.string() + ": bad face index '" + ref + "' at line " +
                                    std::to_string(line_no) + " (indices are 1-based)");
                if (v < 0)
                    v = static_cast<long>(mesh.vertices.size()) + v + 1;
                if (v < 1 || static_cast<std::size_t>(v) > mesh.vertices.size())
                    throw Error(ErrorCode::MalformedFile,
                                path.string() + ": face index out of range at line " +
                                    std::to_string(line_no));
                idx.push_back(static_cast<std::uint32_t>(v - 1));
            }
            if (idx.size() < 3)
                throw Error(ErrorCode::MalformedFile,
                            path.string() + ": face with fewer than 3 vertices at line " +
                                std::to_string(line_no));
            for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
        }
        // other record types ignored
    }
    return mesh;
}

}  // namespace detail

// ASCII/binary-little-endian PLY or ASCII OBJ (v/f records), dispatched on
// extension. Non-triangle faces are fan-triangulated and zero-area faces
// dropped.
inline TriMesh load_mesh(const std::filesystem::path& path) {
    TriMesh mesh;
    if (path.extension() == ".obj") {
        mesh = detail::load_obj(path);
    } else {
        const PlyData data = load_ply(path);
        mesh.vertices = data.points;
        mesh.faces = data.faces;
    }
    if (mesh.vertices.empty())
        throw Error(ErrorCode::EmptyMesh, path.string() + ": no vertices");
    detail::filter_degenerate_faces(mesh);
    if (mesh.faces.empty())
        throw Error(ErrorCode::EmptyMesh, path.string() + ": no usable faces");
    return mesh;
}

struct LoadedCloud {
    OrientedPointCloud cloud;
    bool normals_estimated = false;
    Vec3 viewpoint = Vec3::Zero();  // used when normals were estimated
};

// PLY cloud with x,y,z and optional nx,ny,nz; normals are estimated
// (k-NN PCA toward the viewpoint) when the file has none.
inline LoadedCloud load_cloud(const std::filesystem::path& path,
                              const Vec3& viewpoint = Vec3::Zero(), int k = 10) {
    const PlyData data = load_ply(path);
    if (data.points.empty()) throw Error(ErrorCode::EmptyCloud, path.string() + ": no points");
    LoadedCloud out;
    out.viewpoint = viewpoint;
    if (!data.normals.empty()) {
        out.cloud.points = data.points;
        out.cloud.normals = data.normals;
        // rescale only when meaningfully off unit length, so files with
        // unit normals round-trip bit exactly
        for (Vec3& n : out.cloud.normals) {
            const double len = n.norm();
            if (len > 1e-12 && std::abs(len - 1.0) > 1e-6) n /= len;
        }
    } else {
        const int kk = std::min<int>(k, static_cast<int>(data.points.size()));
        if (kk < 3) throw Error(ErrorCode::EmptyCloud, path.string() + ": too few points");
        out.cloud = estimate_normals(data.points, kk, viewpoint);
        out.normals_estimated = true;
    }
    return out;
}

// Binary little-endian PLY with double precision positions and normals.
inline std::string cloud_to_ply(const OrientedPointCloud& cloud) {
    std::string out;
    out += "ply\nformat binary_little_endian 1.0\n";
    out += "element vertex " + std::to_string(cloud.size()) + "\n";
    out += "property double x\nproperty double y\nproperty double z\n";
    out += "property double nx\nproperty double ny\nproperty double nz\n";
    out += "end_header\n";
    out.reserve(out.size() + cloud.size() * 48);
    auto put = [&out](double v) { out.append(reinterpret_cast<const char*>(&v), 8); };
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        for (int kk = 0; kk < 3; ++kk) put(cloud.points[i][kk]);
        for (int kk = 0; kk < 3; ++kk) put(cloud.normals[i][kk]);
    }
    return out;
}

inline void save_cloud(const OrientedPointCloud& cloud, const std::filesystem::path& path) {
    atomic_write_file(path, cloud_to_ply(cloud));
}

inline std::string mesh_to_ply(const TriMesh& mesh) {
    std::string out;
    out += "ply\nformat binary_little_endian 1.0\n";
    out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
    out += "property double x\nproperty double y\nproperty double z\n";
    out += "element face " + std::to_string(mesh.faces.size()) + "\n";
    out += "property list uchar uint vertex_indices\n";
    out += "end_header\n";
    auto put = [&out](const void* p, std::size_t n) {
        out.append(static_cast<const char*>(p), n);
    };
    for (const Vec3& v : mesh.vertices)
        for (int k = 0; k < 3; ++k) {
            const double d = v[k];
            put(&d, 8);
        }
    for (const auto& f : mesh.faces) {
        const std::uint8_t n = 3;
        put(&n, 1);
        for (std::uint32_t idx : f) put(&idx, 4);
    }
    return out;
}

inline void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
    atomic_write_file(path, mesh_to_ply(mesh));
}

}  // namespace cadrec
