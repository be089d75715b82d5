#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "simpc/error.hpp"
#include "simpc/geometry.hpp"

namespace simpc::io {

// Shortest-faithful double formatting used by every writer, so repeated runs
// produce byte-identical files.
inline std::string g17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace detail {

inline std::ifstream open_in(const std::string& path, bool binary = false) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) throw IoError("cannot open for reading: " + path);
    return f;
}

inline std::ofstream open_out(const std::string& path, bool binary = false) {
    std::ofstream f(path, binary ? (std::ios::binary | std::ios::trunc) : std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

inline double parse_coord(const std::string& tok, size_t line_no) {
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw ParseError("bad numeric token '" + tok + "'", line_no);
    if (!std::isfinite(v)) throw ParseError("non-finite coordinate '" + tok + "'", line_no);
    return v;
}

// next non-empty, non-comment line; bumps the counter for every line read
inline bool next_line(std::istream& in, std::string& line, size_t& line_no, char comment = '#') {
    while (std::getline(in, line)) {
        ++line_no;
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == comment) continue;
        return true;
    }
    return false;
}

} // namespace detail

// --------------------------------- XYZ ------------------------------------

inline void write_xyz(const std::string& path, const PointCloud& cloud) {
    auto f = detail::open_out(path);
    for (const Vec3& p : cloud.pts)
        f << g17(p[0]) << ' ' << g17(p[1]) << ' ' << g17(p[2]) << '\n';
    if (!f) throw IoError("write failed: " + path);
}

inline PointCloud read_xyz(const std::string& path) {
    auto f = detail::open_in(path);
    PointCloud cloud;
    std::string line;
    size_t line_no = 0;
    while (detail::next_line(f, line, line_no)) {
        std::istringstream ss(line);
        std::string a, b, c;
        if (!(ss >> a >> b >> c)) throw ParseError("expected three coordinates", line_no);
        cloud.pts.push_back({detail::parse_coord(a, line_no), detail::parse_coord(b, line_no),
                             detail::parse_coord(c, line_no)});
    }
    if (cloud.pts.empty()) throw ParseError("no points in file " + path, line_no);
    return cloud;
}

// --------------------------------- PLY ------------------------------------

inline void write_ply(const std::string& path, const PointCloud& cloud, bool binary = false) {
    auto f = detail::open_out(path, binary);
    f << "ply\n"
      << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "end_header\n";
    if (binary) {
        for (const Vec3& p : cloud.pts)
            f.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(double));
    } else {
        for (const Vec3& p : cloud.pts)
            f << g17(p[0]) << ' ' << g17(p[1]) << ' ' << g17(p[2]) << '\n';
    }
    if (!f) throw IoError("write failed: " + path);
}

inline PointCloud read_ply(const std::string& path) {
    auto f = detail::open_in(path, true);
    std::string line;
    size_t line_no = 0;
    if (!std::getline(f, line)) throw ParseError("empty file " + path, 1);
    ++line_no;
    if (line.rfind("ply", 0) != 0) throw ParseError("missing ply magic", line_no);

    bool binary = false;
    size_t n_vertex = 0;
    bool in_vertex_element = false;
    struct Prop { std::string name; bool is_double; };
    std::vector<Prop> vertex_props;

    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw == "comment" || kw.empty()) continue;
        if (kw == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "ascii") binary = false;
            else if (fmt == "binary_little_endian") binary = true;
            else throw ParseError("unsupported ply format '" + fmt + "'", line_no);
        } else if (kw == "element") {
            std::string name;
            size_t count = 0;
            ss >> name >> count;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element) n_vertex = count;
        } else if (kw == "property") {
            if (!in_vertex_element) continue;
            std::string type, name;
            ss >> type >> name;
            if (type == "list") throw ParseError("list property on vertex element unsupported", line_no);
            bool is_double = (type == "double" || type == "float64");
            bool is_float = (type == "float" || type == "float32");
            if (!is_double && !is_float)
                throw ParseError("unsupported vertex property type '" + type + "'", line_no);
            vertex_props.push_back({name, is_double});
        } else if (kw == "end_header") {
            break;
        } else if (kw != "obj_info") {
            throw ParseError("unexpected header keyword '" + kw + "'", line_no);
        }
    }
    if (n_vertex == 0) throw ParseError("ply file has no vertices", line_no);
    int ix = -1, iy = -1, iz = -1;
    for (size_t i = 0; i < vertex_props.size(); ++i) {
        if (vertex_props[i].name == "x") ix = static_cast<int>(i);
        if (vertex_props[i].name == "y") iy = static_cast<int>(i);
        if (vertex_props[i].name == "z") iz = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0) throw ParseError("ply vertex element lacks x/y/z", line_no);

    PointCloud cloud;
    cloud.pts.resize(n_vertex);
    if (binary) {
        for (size_t v = 0; v < n_vertex; ++v) {
            std::vector<double> vals(vertex_props.size());
            for (size_t p = 0; p < vertex_props.size(); ++p) {
                if (vertex_props[p].is_double) {
                    double d;
                    f.read(reinterpret_cast<char*>(&d), sizeof(d));
                    vals[p] = d;
                } else {
                    float fl;
                    f.read(reinterpret_cast<char*>(&fl), sizeof(fl));
                    vals[p] = fl;
                }
            }
            if (!f) throw ParseError("truncated binary vertex data at vertex " + std::to_string(v), line_no);
            cloud.pts[v] = {vals[ix], vals[iy], vals[iz]};
            for (double c : cloud.pts[v])
                if (!std::isfinite(c))
                    throw ParseError("non-finite coordinate at vertex " + std::to_string(v), line_no);
        }
    } else {
        for (size_t v = 0; v < n_vertex; ++v) {
            if (!detail::next_line(f, line, line_no, '\0'))
                throw ParseError("missing vertex row " + std::to_string(v), line_no);
            std::istringstream ss(line);
            std::vector<double> vals(vertex_props.size());
            for (size_t p = 0; p < vertex_props.size(); ++p) {
                std::string tok;
                if (!(ss >> tok)) throw ParseError("short vertex row", line_no);
                vals[p] = detail::parse_coord(tok, line_no);
            }
            cloud.pts[v] = {vals[ix], vals[iy], vals[iz]};
        }
    }
    return cloud;
}

// --------------------------------- OFF ------------------------------------

inline void write_off(const std::string& path, const TriangleMesh& mesh) {
    auto f = detail::open_out(path);
    f << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
    for (const Vec3& v : mesh.vertices)
        f << g17(v[0]) << ' ' << g17(v[1]) << ' ' << g17(v[2]) << '\n';
    for (const auto& face : mesh.faces)
        f << "3 " << face[0] << ' ' << face[1] << ' ' << face[2] << '\n';
    if (!f) throw IoError("write failed: " + path);
}

inline TriangleMesh read_off(const std::string& path) {
    auto f = detail::open_in(path);
    std::string line;
    size_t line_no = 0;
    if (!detail::next_line(f, line, line_no)) throw ParseError("empty OFF file " + path, line_no);
    if (line.rfind("OFF", 0) != 0) throw ParseError("missing OFF magic", line_no);

    size_t nv = 0, nf = 0, ne = 0;
    {
        // counts may share the magic line ("OFF 8 12 0") or follow it
        std::istringstream ss(line.substr(3));
        if (!(ss >> nv >> nf >> ne)) {
            if (!detail::next_line(f, line, line_no)) throw ParseError("missing counts line", line_no);
            std::istringstream ss2(line);
            if (!(ss2 >> nv >> nf >> ne)) throw ParseError("bad counts line", line_no);
        }
    }
    TriangleMesh mesh;
    mesh.vertices.resize(nv);
    for (size_t i = 0; i < nv; ++i) {
        if (!detail::next_line(f, line, line_no)) throw ParseError("missing vertex row", line_no);
        std::istringstream ss(line);
        std::string a, b, c;
        if (!(ss >> a >> b >> c)) throw ParseError("short vertex row", line_no);
        mesh.vertices[i] = {detail::parse_coord(a, line_no), detail::parse_coord(b, line_no),
                            detail::parse_coord(c, line_no)};
    }
    mesh.faces.resize(nf);
    for (size_t i = 0; i < nf; ++i) {
        if (!detail::next_line(f, line, line_no)) throw ParseError("missing face row", line_no);
        std::istringstream ss(line);
        int cnt = 0;
        if (!(ss >> cnt)) throw ParseError("bad face row", line_no);
        if (cnt != 3) throw ParseError("only triangle faces are supported", line_no);
        if (!(ss >> mesh.faces[i][0] >> mesh.faces[i][1] >> mesh.faces[i][2]))
            throw ParseError("short face row", line_no);
    }
    mesh.validate();
    return mesh;
}

// Dispatch on extension: .xyz / .ply.
inline PointCloud read_cloud(const std::string& path) {
    auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".xyz") return read_xyz(path);
    if (ext == ".ply") return read_ply(path);
    throw IoError("unknown point cloud extension: " + path);
}

inline void write_cloud(const std::string& path, const PointCloud& cloud) {
    auto dot = path.find_last_of('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".xyz") return write_xyz(path, cloud);
    if (ext == ".ply") return write_ply(path, cloud);
    throw IoError("unknown point cloud extension: " + path);
}

} // namespace simpc::io
