#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sslam/point_cloud.hpp"

namespace sslam {

static_assert(std::endian::native == std::endian::little, "PLY binary I/O assumes a little-endian host");

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_type(const std::string& s) {
    if (s == "char" || s == "int8") return PlyType::Int8;
    if (s == "uchar" || s == "uint8") return PlyType::UInt8;
    if (s == "short" || s == "int16") return PlyType::Int16;
    if (s == "ushort" || s == "uint16") return PlyType::UInt16;
    if (s == "int" || s == "int32") return PlyType::Int32;
    if (s == "uint" || s == "uint32") return PlyType::UInt32;
    if (s == "float" || s == "float32") return PlyType::Float32;
    if (s == "double" || s == "float64") return PlyType::Float64;
    throw FormatError("ply: unknown property type " + s);
}

struct Property {
    std::string name;
    PlyType type = PlyType::Float32;
    bool is_list = false;
    PlyType count_type = PlyType::UInt8;
};

struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
};

struct Header {
    bool binary = false;
    std::vector<Element> elements;
};

template <typename T>
T read_raw(std::istream& in) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("ply: unexpected end of data");
    return v;
}

double read_value(std::istream& in, PlyType t, bool binary) {
    if (!binary) {
        std::string tok;
        if (!(in >> tok)) throw FormatError("ply: malformed ascii value");
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str()) throw FormatError("ply: malformed ascii value " + tok);
        return v;
    }
    switch (t) {
        case PlyType::Int8: return read_raw<std::int8_t>(in);
        case PlyType::UInt8: return read_raw<std::uint8_t>(in);
        case PlyType::Int16: return read_raw<std::int16_t>(in);
        case PlyType::UInt16: return read_raw<std::uint16_t>(in);
        case PlyType::Int32: return read_raw<std::int32_t>(in);
        case PlyType::UInt32: return read_raw<std::uint32_t>(in);
        case PlyType::Float32: return read_raw<float>(in);
        case PlyType::Float64: return read_raw<double>(in);
    }
    return 0.0;
}

Header read_header(std::istream& in) {
    std::string line;
    std::getline(in, line);
    if (line.rfind("ply", 0) != 0) throw FormatError("ply: missing magic");
    Header h;
    bool have_format = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "ascii") {
                h.binary = false;
            } else if (fmt == "binary_little_endian") {
                h.binary = true;
            } else {
                throw FormatError("ply: unsupported format " + fmt);
            }
            have_format = true;
        } else if (kw == "element") {
            Element e;
            ss >> e.name >> e.count;
            h.elements.push_back(e);
        } else if (kw == "property") {
            if (h.elements.empty()) throw FormatError("ply: property before element");
            Property p;
            std::string t;
            ss >> t;
            if (t == "list") {
                std::string ct, it;
                ss >> ct >> it >> p.name;
                p.is_list = true;
                p.count_type = parse_type(ct);
                p.type = parse_type(it);
            } else {
                p.type = parse_type(t);
                ss >> p.name;
            }
            h.elements.back().props.push_back(p);
        } else if (kw == "end_header") {
            if (!have_format) throw FormatError("ply: missing format line");
            return h;
        }
    }
    throw FormatError("ply: missing end_header");
}

struct PlyData {
    PointCloud cloud;
    std::vector<Eigen::Vector3i> faces;
};

PlyData read_ply_data(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open ply file: " + path.string());
    const Header h = read_header(in);
    PlyData out;
    for (const auto& e : h.elements) {
        if (e.name == "vertex") {
            auto find = [&](const char* n) {
                for (std::size_t i = 0; i < e.props.size(); ++i) {
                    if (e.props[i].name == n) return static_cast<int>(i);
                }
                return -1;
            };
            const int ix = find("x"), iy = find("y"), iz = find("z");
            if (ix < 0 || iy < 0 || iz < 0) throw FormatError("ply: vertex lacks x/y/z");
            const int inx = find("nx"), iny = find("ny"), inz = find("nz");
            const int ir = find("red"), ig = find("green"), ib = find("blue");
            const bool normals = inx >= 0 && iny >= 0 && inz >= 0;
            const bool colors = ir >= 0 && ig >= 0 && ib >= 0;
            std::vector<double> vals(e.props.size());
            for (std::size_t v = 0; v < e.count; ++v) {
                for (std::size_t p = 0; p < e.props.size(); ++p) {
                    if (e.props[p].is_list) throw FormatError("ply: list property on vertex");
                    vals[p] = read_value(in, e.props[p].type, h.binary);
                }
                out.cloud.positions.emplace_back(vals[ix], vals[iy], vals[iz]);
                if (normals) out.cloud.normals.emplace_back(vals[inx], vals[iny], vals[inz]);
                if (colors) {
                    const double scale = e.props[ir].type == PlyType::UInt8 ? 1.0 / 255.0 : 1.0;
                    out.cloud.colors.emplace_back(vals[ir] * scale, vals[ig] * scale, vals[ib] * scale);
                }
            }
        } else {
            for (std::size_t v = 0; v < e.count; ++v) {
                for (const auto& p : e.props) {
                    if (p.is_list) {
                        const auto n = static_cast<std::size_t>(read_value(in, p.count_type, h.binary));
                        std::vector<int> idx(n);
                        for (std::size_t k = 0; k < n; ++k) {
                            idx[k] = static_cast<int>(read_value(in, p.type, h.binary));
                        }
                        if (e.name == "face") {
                            for (std::size_t k = 2; k < n; ++k) out.faces.emplace_back(idx[0], idx[k - 1], idx[k]);
                        }
                    } else {
                        read_value(in, p.type, h.binary);
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
void write_raw(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::uint8_t to_byte(double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

void write_ply_impl(const std::filesystem::path& path, const PointCloud& cloud,
                    const std::vector<Eigen::Vector3i>* faces, PlyFormat format) {
    cloud.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write ply file: " + path.string());
    const bool binary = format == PlyFormat::BinaryLittleEndian;
    const bool normals = cloud.has_normals();
    const bool colors = cloud.has_colors();
    out << std::setprecision(9);
    out << "ply\n"
        << "format " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
        << "element vertex " << cloud.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n";
    if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
    if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (faces) {
        out << "element face " << faces->size() << "\n"
            << "property list uchar int vertex_indices\n";
    }
    out << "end_header\n";

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        if (binary) {
            for (int k = 0; k < 3; ++k) write_raw(out, static_cast<float>(p[k]));
            if (normals) {
                for (int k = 0; k < 3; ++k) write_raw(out, static_cast<float>(cloud.normals[i][k]));
            }
            if (colors) {
                for (int k = 0; k < 3; ++k) write_raw(out, to_byte(cloud.colors[i][k]));
            }
        } else {
            out << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' '
                << static_cast<float>(p.z());
            if (normals) {
                for (int k = 0; k < 3; ++k) out << ' ' << static_cast<float>(cloud.normals[i][k]);
            }
            if (colors) {
                for (int k = 0; k < 3; ++k) out << ' ' << static_cast<int>(to_byte(cloud.colors[i][k]));
            }
            out << '\n';
        }
    }
    if (faces) {
        for (const auto& f : *faces) {
            if (binary) {
                write_raw(out, std::uint8_t{3});
                for (int k = 0; k < 3; ++k) write_raw(out, static_cast<std::int32_t>(f[k]));
            } else {
                out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
            }
        }
    }
}

}  // namespace

void write_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyFormat format) {
    write_ply_impl(path, cloud, nullptr, format);
}

void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh, PlyFormat format) {
    PointCloud verts;
    verts.positions = mesh.vertices;
    write_ply_impl(path, verts, &mesh.triangles, format);
}

PointCloud read_ply(const std::filesystem::path& path) { return read_ply_data(path).cloud; }

TriangleMesh read_ply_mesh(const std::filesystem::path& path) {
    PlyData d = read_ply_data(path);
    TriangleMesh mesh;
    mesh.vertices = std::move(d.cloud.positions);
    mesh.triangles = std::move(d.faces);
    for (const auto& t : mesh.triangles) {
        for (int k = 0; k < 3; ++k) {
            if (t[k] < 0 || static_cast<std::size_t>(t[k]) >= mesh.vertices.size()) {
                throw FormatError("ply: face index out of range");
            }
        }
    }
    mesh.compute_face_normals();
    return mesh;
}

}  // namespace sslam
