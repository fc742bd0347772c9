#include "lmmreg/io.hpp"

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lmmreg/errors.hpp"

namespace lmmreg {

namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct PlyProperty {
    std::string name;
    int size = 0;       // scalar byte size
    bool is_float = false;
    bool is_list = false;
    int count_size = 0;  // list count byte size
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

int scalar_size(const std::string& t) {
    if (t == "char" || t == "int8" || t == "uchar" || t == "uint8") return 1;
    if (t == "short" || t == "int16" || t == "ushort" || t == "uint16") return 2;
    if (t == "int" || t == "int32" || t == "uint" || t == "uint32" ||
        t == "float" || t == "float32")
        return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

bool is_float_type(const std::string& t) {
    return t == "float" || t == "float32" || t == "double" || t == "float64";
}

double read_scalar_le(const char* p, int size, bool is_float) {
    if (is_float) {
        if (size == 4) {
            float f;
            std::memcpy(&f, p, 4);
            return f;
        }
        double d;
        std::memcpy(&d, p, 8);
        return d;
    }
    // Integers only ever appear in skipped properties and list counts.
    std::int64_t v = 0;
    std::memcpy(&v, p, size);
    return static_cast<double>(v);
}

PointCloud read_ply(const std::string& path, const std::string& data) {
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::string {
        const std::size_t end = data.find('\n', pos);
        if (end == std::string::npos)
            throw ParseError(path + ": unexpected end of header", line_no);
        std::string line = data.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        pos = end + 1;
        ++line_no;
        return line;
    };

    if (next_line() != "ply") throw ParseError(path + ": missing ply magic", 1);

    bool binary = false;
    bool saw_format = false;
    std::vector<PlyElement> elements;
    for (;;) {
        const std::string line = next_line();
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
        if (kw == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "ascii")
                binary = false;
            else if (fmt == "binary_little_endian")
                binary = true;
            else
                throw UnsupportedFormat(path + ": unsupported PLY format '" +
                                        fmt + "'");
            saw_format = true;
        } else if (kw == "element") {
            PlyElement el;
            ss >> el.name >> el.count;
            elements.push_back(el);
        } else if (kw == "property") {
            if (elements.empty())
                throw ParseError(path + ": property before element", line_no);
            std::string type;
            ss >> type;
            PlyProperty prop;
            if (type == "list") {
                std::string ctype, itype;
                ss >> ctype >> itype >> prop.name;
                prop.is_list = true;
                prop.count_size = scalar_size(ctype);
                prop.size = scalar_size(itype);
                if (prop.count_size == 0 || prop.size == 0)
                    throw ParseError(path + ": unknown list type", line_no);
            } else {
                ss >> prop.name;
                prop.size = scalar_size(type);
                prop.is_float = is_float_type(type);
                if (prop.size == 0)
                    throw ParseError(path + ": unknown property type '" + type +
                                     "'", line_no);
            }
            elements.back().properties.push_back(prop);
        } else if (kw == "end_header") {
            break;
        } else {
            throw ParseError(path + ": unknown header keyword '" + kw + "'",
                             line_no);
        }
    }
    if (!saw_format) throw ParseError(path + ": missing format line", line_no);

    int xi = -1, yi = -1, zi = -1;
    const PlyElement* vertex = nullptr;
    for (const auto& el : elements) {
        if (el.name != "vertex") continue;
        vertex = &el;
        for (std::size_t p = 0; p < el.properties.size(); ++p) {
            const auto& prop = el.properties[p];
            if (prop.is_list) continue;
            if (prop.name == "x") xi = static_cast<int>(p);
            if (prop.name == "y") yi = static_cast<int>(p);
            if (prop.name == "z") zi = static_cast<int>(p);
        }
    }
    if (!vertex || xi < 0 || yi < 0 || zi < 0)
        throw UnsupportedFormat(path + ": no vertex element with x, y, z");
    for (int p : {xi, yi, zi})
        if (!vertex->properties[p].is_float)
            throw UnsupportedFormat(path + ": x/y/z must be float or double");

    PointCloud cloud;
    cloud.name = path;

    if (!binary) {
        for (const auto& el : elements) {
            for (std::size_t row = 0; row < el.count; ++row) {
                const std::size_t end = data.find('\n', pos);
                std::string line = data.substr(
                    pos, end == std::string::npos ? std::string::npos
                                                  : end - pos);
                pos = end == std::string::npos ? data.size() : end + 1;
                ++line_no;
                if (&el != vertex) continue;
                std::istringstream ss(line);
                Vec3 p;
                bool got[3] = {false, false, false};
                for (std::size_t pi = 0; pi < el.properties.size(); ++pi) {
                    const auto& prop = el.properties[pi];
                    if (prop.is_list) {
                        std::size_t n;
                        if (!(ss >> n))
                            throw ParseError(path + ": bad list count", line_no);
                        double skip;
                        for (std::size_t k = 0; k < n; ++k) ss >> skip;
                        continue;
                    }
                    double v;
                    if (!(ss >> v))
                        throw ParseError(path + ": short vertex row", line_no);
                    if (static_cast<int>(pi) == xi) p.x() = v, got[0] = true;
                    if (static_cast<int>(pi) == yi) p.y() = v, got[1] = true;
                    if (static_cast<int>(pi) == zi) p.z() = v, got[2] = true;
                }
                if (!(got[0] && got[1] && got[2]))
                    throw ParseError(path + ": incomplete vertex", line_no);
                cloud.points.push_back(p);
            }
        }
    } else {
        for (const auto& el : elements) {
            for (std::size_t row = 0; row < el.count; ++row) {
                Vec3 p = Vec3::Zero();
                for (std::size_t pi = 0; pi < el.properties.size(); ++pi) {
                    const auto& prop = el.properties[pi];
                    if (prop.is_list) {
                        if (pos + prop.count_size > data.size())
                            throw ParseError(path + ": truncated list count",
                                             pos);
                        const double n = read_scalar_le(data.data() + pos,
                                                        prop.count_size, false);
                        pos += prop.count_size;
                        const std::size_t bytes =
                            static_cast<std::size_t>(n) * prop.size;
                        if (pos + bytes > data.size())
                            throw ParseError(path + ": truncated list", pos);
                        pos += bytes;
                        continue;
                    }
                    if (pos + prop.size > data.size())
                        throw ParseError(path + ": truncated body", pos);
                    if (&el == vertex) {
                        const double v = read_scalar_le(data.data() + pos,
                                                        prop.size,
                                                        prop.is_float);
                        if (static_cast<int>(pi) == xi) p.x() = v;
                        if (static_cast<int>(pi) == yi) p.y() = v;
                        if (static_cast<int>(pi) == zi) p.z() = v;
                    }
                    pos += prop.size;
                }
                if (&el == vertex) cloud.points.push_back(p);
            }
        }
    }
    if (cloud.points.empty())
        throw ParseError(path + ": PLY holds no vertices", line_no);
    return cloud;
}

PointCloud read_xyz(const std::string& path, const std::string& data) {
    PointCloud cloud;
    cloud.name = path;
    std::istringstream in(data);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        Vec3 p;
        if (!(ss >> p.x())) continue;  // blank or comment-only line
        if (!(ss >> p.y() >> p.z()))
            throw ParseError(path + ": expected 3 coordinates", line_no);
        cloud.points.push_back(p);
    }
    if (cloud.points.empty())
        throw ParseError(path + ": no points found", line_no);
    return cloud;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

PointCloud read_cloud(const std::string& path) {
    const std::string data = slurp(path);
    if (data.rfind("ply", 0) == 0 &&
        (data.size() == 3 || data[3] == '\n' || data[3] == '\r'))
        return read_ply(path, data);
    return read_xyz(path, data);
}

void write_cloud(const PointCloud& cloud, const std::string& path,
                 CloudFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    switch (format) {
        case CloudFormat::PlyAscii:
        case CloudFormat::PlyBinary: {
            out << "ply\n"
                << (format == CloudFormat::PlyAscii
                        ? "format ascii 1.0\n"
                        : "format binary_little_endian 1.0\n")
                << "element vertex " << cloud.points.size() << "\n"
                << "property double x\nproperty double y\nproperty double z\n"
                << "end_header\n";
            if (format == CloudFormat::PlyAscii) {
                for (const auto& p : cloud.points)
                    out << format_double(p.x()) << ' ' << format_double(p.y())
                        << ' ' << format_double(p.z()) << '\n';
            } else {
                for (const auto& p : cloud.points) {
                    double c[3] = {p.x(), p.y(), p.z()};
                    out.write(reinterpret_cast<const char*>(c), sizeof(c));
                }
            }
            break;
        }
        case CloudFormat::Xyz:
            for (const auto& p : cloud.points)
                out << format_double(p.x()) << ' ' << format_double(p.y())
                    << ' ' << format_double(p.z()) << '\n';
            break;
    }
    if (!out) throw IoError("write failed for '" + path + "'");
}

namespace {

json transform_to_json(const RigidTransform& T) {
    json j;
    j["rotation"] = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) j["rotation"].push_back(T.rotation(r, c));
    j["translation"] = {T.translation.x(), T.translation.y(),
                        T.translation.z()};
    return j;
}

RigidTransform transform_from_json(const json& j) {
    RigidTransform T;
    const auto& rot = j.at("rotation");
    const auto& tr = j.at("translation");
    if (rot.size() != 9 || tr.size() != 3)
        throw ParseError("transform: rotation must have 9 entries, translation 3", 0);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) T.rotation(r, c) = rot[3 * r + c];
    for (int c = 0; c < 3; ++c) T.translation[c] = tr[c];
    if (!is_rotation(T.rotation, 1e-6))
        throw ParseError("transform: rotation block is not in SO(3)", 0);
    return T;
}

json parse_json_file(const std::string& path) {
    const std::string data = slurp(path);
    try {
        return json::parse(data);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what(), e.byte);
    }
}

}  // namespace

GroundTruth load_ground_truth(const std::string& path) {
    const json j = parse_json_file(path);
    if (!j.is_array() || j.size() < 2)
        throw ParseError(path + ": expected an array of >= 2 transforms", 0);
    GroundTruth gt;
    try {
        for (const auto& t : j) gt.transforms.push_back(transform_from_json(t));
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what(), 0);
    }
    return gt;
}

void save_ground_truth(const GroundTruth& gt, const std::string& path) {
    json j = json::array();
    for (const auto& T : gt.transforms) j.push_back(transform_to_json(T));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

void save_result(const ResultRecord& rec, const std::string& path) {
    json j;
    j["views"] = json::array();
    for (const auto& T : rec.transforms) j["views"].push_back(transform_to_json(T));
    j["scale_b"] = rec.scale_b;
    j["iterations"] = rec.iterations;
    j["converged"] = rec.converged;
    j["wall_time_s"] = rec.wall_time_s;
    j["solver"] = rec.solver;
    if (rec.e_R) j["e_R"] = *rec.e_R;
    if (rec.e_t) j["e_t"] = *rec.e_t;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

ResultRecord load_result(const std::string& path) {
    const json j = parse_json_file(path);
    ResultRecord rec;
    try {
        for (const auto& t : j.at("views"))
            rec.transforms.push_back(transform_from_json(t));
        rec.scale_b = j.at("scale_b");
        rec.iterations = j.at("iterations");
        rec.converged = j.at("converged");
        rec.wall_time_s = j.value("wall_time_s", 0.0);
        rec.solver = j.value("solver", "");
        if (j.contains("e_R")) rec.e_R = j["e_R"].get<double>();
        if (j.contains("e_t")) rec.e_t = j["e_t"].get<double>();
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what(), 0);
    }
    return rec;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

}  // namespace lmmreg
