#include "g2s/ply.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "g2s/error.hpp"

namespace g2s {

static_assert(std::endian::native == std::endian::little,
              "binary PLY I/O assumes a little-endian host");

namespace {

struct Property {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

std::size_t type_size(const std::string& t, const std::string& file) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" ||
      t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw FormatError(file, "property type", "unknown type '" + t + "'");
}

double read_binary(std::istream& in, const std::string& t,
                   const std::string& file) {
  unsigned char buf[8];
  const std::size_t n = type_size(t, file);
  if (!in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n))) {
    throw FormatError(file, "vertex data", "unexpected end of file");
  }
  auto as = [&buf]<class T>(T) {
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return as(std::int8_t{});
  if (t == "uchar" || t == "uint8") return as(std::uint8_t{});
  if (t == "short" || t == "int16") return as(std::int16_t{});
  if (t == "ushort" || t == "uint16") return as(std::uint16_t{});
  if (t == "int" || t == "int32") return as(std::int32_t{});
  if (t == "uint" || t == "uint32") return as(std::uint32_t{});
  if (t == "float" || t == "float32") return as(float{});
  return as(double{});
}

}  // namespace

const std::vector<double>& PlyVertices::column(const std::string& name,
                                               const std::string& file) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return columns[i];
  throw FormatError(file, name, "vertex property missing");
}

PlyVertices read_ply_vertices(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "file", "cannot open");
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw FormatError(path, "magic", "not a PLY file");
  std::string format;
  std::vector<Element> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      ls >> format;
    } else if (word == "element") {
      Element e;
      if (!(ls >> e.name >> e.count)) throw FormatError(path, "element", line);
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw FormatError(path, "property", "before element");
      Property p;
      ls >> p.type;
      if (p.type == "list") {
        p.is_list = true;
        ls >> p.count_type >> p.type;
      }
      if (!(ls >> p.name)) throw FormatError(path, "property", line);
      elements.back().props.push_back(p);
    }
  }
  const bool ascii = format == "ascii";
  if (!ascii && format != "binary_little_endian") {
    throw FormatError(path, "format", "unsupported '" + format + "'");
  }
  PlyVertices out;
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    if (is_vertex) {
      out.count = e.count;
      for (const auto& p : e.props) {
        if (p.is_list) throw FormatError(path, p.name, "list in vertex element");
        out.names.push_back(p.name);
        out.columns.emplace_back();
        out.columns.back().reserve(e.count);
      }
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      if (ascii) {
        if (!std::getline(in, line)) {
          throw FormatError(path, e.name + " data", "unexpected end of file");
        }
        if (!is_vertex) continue;
        std::istringstream ls(line);
        for (std::size_t c = 0; c < e.props.size(); ++c) {
          double v;
          if (!(ls >> v)) throw FormatError(path, e.props[c].name, "bad value");
          out.columns[c].push_back(v);
        }
      } else {
        for (std::size_t c = 0; c < e.props.size(); ++c) {
          const auto& p = e.props[c];
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(
                read_binary(in, p.count_type, path));
            for (std::size_t i = 0; i < n; ++i) read_binary(in, p.type, path);
            continue;
          }
          const double v = read_binary(in, p.type, path);
          if (is_vertex) out.columns[c].push_back(v);
        }
      }
    }
    if (is_vertex) break;
  }
  return out;
}

void write_ply_vertices(const std::string& path,
                        const std::vector<std::string>& names,
                        const std::vector<std::vector<double>>& columns,
                        PlyFormat format) {
  if (names.size() != columns.size()) {
    throw std::invalid_argument("write_ply_vertices: names/columns mismatch");
  }
  const std::size_t n = columns.empty() ? 0 : columns[0].size();
  for (const auto& c : columns)
    if (c.size() != n) {
      throw std::invalid_argument("write_ply_vertices: ragged columns");
    }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path, "file", "cannot open for writing");
  const bool ascii = format == PlyFormat::kAscii;
  out << "ply\nformat " << (ascii ? "ascii" : "binary_little_endian")
      << " 1.0\nelement vertex " << n << '\n';
  for (const auto& name : names) out << "property float " << name << '\n';
  out << "end_header\n";
  if (ascii) out.precision(9);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const float v = static_cast<float>(columns[c][r]);
      if (ascii) {
        out << v << (c + 1 == columns.size() ? '\n' : ' ');
      } else {
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
  if (!out) throw FormatError(path, "file", "write failed");
}

PointCloud read_ply_cloud(const std::string& path) {
  const auto v = read_ply_vertices(path);
  const auto& x = v.column("x", path);
  const auto& y = v.column("y", path);
  const auto& z = v.column("z", path);
  PointCloud pc;
  pc.points.resize(v.count);
  for (std::size_t i = 0; i < v.count; ++i) pc.points[i] = {x[i], y[i], z[i]};
  return pc;
}

void write_ply_cloud(const std::string& path, const PointCloud& pc,
                     PlyFormat format) {
  std::vector<std::vector<double>> cols(3, std::vector<double>(pc.size()));
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (int c = 0; c < 3; ++c) cols[c][i] = pc.points[i][c];
  write_ply_vertices(path, {"x", "y", "z"}, cols, format);
}

}  // namespace g2s
