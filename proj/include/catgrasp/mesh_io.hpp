#pragma once

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "catgrasp/geometry.hpp"
#include "catgrasp/log.hpp"

namespace catgrasp {

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Mesh cleanup
// ---------------------------------------------------------------------------

/// Drops zero-area faces; throws on out-of-range indices or an empty result.
inline TriMesh cleanup_mesh(TriMesh m, const std::string& what) {
  const int nv = static_cast<int>(m.vertices.size());
  std::vector<std::array<int, 3>> kept;
  kept.reserve(m.faces.size());
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      if (m.faces[f][k] < 0 || m.faces[f][k] >= nv) {
        throw ParseError(what + ": face index out of range");
      }
    }
    if (m.face_area(f) > 0.0) kept.push_back(m.faces[f]);
  }
  m.faces = std::move(kept);
  if (m.empty()) throw ParseError(what + ": empty mesh");
  return m;
}

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

inline TriMesh parse_obj(std::string_view text, const std::string& what = "obj") {
  TriMesh m;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    const auto fail = [&](const char* msg) {
      return ParseError(what + ":" + std::to_string(lineno) + ": " + msg);
    };
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw fail("vertex needs three coordinates");
      m.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok) {
        const std::string head = tok.substr(0, tok.find('/'));
        int idx = 0;
        try {
          std::size_t used = 0;
          idx = std::stoi(head, &used);
          if (used != head.size()) throw fail("bad face index");
        } catch (const std::logic_error&) {
          throw fail("bad face index");
        }
        if (idx < 0) idx = static_cast<int>(m.vertices.size()) + idx + 1;
        if (idx < 1 || idx > static_cast<int>(m.vertices.size())) throw fail("face index out of range");
        poly.push_back(idx - 1);
      }
      if (poly.size() < 3) throw fail("face needs at least three vertices");
      for (std::size_t k = 1; k + 1 < poly.size(); ++k) m.faces.push_back({poly[0], poly[k], poly[k + 1]});
    }
  }
  return m;
}

inline std::string format_obj(const TriMesh& m) {
  std::string out;
  char buf[128];
  for (const auto& v : m.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out += buf;
  }
  for (const auto& f : m.faces) {
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

/// Per-vertex scalar channel. `integer` channels are written as int, others as double.
struct PlyAttribute {
  std::string name;
  bool integer = false;
  std::vector<double> values;
};

struct PlyData {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
  std::vector<PlyAttribute> attributes;
  std::vector<std::array<int, 3>> faces;

  const PlyAttribute* attribute(std::string_view name) const {
    for (const auto& a : attributes) {
      if (a.name == name) return &a;
    }
    return nullptr;
  }
};

namespace detail {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline PlyType ply_type(const std::string& s) {
  if (s == "char" || s == "int8") return PlyType::Int8;
  if (s == "uchar" || s == "uint8") return PlyType::UInt8;
  if (s == "short" || s == "int16") return PlyType::Int16;
  if (s == "ushort" || s == "uint16") return PlyType::UInt16;
  if (s == "int" || s == "int32") return PlyType::Int32;
  if (s == "uint" || s == "uint32") return PlyType::UInt32;
  if (s == "float" || s == "float32") return PlyType::Float32;
  if (s == "double" || s == "float64") return PlyType::Float64;
  throw ParseError("ply: unknown property type '" + s + "'");
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

/// Sequential reader over the body of a PLY file (ASCII or binary little-endian).
class PlyReader {
 public:
  PlyReader(std::string_view body, bool binary) : body_(body), binary_(binary) {}

  double read(PlyType t) {
    if (binary_) return read_binary(t);
    skip_space();
    if (pos_ >= body_.size()) throw ParseError("ply: unexpected end of data");
    const std::size_t start = pos_;
    while (pos_ < body_.size() && !std::isspace(static_cast<unsigned char>(body_[pos_]))) ++pos_;
    const std::string tok(body_.substr(start, pos_ - start));
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw ParseError("ply: bad number '" + tok + "'");
    return v;
  }

 private:
  void skip_space() {
    while (pos_ < body_.size() && std::isspace(static_cast<unsigned char>(body_[pos_]))) ++pos_;
  }

  template <typename T>
  T take() {
    if (pos_ + sizeof(T) > body_.size()) throw ParseError("ply: unexpected end of binary data");
    T v;
    std::memcpy(&v, body_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  double read_binary(PlyType t) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    switch (t) {
      case PlyType::Int8: return take<std::int8_t>();
      case PlyType::UInt8: return take<std::uint8_t>();
      case PlyType::Int16: return take<std::int16_t>();
      case PlyType::UInt16: return take<std::uint16_t>();
      case PlyType::Int32: return take<std::int32_t>();
      case PlyType::UInt32: return take<std::uint32_t>();
      case PlyType::Float32: return take<float>();
      case PlyType::Float64: return take<double>();
    }
    return 0.0;
  }

  std::string_view body_;
  bool binary_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline PlyData parse_ply(std::string_view data, const std::string& what = "ply") {
  using namespace detail;
  const std::size_t hdr_end = data.find("end_header");
  if (data.substr(0, 3) != "ply" || hdr_end == std::string_view::npos) {
    throw ParseError(what + ": missing ply header");
  }
  std::size_t body_start = data.find('\n', hdr_end);
  if (body_start == std::string_view::npos) throw ParseError(what + ": truncated header");
  ++body_start;

  std::istringstream hs{std::string(data.substr(0, hdr_end))};
  std::string line;
  std::vector<PlyElement> elements;
  bool binary = false;
  bool have_format = false;
  while (std::getline(hs, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") {
        binary = false;
      } else if (fmt == "binary_little_endian") {
        binary = true;
      } else {
        throw ParseError(what + ": unsupported format " + fmt);
      }
      have_format = true;
    } else if (tag == "element") {
      PlyElement e;
      if (!(ls >> e.name >> e.count)) throw ParseError(what + ": bad element line");
      elements.push_back(std::move(e));
    } else if (tag == "property") {
      if (elements.empty()) throw ParseError(what + ": property before element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = ply_type(ct);
        p.type = ply_type(it);
      } else {
        p.type = ply_type(type);
        ls >> p.name;
      }
      elements.back().props.push_back(std::move(p));
    }
  }
  if (!have_format) throw ParseError(what + ": missing format line");

  PlyData out;
  PlyReader rd(data.substr(body_start), binary);
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
      std::vector<int> extra;
      for (int k = 0; k < static_cast<int>(e.props.size()); ++k) {
        const auto& n = e.props[k].name;
        if (n == "x") ix = k;
        else if (n == "y") iy = k;
        else if (n == "z") iz = k;
        else if (n == "nx") inx = k;
        else if (n == "ny") iny = k;
        else if (n == "nz") inz = k;
        else if (!e.props[k].is_list) extra.push_back(k);
      }
      if (ix < 0 || iy < 0 || iz < 0) throw ParseError(what + ": vertex lacks x/y/z");
      const bool has_n = inx >= 0 && iny >= 0 && inz >= 0;
      for (int k : extra) {
        const auto t = e.props[k].type;
        out.attributes.push_back({e.props[k].name, t != PlyType::Float32 && t != PlyType::Float64, {}});
      }
      std::vector<double> row(e.props.size());
      for (std::size_t i = 0; i < e.count; ++i) {
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          const auto& p = e.props[k];
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(rd.read(p.count_type));
            for (std::size_t j = 0; j < n; ++j) rd.read(p.type);
            row[k] = 0.0;
          } else {
            row[k] = rd.read(p.type);
          }
        }
        out.vertices.emplace_back(row[ix], row[iy], row[iz]);
        if (has_n) out.normals.emplace_back(row[inx], row[iny], row[inz]);
        for (std::size_t a = 0; a < extra.size(); ++a) out.attributes[a].values.push_back(row[extra[a]]);
      }
    } else if (e.name == "face") {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& p : e.props) {
          if (!p.is_list) {
            rd.read(p.type);
            continue;
          }
          const auto n = static_cast<std::size_t>(rd.read(p.count_type));
          std::vector<int> poly(n);
          for (std::size_t j = 0; j < n; ++j) poly[j] = static_cast<int>(rd.read(p.type));
          if (p.name != "vertex_indices" && p.name != "vertex_index") continue;
          if (n < 3) throw ParseError(what + ": face with fewer than three vertices");
          for (std::size_t k = 1; k + 1 < n; ++k) out.faces.push_back({poly[0], poly[k], poly[k + 1]});
        }
      }
    } else {
      for (std::size_t i = 0; i < e.count; ++i) {
        for (const auto& p : e.props) {
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(rd.read(p.count_type));
            for (std::size_t j = 0; j < n; ++j) rd.read(p.type);
          } else {
            rd.read(p.type);
          }
        }
      }
    }
  }
  return out;
}

inline std::string format_ply(const PlyData& d, bool binary) {
  const std::size_t n = d.vertices.size();
  const bool has_n = !d.normals.empty();
  if (has_n && d.normals.size() != n) throw Error("ply: normals/vertices length mismatch");
  for (const auto& a : d.attributes) {
    if (a.values.size() != n) throw Error("ply: attribute '" + a.name + "' length mismatch");
  }
  std::string out = "ply\n";
  out += binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n";
  out += "element vertex " + std::to_string(n) + "\n";
  out += "property double x\nproperty double y\nproperty double z\n";
  if (has_n) out += "property double nx\nproperty double ny\nproperty double nz\n";
  for (const auto& a : d.attributes) {
    out += std::string("property ") + (a.integer ? "int " : "double ") + a.name + "\n";
  }
  if (!d.faces.empty()) {
    out += "element face " + std::to_string(d.faces.size()) + "\n";
    out += "property list uchar int vertex_indices\n";
  }
  out += "end_header\n";

  const auto put = [&](auto v) {
    char buf[sizeof v];
    std::memcpy(buf, &v, sizeof v);
    out.append(buf, sizeof v);
  };
  char buf[64];
  const auto put_text = [&](double v, bool integer) {
    if (integer) {
      std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(std::llround(v)));
    } else {
      std::snprintf(buf, sizeof buf, "%.17g", v);
    }
    out += buf;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, bool>> row;
    for (int k = 0; k < 3; ++k) row.emplace_back(d.vertices[i][k], false);
    if (has_n) {
      for (int k = 0; k < 3; ++k) row.emplace_back(d.normals[i][k], false);
    }
    for (const auto& a : d.attributes) row.emplace_back(a.values[i], a.integer);
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (binary) {
        if (row[k].second) {
          put(static_cast<std::int32_t>(std::llround(row[k].first)));
        } else {
          put(row[k].first);
        }
      } else {
        if (k) out += ' ';
        put_text(row[k].first, row[k].second);
      }
    }
    if (!binary) out += '\n';
  }
  for (const auto& f : d.faces) {
    if (binary) {
      put(static_cast<std::uint8_t>(3));
      for (int k = 0; k < 3; ++k) put(static_cast<std::int32_t>(f[k]));
    } else {
      std::snprintf(buf, sizeof buf, "3 %d %d %d\n", f[0], f[1], f[2]);
      out += buf;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mesh-level entry points
// ---------------------------------------------------------------------------

struct MeshLoadOptions {
  /// Multiplier from file units to meters (e.g. 0.001 for millimeter files).
  double scale_to_m = 1.0;
};

inline std::string lower_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

inline TriMesh load_mesh(const std::filesystem::path& path, const MeshLoadOptions& opt = {}) {
  if (!(opt.scale_to_m > 0.0)) throw Error("load_mesh: scale_to_m must be positive");
  const std::string ext = lower_extension(path);
  const std::string data = read_file(path);
  TriMesh m;
  if (ext == ".obj") {
    m = parse_obj(data, path.string());
  } else if (ext == ".ply") {
    PlyData d = parse_ply(data, path.string());
    m.vertices = std::move(d.vertices);
    m.faces = std::move(d.faces);
  } else {
    throw ParseError("load_mesh: unsupported extension " + ext);
  }
  for (auto& v : m.vertices) v *= opt.scale_to_m;
  return cleanup_mesh(std::move(m), path.string());
}

inline void save_mesh(const std::filesystem::path& path, const TriMesh& m, bool binary_ply = false) {
  const std::string ext = lower_extension(path);
  if (ext == ".obj") {
    write_file_atomic(path, format_obj(m));
  } else if (ext == ".ply") {
    PlyData d;
    d.vertices = m.vertices;
    d.faces = m.faces;
    write_file_atomic(path, format_ply(d, binary_ply));
  } else {
    throw Error("save_mesh: unsupported extension " + ext);
  }
}

inline void save_cloud_ply(const std::filesystem::path& path, const PointCloud& c,
                           std::vector<PlyAttribute> attributes = {}, bool binary = false) {
  PlyData d;
  d.vertices = c.points;
  if (c.has_normals()) d.normals = c.normals;
  d.attributes = std::move(attributes);
  write_file_atomic(path, format_ply(d, binary));
}

inline PlyData load_ply(const std::filesystem::path& path) {
  return parse_ply(read_file(path), path.string());
}

}  // namespace catgrasp
