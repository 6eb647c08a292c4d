#pragma once

// Triangle meshes: loading, validation, normalization and persistence.
//
// Vertex order is the mesh's identity: every routine here preserves the
// order in which vertices were read, and nothing ever reorders them.

#include "scantalk/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>

namespace scantalk {

inline constexpr double kMinTriangleArea = 1e-14;

struct Mesh {
  Vertices vertices;
  Faces faces;

  Eigen::Index num_vertices() const { return vertices.rows(); }
  Eigen::Index num_faces() const { return faces.rows(); }
};

// A sequence of frames sharing one topology.
struct AnimationSequence {
  std::vector<Vertices> frames;
  Faces faces;

  std::size_t num_frames() const { return frames.size(); }
};

enum class MaskLabel { lip, upper_face };

struct VertexMask {
  std::vector<int> indices;
  MaskLabel label = MaskLabel::lip;

  std::size_t size() const { return indices.size(); }
};

inline double triangle_area(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

inline double face_area(const Mesh& m, Eigen::Index f) {
  return triangle_area(m.vertices.row(m.faces(f, 0)).transpose(), m.vertices.row(m.faces(f, 1)).transpose(),
                       m.vertices.row(m.faces(f, 2)).transpose());
}

inline double total_area(const Mesh& m) {
  double a = 0;
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) a += face_area(m, f);
  return a;
}

inline double mean_edge_length(const Mesh& m) {
  double sum = 0;
  for (Eigen::Index f = 0; f < m.num_faces(); ++f)
    for (int e = 0; e < 3; ++e) sum += (m.vertices.row(m.faces(f, e)) - m.vertices.row(m.faces(f, (e + 1) % 3))).norm();
  return m.num_faces() ? sum / (3.0 * static_cast<double>(m.num_faces())) : 0.0;
}

namespace detail {

// Checks face `f`; `where` is prepended to messages (e.g. "mesh.obj:12").
inline void check_face(const Mesh& m, Eigen::Index f, const std::string& where) {
  const auto V = m.num_vertices();
  for (int c = 0; c < 3; ++c) {
    const int idx = m.faces(f, c);
    if (idx < 0 || idx >= V) throw_data(where, ": face index ", idx, " out of range [0, ", V, ")");
  }
  if (m.faces(f, 0) == m.faces(f, 1) || m.faces(f, 1) == m.faces(f, 2) || m.faces(f, 0) == m.faces(f, 2))
    throw_data(where, ": degenerate face (repeated vertex index)");
  const double area = face_area(m, f);
  if (!(area > kMinTriangleArea)) throw_data(where, ": degenerate face (area ", area, " m^2)");
}

}  // namespace detail

// Throws DataError unless `m` satisfies every Mesh invariant.
inline void check_mesh(const Mesh& m, const std::string& what = "mesh") {
  if (m.num_vertices() == 0) throw_data(what, ": no vertices");
  if (m.num_faces() == 0) throw_data(what, ": no faces");
  if (!m.vertices.allFinite()) throw_data(what, ": non-finite vertex coordinate");
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) detail::check_face(m, f, detail::concat(what, " face ", f));
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long> parse_long(std::string_view s) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data(path.string(), ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Line splitter that tolerates CRLF and remembers 1-based line numbers.
class Lines {
 public:
  explicit Lines(std::string_view text) : text_(text) {}
  bool next(std::string_view& line) {
    if (pos_ >= text_.size()) return false;
    auto end = text_.find('\n', pos_);
    if (end == std::string_view::npos) end = text_.size();
    line = text_.substr(pos_, end - pos_);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos_ = end + 1;
    ++number_;
    return true;
  }
  int number() const { return number_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  int number_ = 0;
};

struct FaceRecord {
  std::array<int, 3> idx;
  int line;
};

inline Mesh assemble(const std::vector<Eigen::Vector3d>& verts, const std::vector<FaceRecord>& faces,
                     const std::string& path) {
  Mesh m;
  m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  m.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int c = 0; c < 3; ++c) m.faces(static_cast<Eigen::Index>(f), c) = faces[f].idx[c];
  if (verts.empty()) throw_data(path, ": no vertices");
  if (faces.empty()) throw_data(path, ": no faces");
  for (std::size_t f = 0; f < faces.size(); ++f)
    check_face(m, static_cast<Eigen::Index>(f), concat(path, ":", faces[f].line));
  return m;
}

inline Mesh parse_obj(std::string_view text, const std::string& path) {
  std::vector<Eigen::Vector3d> verts;
  std::vector<FaceRecord> faces;
  Lines lines(text);
  std::string_view line;
  while (lines.next(line)) {
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0].front() == '#') continue;
    const auto where = [&] { return concat(path, ":", lines.number()); };
    if (tok[0] == "v") {
      // Extra values (w or per-vertex colors) are accepted and ignored.
      if (tok.size() < 4) throw_data(where(), ": malformed vertex line");
      Eigen::Vector3d p;
      for (int c = 0; c < 3; ++c) {
        auto v = parse_double(tok[static_cast<std::size_t>(c) + 1]);
        if (!v) throw_data(where(), ": malformed vertex coordinate '", tok[static_cast<std::size_t>(c) + 1], "'");
        if (!std::isfinite(*v)) throw_data(where(), ": non-finite vertex coordinate");
        p[c] = *v;
      }
      verts.push_back(p);
    } else if (tok[0] == "f") {
      if (tok.size() != 4) throw_data(where(), ": non-triangle face (", tok.size() - 1, " vertices)");
      FaceRecord rec{{}, lines.number()};
      for (int c = 0; c < 3; ++c) {
        auto field = tok[static_cast<std::size_t>(c) + 1];
        field = field.substr(0, field.find('/'));
        auto v = parse_long(field);
        if (!v || *v == 0) throw_data(where(), ": malformed face index '", tok[static_cast<std::size_t>(c) + 1], "'");
        // OBJ is 1-based; negative indices count back from the latest vertex.
        const long idx = *v > 0 ? *v - 1 : static_cast<long>(verts.size()) + *v;
        rec.idx[static_cast<std::size_t>(c)] = static_cast<int>(idx);
      }
      faces.push_back(rec);
    }
    // vn, vt, g, o, s, usemtl, mtllib: not geometry we use.
  }
  return assemble(verts, faces, path);
}

inline Mesh parse_ply(std::string_view text, const std::string& path) {
  Lines lines(text);
  std::string_view line;
  if (!lines.next(line) || split_ws(line) != std::vector<std::string_view>{"ply"})
    throw_data(path, ":1: missing 'ply' header");

  struct Element {
    std::string name;
    long count = 0;
    std::vector<std::string> props;  // scalar property names; lists recorded as "list:<name>"
  };
  std::vector<Element> elements;
  bool ascii = false;
  bool header_done = false;
  while (lines.next(line)) {
    const auto tok = split_ws(line);
    const auto where = [&] { return concat(path, ":", lines.number()); };
    if (tok.empty()) continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw_data(where(), ": malformed format line");
      if (tok[1] != "ascii") throw_data(where(), ": binary PLY is not supported (ASCII only)");
      ascii = true;
    } else if (tok[0] == "element") {
      auto n = tok.size() == 3 ? parse_long(tok[2]) : std::nullopt;
      if (!n || *n < 0) throw_data(where(), ": malformed element line");
      elements.push_back({std::string(tok[1]), *n, {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw_data(where(), ": property before element");
      if (tok.size() == 5 && tok[1] == "list")
        elements.back().props.push_back("list:" + std::string(tok[4]));
      else if (tok.size() == 3)
        elements.back().props.emplace_back(tok[2]);
      else
        throw_data(where(), ": malformed property line");
    } else if (tok[0] == "end_header") {
      header_done = true;
      break;
    }
    // comment / obj_info lines are skipped.
  }
  if (!header_done) throw_data(path, ": missing end_header");
  if (!ascii) throw_data(path, ": missing format line");

  std::vector<Eigen::Vector3d> verts;
  std::vector<FaceRecord> faces;
  for (const auto& el : elements) {
    std::array<int, 3> xyz{-1, -1, -1};
    if (el.name == "vertex") {
      for (std::size_t p = 0; p < el.props.size(); ++p) {
        if (el.props[p] == "x") xyz[0] = static_cast<int>(p);
        if (el.props[p] == "y") xyz[1] = static_cast<int>(p);
        if (el.props[p] == "z") xyz[2] = static_cast<int>(p);
      }
      if (xyz[0] < 0 || xyz[1] < 0 || xyz[2] < 0) throw_data(path, ": vertex element lacks x/y/z");
    }
    for (long r = 0; r < el.count; ++r) {
      if (!lines.next(line)) throw_data(path, ": truncated body (element '", el.name, "')");
      const auto tok = split_ws(line);
      const auto where = [&] { return concat(path, ":", lines.number()); };
      if (el.name == "vertex") {
        if (tok.size() < el.props.size()) throw_data(where(), ": malformed vertex line");
        Eigen::Vector3d p;
        for (int c = 0; c < 3; ++c) {
          auto v = parse_double(tok[static_cast<std::size_t>(xyz[static_cast<std::size_t>(c)])]);
          if (!v) throw_data(where(), ": malformed vertex coordinate");
          if (!std::isfinite(*v)) throw_data(where(), ": non-finite vertex coordinate");
          p[c] = *v;
        }
        verts.push_back(p);
      } else if (el.name == "face") {
        auto n = tok.empty() ? std::nullopt : parse_long(tok[0]);
        if (!n) throw_data(where(), ": malformed face line");
        if (*n != 3) throw_data(where(), ": non-triangle face (", *n, " vertices)");
        if (tok.size() < 4) throw_data(where(), ": malformed face line");
        FaceRecord rec{{}, lines.number()};
        for (int c = 0; c < 3; ++c) {
          auto v = parse_long(tok[static_cast<std::size_t>(c) + 1]);
          if (!v) throw_data(where(), ": malformed face index");
          rec.idx[static_cast<std::size_t>(c)] = static_cast<int>(*v);
        }
        faces.push_back(rec);
      }
    }
  }
  return assemble(verts, faces, path);
}

inline std::string lower_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace detail

// Loads an ASCII OBJ or ASCII PLY triangle mesh. Errors carry "path:line".
inline Mesh load_mesh(const std::filesystem::path& path) {
  const auto text = detail::read_file(path);
  const auto ext = detail::lower_extension(path);
  if (ext == ".obj") return detail::parse_obj(text, path.string());
  if (ext == ".ply") return detail::parse_ply(text, path.string());
  throw_data(path.string(), ": unsupported mesh format '", ext, "' (expected .obj or .ply)");
}

// ---------------------------------------------------------------------------
// Writing. %.17g round-trips every double exactly.

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data(path.string(), ": cannot open for writing");
  out << text;
  if (!out) throw_data(path.string(), ": write failure");
}

inline void append_double(std::string& s, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  s.append(buf, static_cast<std::size_t>(n));
}

inline std::string obj_text(const Vertices& v, const Faces& f, const Eigen::Matrix<double, Eigen::Dynamic, 3>* colors) {
  std::string s;
  s.reserve(static_cast<std::size_t>(v.rows()) * 64 + static_cast<std::size_t>(f.rows()) * 24);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    s += "v";
    for (int c = 0; c < 3; ++c) {
      s += ' ';
      append_double(s, v(i, c));
    }
    if (colors) {
      char buf[64];
      std::snprintf(buf, sizeof buf, " %.6f %.6f %.6f", (*colors)(i, 0), (*colors)(i, 1), (*colors)(i, 2));
      s += buf;
    }
    s += '\n';
  }
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    s += "f " + std::to_string(f(i, 0) + 1) + ' ' + std::to_string(f(i, 1) + 1) + ' ' + std::to_string(f(i, 2) + 1) + '\n';
  }
  return s;
}

inline std::string ply_text(const Vertices& v, const Faces& f) {
  std::string s = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(v.rows()) +
                  "\nproperty double x\nproperty double y\nproperty double z\nelement face " +
                  std::to_string(f.rows()) + "\nproperty list uchar int vertex_indices\nend_header\n";
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (int c = 0; c < 3; ++c) {
      if (c) s += ' ';
      append_double(s, v(i, c));
    }
    s += '\n';
  }
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    s += "3 " + std::to_string(f(i, 0)) + ' ' + std::to_string(f(i, 1)) + ' ' + std::to_string(f(i, 2)) + '\n';
  return s;
}

}  // namespace detail

inline void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  const auto ext = detail::lower_extension(path);
  if (ext == ".obj")
    detail::write_text(path, detail::obj_text(mesh.vertices, mesh.faces, nullptr));
  else if (ext == ".ply")
    detail::write_text(path, detail::ply_text(mesh.vertices, mesh.faces));
  else
    throw_data(path.string(), ": unsupported mesh format '", ext, "'");
}

// OBJ with per-vertex RGB in [0,1] (the common "v x y z r g b" extension).
inline void save_colored_obj(const Mesh& mesh, const Eigen::Matrix<double, Eigen::Dynamic, 3>& rgb,
                             const std::filesystem::path& path) {
  detail::write_text(path, detail::obj_text(mesh.vertices, mesh.faces, &rgb));
}

inline std::string frame_filename(std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.obj", j);
  return buf;
}

inline void save_sequence(const AnimationSequence& seq, const std::filesystem::path& dir) {
  if (seq.frames.empty()) throw DataError("empty sequence");
  std::filesystem::create_directories(dir);
  for (std::size_t j = 0; j < seq.frames.size(); ++j)
    detail::write_text(dir / frame_filename(j), detail::obj_text(seq.frames[j], seq.faces, nullptr));
}

// Loads frame_*.obj in lexicographic order; all frames must share one face list.
inline AnimationSequence load_sequence(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw_data(dir.string(), ": not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("frame_") && detail::lower_extension(e.path()) == ".obj") files.push_back(e.path());
  }
  if (files.empty()) throw_data(dir.string(), ": empty sequence");
  std::sort(files.begin(), files.end());
  AnimationSequence seq;
  for (const auto& f : files) {
    Mesh m = load_mesh(f);
    if (seq.frames.empty())
      seq.faces = m.faces;
    else if (m.faces.rows() != seq.faces.rows() || m.faces != seq.faces)
      throw_data(f.string(), ": topology differs from the first frame");
    seq.frames.push_back(std::move(m.vertices));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Masks: one vertex index per line.

inline VertexMask make_mask(std::vector<int> indices, MaskLabel label, Eigen::Index num_vertices) {
  std::sort(indices.begin(), indices.end());
  if (std::adjacent_find(indices.begin(), indices.end()) != indices.end()) throw_data("mask: duplicate index");
  if (indices.empty()) throw_data("mask: empty");
  if (indices.front() < 0 || indices.back() >= num_vertices)
    throw_data("mask: index out of range for a mesh with ", num_vertices, " vertices");
  return {std::move(indices), label};
}

inline VertexMask load_mask(const std::filesystem::path& path, MaskLabel label, Eigen::Index num_vertices) {
  const auto text = detail::read_file(path);
  detail::Lines lines(text);
  std::string_view line;
  std::vector<int> idx;
  while (lines.next(line)) {
    const auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0].front() == '#') continue;
    auto v = detail::parse_long(tok[0]);
    if (!v || tok.size() != 1) throw_data(path.string(), ":", lines.number(), ": malformed mask line");
    idx.push_back(static_cast<int>(*v));
  }
  try {
    return make_mask(std::move(idx), label, num_vertices);
  } catch (const DataError& e) {
    throw_data(path.string(), ": ", e.what());
  }
}

inline void save_mask(const VertexMask& mask, const std::filesystem::path& path) {
  std::string s;
  for (int i : mask.indices) s += std::to_string(i) + '\n';
  detail::write_text(path, s);
}

// ---------------------------------------------------------------------------
// Validation report (never mutates its input).

struct MeshDiagnostics {
  std::size_t boundary_edges = 0;
  std::size_t non_manifold_edges = 0;
  std::size_t connected_components = 0;
  std::size_t degenerate_triangles = 0;
  std::size_t isolated_vertices = 0;
};

inline MeshDiagnostics validate_mesh(const Mesh& mesh) {
  if (!mesh.vertices.allFinite()) throw DataError("validate: non-finite vertex coordinate");
  MeshDiagnostics d;
  const auto V = mesh.num_vertices();
  std::map<std::pair<int, int>, int> edge_faces;
  std::vector<int> parent(static_cast<std::size_t>(V));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
    return x;
  };
  std::vector<bool> used(static_cast<std::size_t>(V), false);
  for (Eigen::Index f = 0; f < mesh.num_faces(); ++f) {
    const std::array<int, 3> t{mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    const bool in_range = std::all_of(t.begin(), t.end(), [&](int i) { return i >= 0 && i < V; });
    if (!in_range || t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || !(face_area(mesh, f) > kMinTriangleArea)) {
      ++d.degenerate_triangles;
      if (!in_range) continue;
    }
    for (int e = 0; e < 3; ++e) {
      int a = t[static_cast<std::size_t>(e)], b = t[static_cast<std::size_t>((e + 1) % 3)];
      used[static_cast<std::size_t>(a)] = true;
      if (a == b) continue;
      ++edge_faces[{std::min(a, b), std::max(a, b)}];
      parent[static_cast<std::size_t>(find(a))] = find(b);
    }
  }
  for (const auto& [e, n] : edge_faces) {
    if (n == 1) ++d.boundary_edges;
    if (n > 2) ++d.non_manifold_edges;
  }
  std::set<int> roots;
  for (int i = 0; i < V; ++i) {
    roots.insert(find(i));
    if (!used[static_cast<std::size_t>(i)]) ++d.isolated_vertices;
  }
  d.connected_components = roots.size();
  return d;
}

// ---------------------------------------------------------------------------
// Similarity normalization: centroid + RMS radius. Rotation is never solved for.

struct NormalizationFrame {
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  double scale = 1.0;  // target RMS distance from the centroid, meters
};

// x' = scale * x + translation
struct Similarity {
  double scale = 1.0;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Vertices apply(const Vertices& v) const {
    return ((v * scale).rowwise() + translation.transpose()).eval();
  }
  Vertices apply_inverse(const Vertices& v) const {
    return ((v.rowwise() - translation.transpose()) / scale).eval();
  }
  // (this ∘ other)(x) = this(other(x))
  Similarity compose(const Similarity& other) const {
    return {scale * other.scale, scale * other.translation + translation};
  }
};

inline Eigen::Vector3d centroid(const Vertices& v) { return v.colwise().mean().transpose(); }

inline double rms_radius(const Vertices& v) {
  const auto c = centroid(v);
  return std::sqrt((v.rowwise() - c.transpose()).rowwise().squaredNorm().mean());
}

inline std::pair<Mesh, Similarity> normalize_to_frame(const Mesh& mesh, const NormalizationFrame& frame) {
  if (!(frame.scale > 0) || !std::isfinite(frame.scale)) throw_data("normalize: target scale must be positive");
  const Eigen::Vector3d c = centroid(mesh.vertices);
  const double rms = rms_radius(mesh.vertices);
  if (!(rms > 0)) throw_data("normalize: zero-variance mesh (all vertices coincide)");
  Similarity s;
  s.scale = frame.scale / rms;
  s.translation = frame.centroid - s.scale * c;
  return {Mesh{s.apply(mesh.vertices), mesh.faces}, s};
}

}  // namespace scantalk
