#pragma once

// Procedural meshes used by the synthetic data harness, the scaling
// benchmark and the tests.

#include "scantalk/mesh.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace scantalk::shapes {

// Regular icosahedron with circumradius `radius`.
inline Mesh icosahedron(double radius = 1.0) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  Vertices v(12, 3);
  v << -1, phi, 0, 1, phi, 0, -1, -phi, 0, 1, -phi, 0,  //
      0, -1, phi, 0, 1, phi, 0, -1, -phi, 0, 1, -phi,   //
      phi, 0, -1, phi, 0, 1, -phi, 0, -1, -phi, 0, 1;
  v.rowwise().normalize();
  v *= radius;
  Faces f(20, 3);
  f << 0, 11, 5, 0, 5, 1, 0, 1, 7, 0, 7, 10, 0, 10, 11,  //
      1, 5, 9, 5, 11, 4, 11, 10, 2, 10, 7, 6, 7, 1, 8,   //
      3, 9, 4, 3, 4, 2, 3, 2, 6, 3, 6, 8, 3, 8, 9,       //
      4, 9, 5, 2, 4, 11, 6, 2, 10, 8, 6, 7, 9, 8, 1;
  return {v, f};
}

// Loop-style 1:4 subdivision with vertices projected onto the sphere.
// V = 10 * 4^n + 2: 12, 42, 162, 642, 2562, 10242, ...
inline Mesh icosphere(int subdivisions, double radius = 1.0) {
  Mesh m = icosahedron(1.0);
  for (int s = 0; s < subdivisions; ++s) {
    std::vector<Eigen::Vector3d> verts;
    for (Eigen::Index i = 0; i < m.num_vertices(); ++i) verts.push_back(m.vertices.row(i).transpose());
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::make_pair(std::min(a, b), std::max(a, b));
      if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
      verts.push_back((verts[static_cast<std::size_t>(a)] + verts[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    Faces next(m.num_faces() * 4, 3);
    for (Eigen::Index f = 0; f < m.num_faces(); ++f) {
      const int a = m.faces(f, 0), b = m.faces(f, 1), c = m.faces(f, 2);
      const int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
      next.row(4 * f + 0) << a, ab, ca;
      next.row(4 * f + 1) << b, bc, ab;
      next.row(4 * f + 2) << c, ca, bc;
      next.row(4 * f + 3) << ab, bc, ca;
    }
    m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
    m.faces = next;
  }
  m.vertices *= radius;
  return m;
}

// Latitude/longitude sphere: two poles plus (rings-1) latitude circles.
inline Mesh uv_sphere(int rings, int segments, double radius = 1.0) {
  const int lat = rings - 1;
  Vertices v(2 + lat * segments, 3);
  v.row(0) << 0, 0, radius;
  for (int r = 0; r < lat; ++r) {
    const double theta = std::numbers::pi * (r + 1) / rings;
    for (int s = 0; s < segments; ++s) {
      // Offset alternate rings by half a segment to avoid long thin strips.
      const double phi = 2 * std::numbers::pi * (s + 0.5 * (r % 2)) / segments;
      v.row(1 + r * segments + s) << radius * std::sin(theta) * std::cos(phi), radius * std::sin(theta) * std::sin(phi),
          radius * std::cos(theta);
    }
  }
  const int south = 1 + lat * segments;
  v.row(south) << 0, 0, -radius;
  std::vector<std::array<int, 3>> faces;
  auto ring = [&](int r, int s) { return 1 + r * segments + ((s % segments) + segments) % segments; };
  for (int s = 0; s < segments; ++s) faces.push_back({0, ring(0, s), ring(0, s + 1)});
  for (int r = 0; r + 1 < lat; ++r) {
    for (int s = 0; s < segments; ++s) {
      if (r % 2 == 0) {
        faces.push_back({ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)});
        faces.push_back({ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)});
      } else {
        faces.push_back({ring(r, s), ring(r + 1, s), ring(r, s + 1)});
        faces.push_back({ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1)});
      }
    }
  }
  for (int s = 0; s < segments; ++s) faces.push_back({south, ring(lat - 1, s + 1), ring(lat - 1, s)});
  Faces f(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return {v, f};
}

// Planar (nx+1) x (ny+1) vertex grid in the xy-plane, each cell split in two.
inline Mesh grid(int nx, int ny, double spacing = 1.0) {
  Vertices v((nx + 1) * (ny + 1), 3);
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) v.row(j * (nx + 1) + i) << i * spacing, j * spacing, 0.0;
  Faces f(2 * nx * ny, 3);
  int k = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int a = j * (nx + 1) + i, b = a + 1, c = a + nx + 1, d = c + 1;
      f.row(k++) << a, b, d;
      f.row(k++) << a, d, c;
    }
  return {v, f};
}

// Flat disk of `rings` concentric rings around a center vertex.
inline Mesh disk(int rings, int segments, double radius = 1.0) {
  Vertices v(1 + rings * segments, 3);
  v.row(0).setZero();
  for (int r = 0; r < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      const double rho = radius * (r + 1) / rings;
      const double phi = 2 * std::numbers::pi * (s + 0.5 * (r % 2)) / segments;
      v.row(1 + r * segments + s) << rho * std::cos(phi), rho * std::sin(phi), 0.0;
    }
  std::vector<std::array<int, 3>> faces;
  auto ring = [&](int r, int s) { return 1 + r * segments + ((s % segments) + segments) % segments; };
  for (int s = 0; s < segments; ++s) faces.push_back({0, ring(0, s), ring(0, s + 1)});
  for (int r = 0; r + 1 < rings; ++r)
    for (int s = 0; s < segments; ++s) {
      if (r % 2 == 0) {
        faces.push_back({ring(r, s), ring(r + 1, s), ring(r + 1, s + 1)});
        faces.push_back({ring(r, s), ring(r + 1, s + 1), ring(r, s + 1)});
      } else {
        faces.push_back({ring(r, s), ring(r + 1, s), ring(r, s + 1)});
        faces.push_back({ring(r, s + 1), ring(r + 1, s), ring(r + 1, s + 1)});
      }
    }
  Faces f(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return {v, f};
}

// Moves every vertex tangentially by up to `amount` x (local edge length),
// then reprojects onto the sphere of radius `radius`. Same connectivity,
// different sampling of the surface.
inline Mesh jitter_on_sphere(const Mesh& sphere, double amount, std::uint64_t seed, double radius = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = mean_edge_length(sphere);
  Mesh out = sphere;
  for (Eigen::Index i = 0; i < out.num_vertices(); ++i) {
    Eigen::Vector3d p = out.vertices.row(i).transpose();
    Eigen::Vector3d d(u(rng), u(rng), u(rng));
    p += amount * h * d;
    out.vertices.row(i) = (radius * p.normalized()).transpose();
  }
  return out;
}

// Drops faces whose centroid direction lies within `cos_angle` of `axis`,
// then removes vertices no longer referenced (surviving order kept).
inline Mesh cut_cap(const Mesh& m, const Eigen::Vector3d& axis, double cos_angle) {
  std::vector<Eigen::Index> keep;
  const Eigen::Vector3d a = axis.normalized();
  for (Eigen::Index f = 0; f < m.num_faces(); ++f) {
    Eigen::Vector3d c = (m.vertices.row(m.faces(f, 0)) + m.vertices.row(m.faces(f, 1)) + m.vertices.row(m.faces(f, 2))).transpose() / 3.0;
    if (c.normalized().dot(a) < cos_angle) keep.push_back(f);
  }
  std::vector<int> remap(static_cast<std::size_t>(m.num_vertices()), -1);
  for (auto f : keep)
    for (int c = 0; c < 3; ++c) remap[static_cast<std::size_t>(m.faces(f, c))] = 0;
  int next = 0;
  for (auto& r : remap)
    if (r == 0) r = next++;
  Mesh out;
  out.vertices.resize(next, 3);
  for (Eigen::Index i = 0; i < m.num_vertices(); ++i)
    if (remap[static_cast<std::size_t>(i)] >= 0) out.vertices.row(remap[static_cast<std::size_t>(i)]) = m.vertices.row(i);
  out.faces.resize(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t k = 0; k < keep.size(); ++k)
    for (int c = 0; c < 3; ++c)
      out.faces(static_cast<Eigen::Index>(k), c) = remap[static_cast<std::size_t>(m.faces(keep[k], c))];
  return out;
}

// Smooth radial shape function over the unit sphere. Applying it to any
// triangulation of the unit sphere yields the same underlying surface.
struct RadialShape {
  double radius = 0.1;
  Eigen::Vector3d stretch{0.85, 0.9, 1.1};
  std::array<Eigen::Vector3d, 3> freq{};
  std::array<double, 3> phase{};
  std::array<double, 3> amplitude{};

  static RadialShape random(std::uint64_t seed, double radius = 0.1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    RadialShape s;
    s.radius = radius;
    s.stretch = Eigen::Vector3d(0.85 + 0.05 * u(rng), 0.9 + 0.05 * u(rng), 1.1 + 0.05 * u(rng));
    for (int i = 0; i < 3; ++i) {
      s.freq[static_cast<std::size_t>(i)] = Eigen::Vector3d(u(rng), u(rng), u(rng)) * 2.0;
      s.phase[static_cast<std::size_t>(i)] = std::numbers::pi * u(rng);
      s.amplitude[static_cast<std::size_t>(i)] = 0.03 * u(rng);
    }
    return s;
  }

  Eigen::Vector3d operator()(const Eigen::Vector3d& dir) const {
    const Eigen::Vector3d d = dir.normalized();
    double r = 1.0;
    for (std::size_t i = 0; i < 3; ++i) r += amplitude[i] * std::sin(freq[i].dot(d) + phase[i]);
    return radius * r * d.cwiseProduct(stretch);
  }

  Mesh apply(const Mesh& unit_sphere) const {
    Mesh out = unit_sphere;
    for (Eigen::Index i = 0; i < out.num_vertices(); ++i)
      out.vertices.row(i) = (*this)(unit_sphere.vertices.row(i).transpose()).transpose();
    return out;
  }
};

// Applies a vertex permutation: new vertex i is old vertex perm[i].
inline Mesh permute_vertices(const Mesh& m, const std::vector<int>& perm) {
  std::vector<int> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  Mesh out;
  out.vertices.resize(m.num_vertices(), 3);
  for (std::size_t i = 0; i < perm.size(); ++i) out.vertices.row(static_cast<Eigen::Index>(i)) = m.vertices.row(perm[i]);
  out.faces = m.faces;
  for (Eigen::Index f = 0; f < m.num_faces(); ++f)
    for (int c = 0; c < 3; ++c) out.faces(f, c) = inverse[static_cast<std::size_t>(m.faces(f, c))];
  return out;
}

}  // namespace scantalk::shapes
