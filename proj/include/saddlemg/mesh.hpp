#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace saddlemg {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

/// Rotate a vector by -90 degrees (clockwise).  The global normal of an
/// edge is the clockwise rotation of the tangent that runs from the
/// lower-indexed to the higher-indexed endpoint.
inline Vec2 rotate_cw(Vec2 a) { return {a.y, -a.x}; }

/// Conforming triangulation of a simply connected polygonal domain with
/// globally oriented edges and signed triangle-edge incidence.
///
/// Orientation conventions:
///  - triangles store their vertices counterclockwise,
///  - each edge stores (lower vertex index, higher vertex index),
///  - sigma(T,E) = +1 iff the global edge normal points out of T.
struct TriangleMesh {
    std::vector<Vec2> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<std::array<int, 2>> edges;
    /// Per triangle, the edge ids of its three sides in the order
    /// (v0,v1), (v1,v2), (v2,v0).
    std::vector<std::array<int, 3>> edge_of_triangle;
    /// Incidence signs sigma(T,E) aligned with edge_of_triangle.
    std::vector<std::array<int, 3>> edge_sign;
    std::vector<char> boundary_edge_flags;
    /// Nominal spacing of the structured mesh this one derives from.
    double mesh_size = 0.0;

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_edges() const { return static_cast<int>(edges.size()); }
    int num_triangles() const { return static_cast<int>(triangles.size()); }

    double signed_area(int t) const {
        const auto& tri = triangles[t];
        const Vec2 a = vertices[tri[0]];
        const Vec2 b = vertices[tri[1]];
        const Vec2 c = vertices[tri[2]];
        return 0.5 * cross(b - a, c - a);
    }
    double area(int t) const { return signed_area(t); }

    Vec2 barycenter(int t) const {
        const auto& tri = triangles[t];
        return (1.0 / 3.0) * (vertices[tri[0]] + vertices[tri[1]] + vertices[tri[2]]);
    }

    Vec2 edge_midpoint(int e) const {
        return 0.5 * (vertices[edges[e][0]] + vertices[edges[e][1]]);
    }

    double edge_length(int e) const {
        return norm(vertices[edges[e][1]] - vertices[edges[e][0]]);
    }

    /// Unit global normal of edge e.
    Vec2 edge_normal(int e) const {
        const Vec2 t = vertices[edges[e][1]] - vertices[edges[e][0]];
        return (1.0 / norm(t)) * rotate_cw(t);
    }

    bool vertex_on_boundary(int v) const {
        for (int e = 0; e < num_edges(); ++e)
            if (boundary_edge_flags[e] && (edges[e][0] == v || edges[e][1] == v)) return true;
        return false;
    }
};

namespace detail {

/// Fill edge data (edges, incidence, boundary flags) from vertices and
/// triangles.  Edge ids are assigned in order of first encounter while
/// walking triangles, which keeps the numbering deterministic.
inline void build_edge_data(TriangleMesh& mesh) {
    mesh.edges.clear();
    mesh.edge_of_triangle.assign(mesh.triangles.size(), {-1, -1, -1});
    mesh.edge_sign.assign(mesh.triangles.size(), {0, 0, 0});

    std::map<std::pair<int, int>, int> edge_id;
    std::vector<int> incidence_count;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        for (int s = 0; s < 3; ++s) {
            const int u = tri[s];
            const int v = tri[(s + 1) % 3];
            const std::pair<int, int> key{std::min(u, v), std::max(u, v)};
            auto it = edge_id.find(key);
            int e;
            if (it == edge_id.end()) {
                e = static_cast<int>(mesh.edges.size());
                edge_id.emplace(key, e);
                mesh.edges.push_back({key.first, key.second});
                incidence_count.push_back(0);
            } else {
                e = it->second;
            }
            mesh.edge_of_triangle[t][s] = e;
            // Traversal direction u->v agrees with the global tangent
            // (lower->higher index) exactly when the outward normal of the
            // CCW triangle matches the global normal.
            mesh.edge_sign[t][s] = (u < v) ? +1 : -1;
            ++incidence_count[e];
        }
    }

    mesh.boundary_edge_flags.assign(mesh.edges.size(), 0);
    for (int e = 0; e < mesh.num_edges(); ++e) {
        if (incidence_count[e] == 1)
            mesh.boundary_edge_flags[e] = 1;
        else if (incidence_count[e] != 2)
            throw std::runtime_error("mesh: edge shared by more than two triangles");
    }
}

inline void validate(const TriangleMesh& mesh) {
    for (int t = 0; t < mesh.num_triangles(); ++t)
        if (!(mesh.signed_area(t) > 0.0))
            throw std::runtime_error("mesh: triangle " + std::to_string(t) +
                                     " has non-positive area");
    const long euler = static_cast<long>(mesh.num_vertices()) - mesh.num_edges() +
                       mesh.num_triangles();
    if (euler != 1) throw std::runtime_error("mesh: Euler relation violated");
}

}  // namespace detail

/// Build a mesh from raw vertices and CCW triangles.
inline TriangleMesh make_mesh(std::vector<Vec2> vertices,
                              std::vector<std::array<int, 3>> triangles,
                              double mesh_size = 0.0) {
    TriangleMesh mesh;
    mesh.vertices = std::move(vertices);
    mesh.triangles = std::move(triangles);
    mesh.mesh_size = mesh_size;
    detail::build_edge_data(mesh);
    detail::validate(mesh);
    return mesh;
}

/// Structured triangulation of the unit square: n x n squares, each split
/// along the lower-left to upper-right diagonal.
inline TriangleMesh build_square_mesh(int n) {
    if (n < 1) throw std::invalid_argument("build_square_mesh: n must be >= 1");
    std::vector<Vec2> vertices((n + 1) * (n + 1));
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i)
            vertices[j * (n + 1) + i] = {static_cast<double>(i) / n,
                                         static_cast<double>(j) / n};

    std::vector<std::array<int, 3>> triangles;
    triangles.reserve(2 * n * n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const int a = j * (n + 1) + i;
            const int b = a + 1;
            const int c = b + (n + 1);
            const int d = a + (n + 1);
            triangles.push_back({a, b, c});
            triangles.push_back({a, c, d});
        }
    }
    return make_mesh(std::move(vertices), std::move(triangles), 1.0 / n);
}

/// Bookkeeping produced by one uniform (red) refinement step.
struct RefinementMap {
    std::vector<std::array<int, 4>> child_triangles;  // per coarse triangle
    std::vector<std::array<int, 2>> child_edges;      // per coarse edge
    std::vector<std::array<int, 3>> interior_edges;   // per coarse triangle
    std::vector<int> vertex_embedding;                // coarse vertex -> fine vertex
    std::vector<int> edge_midpoint_vertex;            // coarse edge -> fine vertex
};

/// Red refinement: connect edge midpoints, splitting every triangle into
/// four congruent children.
///
/// Fine vertices are numbered so that for every coarse edge (a,b) with
/// a < b the midpoint id lies strictly between the embedded ids of a and
/// b.  Both child edges then inherit the parent's global normal
/// direction, so flux degrees of freedom transfer without sign flips.
inline std::pair<TriangleMesh, RefinementMap> uniform_refine(const TriangleMesh& coarse) {
    const int nv = coarse.num_vertices();
    const int ne = coarse.num_edges();

    RefinementMap map;
    map.vertex_embedding.assign(nv, -1);
    map.edge_midpoint_vertex.assign(ne, -1);

    // Edges grouped by lower endpoint, sorted by upper endpoint.
    std::vector<std::vector<std::pair<int, int>>> edges_at(nv);
    for (int e = 0; e < ne; ++e) edges_at[coarse.edges[e][0]].push_back({coarse.edges[e][1], e});
    for (auto& v : edges_at) std::sort(v.begin(), v.end());

    std::vector<Vec2> fine_vertices;
    fine_vertices.reserve(nv + ne);
    for (int a = 0; a < nv; ++a) {
        map.vertex_embedding[a] = static_cast<int>(fine_vertices.size());
        fine_vertices.push_back(coarse.vertices[a]);
        for (const auto& [b, e] : edges_at[a]) {
            map.edge_midpoint_vertex[e] = static_cast<int>(fine_vertices.size());
            fine_vertices.push_back(0.5 * (coarse.vertices[a] + coarse.vertices[b]));
        }
    }

    std::vector<std::array<int, 3>> fine_triangles;
    fine_triangles.reserve(4 * coarse.num_triangles());
    map.child_triangles.assign(coarse.num_triangles(), {-1, -1, -1, -1});
    for (int t = 0; t < coarse.num_triangles(); ++t) {
        const auto& tri = coarse.triangles[t];
        const int v0 = map.vertex_embedding[tri[0]];
        const int v1 = map.vertex_embedding[tri[1]];
        const int v2 = map.vertex_embedding[tri[2]];
        const int m0 = map.edge_midpoint_vertex[coarse.edge_of_triangle[t][0]];  // mid(v0,v1)
        const int m1 = map.edge_midpoint_vertex[coarse.edge_of_triangle[t][1]];  // mid(v1,v2)
        const int m2 = map.edge_midpoint_vertex[coarse.edge_of_triangle[t][2]];  // mid(v2,v0)
        const int base = static_cast<int>(fine_triangles.size());
        fine_triangles.push_back({v0, m0, m2});
        fine_triangles.push_back({v1, m1, m0});
        fine_triangles.push_back({v2, m2, m1});
        fine_triangles.push_back({m0, m1, m2});
        map.child_triangles[t] = {base, base + 1, base + 2, base + 3};
    }

    TriangleMesh fine = make_mesh(std::move(fine_vertices), std::move(fine_triangles),
                                  0.5 * coarse.mesh_size);

    std::map<std::pair<int, int>, int> fine_edge_id;
    for (int e = 0; e < fine.num_edges(); ++e)
        fine_edge_id.emplace(std::pair<int, int>{fine.edges[e][0], fine.edges[e][1]}, e);
    auto lookup = [&](int u, int v) {
        auto it = fine_edge_id.find({std::min(u, v), std::max(u, v)});
        if (it == fine_edge_id.end()) throw std::runtime_error("uniform_refine: missing fine edge");
        return it->second;
    };

    map.child_edges.assign(ne, {-1, -1});
    for (int e = 0; e < ne; ++e) {
        const int a = map.vertex_embedding[coarse.edges[e][0]];
        const int b = map.vertex_embedding[coarse.edges[e][1]];
        const int m = map.edge_midpoint_vertex[e];
        map.child_edges[e] = {lookup(a, m), lookup(m, b)};
    }
    map.interior_edges.assign(coarse.num_triangles(), {-1, -1, -1});
    for (int t = 0; t < coarse.num_triangles(); ++t) {
        const int m0 = map.edge_midpoint_vertex[coarse.edge_of_triangle[t][0]];
        const int m1 = map.edge_midpoint_vertex[coarse.edge_of_triangle[t][1]];
        const int m2 = map.edge_midpoint_vertex[coarse.edge_of_triangle[t][2]];
        map.interior_edges[t] = {lookup(m0, m1), lookup(m1, m2), lookup(m2, m0)};
    }
    return {std::move(fine), std::move(map)};
}

/// Randomly displace interior vertices by up to magnitude * h in each
/// coordinate.  Displacements that would invert an incident triangle are
/// redrawn; boundary vertices stay put.  Deterministic for a fixed seed.
inline TriangleMesh distort_mesh(const TriangleMesh& mesh, double magnitude,
                                 std::uint64_t seed) {
    if (magnitude < 0.0 || magnitude >= 0.5)
        throw std::invalid_argument("distort_mesh: magnitude must be in [0, 0.5)");
    if (mesh.mesh_size <= 0.0)
        throw std::invalid_argument("distort_mesh: mesh has no structured spacing");

    std::vector<std::vector<int>> triangles_at(mesh.num_vertices());
    for (int t = 0; t < mesh.num_triangles(); ++t)
        for (int v : mesh.triangles[t]) triangles_at[v].push_back(t);

    TriangleMesh out = mesh;
    std::mt19937_64 rng(seed);
    auto uniform = [&rng]() {
        return static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
    };
    const double amp = magnitude * mesh.mesh_size;

    for (int v = 0; v < mesh.num_vertices(); ++v) {
        if (mesh.vertex_on_boundary(v)) continue;
        const Vec2 original = out.vertices[v];
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            const Vec2 trial{original.x + amp * (2.0 * uniform() - 1.0),
                             original.y + amp * (2.0 * uniform() - 1.0)};
            out.vertices[v] = trial;
            placed = true;
            for (int t : triangles_at[v]) {
                if (!(out.signed_area(t) > 0.0)) {
                    placed = false;
                    break;
                }
            }
        }
        if (!placed) {
            throw std::runtime_error("distort_mesh: no valid displacement found; "
                                     "magnitude too large");
        }
    }
    detail::validate(out);
    return out;
}

/// Plain-text dump: counts line "V E T", then vertex coordinates, edge
/// pairs, and triangle triples.
inline void dump_mesh(const TriangleMesh& mesh, std::ostream& os) {
    os << mesh.num_vertices() << ' ' << mesh.num_edges() << ' ' << mesh.num_triangles()
       << '\n';
    char buf[80];
    for (const auto& p : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x, p.y);
        os << buf;
    }
    for (const auto& e : mesh.edges) os << e[0] << ' ' << e[1] << '\n';
    for (const auto& t : mesh.triangles) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

}  // namespace saddlemg
