#pragma once

#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "saddlemg/linalg.hpp"
#include "saddlemg/mesh.hpp"
#include "saddlemg/mixed_fem.hpp"

namespace saddlemg {

/// Nested meshes T_1 ... T_J produced by repeated uniform refinement.
struct MeshHierarchy {
    std::vector<TriangleMesh> meshes;       // coarse to fine
    std::vector<RefinementMap> refinements; // refinements[k]: meshes[k] -> meshes[k+1]

    int levels() const { return static_cast<int>(meshes.size()); }
    const TriangleMesh& finest() const { return meshes.back(); }
    double h(int k) const { return meshes[k].mesh_size; }
};

inline MeshHierarchy build_hierarchy(TriangleMesh coarse, int levels) {
    if (levels < 1) throw std::invalid_argument("build_hierarchy: need at least one level");
    MeshHierarchy hier;
    hier.meshes.push_back(std::move(coarse));
    for (int k = 1; k < levels; ++k) {
        auto [fine, map] = uniform_refine(hier.meshes.back());
        hier.meshes.push_back(std::move(fine));
        hier.refinements.push_back(std::move(map));
    }
    return hier;
}

/// The edges and triangles around one interior vertex, together with the
/// one-dimensional divergence-free direction of the patch: the signed
/// coefficients of the curl of the vertex hat function.  Every entry is
/// +-1; the sign records the global edge orientation relative to a
/// counterclockwise loop around the vertex.
struct PatchIndexSet {
    int level = 0;
    int vertex = -1;
    std::vector<int> edge_ids;       // incident edges, counterclockwise
    std::vector<int> triangle_ids;   // incident triangles
    std::vector<double> kernel_vector;
};

/// One patch for every interior vertex of the mesh.  Boundary vertices
/// produce no patch: the curl of their hat function has nonzero normal
/// trace on the boundary.
inline std::vector<PatchIndexSet> vertex_patches(const TriangleMesh& mesh, int level = 0) {
    const int nv = mesh.num_vertices();
    std::vector<char> on_boundary(nv, 0);
    for (int e = 0; e < mesh.num_edges(); ++e)
        if (mesh.boundary_edge_flags[e]) {
            on_boundary[mesh.edges[e][0]] = 1;
            on_boundary[mesh.edges[e][1]] = 1;
        }

    std::vector<std::vector<int>> edges_at(nv);
    for (int e = 0; e < mesh.num_edges(); ++e) {
        edges_at[mesh.edges[e][0]].push_back(e);
        edges_at[mesh.edges[e][1]].push_back(e);
    }
    std::vector<std::vector<int>> triangles_at(nv);
    for (int t = 0; t < mesh.num_triangles(); ++t)
        for (int v : mesh.triangles[t]) triangles_at[v].push_back(t);

    std::vector<PatchIndexSet> patches;
    for (int v = 0; v < nv; ++v) {
        if (on_boundary[v]) continue;
        PatchIndexSet patch;
        patch.level = level;
        patch.vertex = v;
        patch.edge_ids = edges_at[v];
        // Counterclockwise by angle of the outgoing edge direction.
        std::sort(patch.edge_ids.begin(), patch.edge_ids.end(), [&](int a, int b) {
            auto angle = [&](int e) {
                const int other = mesh.edges[e][0] == v ? mesh.edges[e][1] : mesh.edges[e][0];
                const Vec2 d = mesh.vertices[other] - mesh.vertices[v];
                return std::atan2(d.y, d.x);
            };
            return angle(a) < angle(b);
        });
        patch.triangle_ids = triangles_at[v];
        patch.kernel_vector.resize(patch.edge_ids.size());
        for (std::size_t i = 0; i < patch.edge_ids.size(); ++i) {
            // Flux of curl(hat_v) through E is hat_v at the higher-indexed
            // endpoint minus hat_v at the lower-indexed endpoint.
            patch.kernel_vector[i] = (mesh.edges[patch.edge_ids[i]][1] == v) ? 1.0 : -1.0;
        }
        patches.push_back(std::move(patch));
    }
    return patches;
}

/// Natural inclusion of the coarse flux space into the fine one, as a
/// (fine edges) x (coarse edges) sparse matrix.
struct Prolongation {
    SparseMatrix matrix;
};

/// Exact RT0 embedding: each child of a coarse edge inherits half of the
/// parent flux (the normal component of an RT0 field is constant along
/// the parent edge); interior fine edges of a coarse triangle receive the
/// line integrals of the coarse basis fields, evaluated with 2-point
/// Gauss (exact, the integrand is affine).
inline Prolongation build_prolongation(const TriangleMesh& coarse, const TriangleMesh& fine,
                                       const RefinementMap& map) {
    std::vector<std::tuple<int, int, double>> triplets;
    triplets.reserve(2 * coarse.num_edges() + 9 * coarse.num_triangles());
    for (int e = 0; e < coarse.num_edges(); ++e) {
        triplets.emplace_back(map.child_edges[e][0], e, 0.5);
        triplets.emplace_back(map.child_edges[e][1], e, 0.5);
    }
    const double gauss = 1.0 / std::sqrt(3.0);
    for (int t = 0; t < coarse.num_triangles(); ++t) {
        for (int fe : map.interior_edges[t]) {
            const Vec2 a = fine.vertices[fine.edges[fe][0]];
            const Vec2 b = fine.vertices[fine.edges[fe][1]];
            const Vec2 mid = 0.5 * (a + b);
            const Vec2 half = 0.5 * (b - a);
            const Vec2 q1 = mid - gauss * half;
            const Vec2 q2 = mid + gauss * half;
            const Vec2 n = rotate_cw(b - a);  // length |fe| times unit normal
            for (int s = 0; s < 3; ++s) {
                const Vec2 phi1 = detail::rt0_basis(coarse, t, s, q1);
                const Vec2 phi2 = detail::rt0_basis(coarse, t, s, q2);
                const double flux = 0.5 * (dot(phi1, n) + dot(phi2, n));
                triplets.emplace_back(fe, coarse.edge_of_triangle[t][s], flux);
            }
        }
    }
    return {SparseMatrix::from_triplets(fine.num_edges(), coarse.num_edges(),
                                        std::move(triplets))};
}

inline Prolongation build_prolongation(const MeshHierarchy& hier, int k) {
    if (k < 0 || k + 1 >= hier.levels())
        throw std::invalid_argument("build_prolongation: level out of range");
    return build_prolongation(hier.meshes[k], hier.meshes[k + 1], hier.refinements[k]);
}

/// Residual transfer to the coarse level: r_H = P^T r_h.
inline std::vector<double> restrict_residual(const Prolongation& p,
                                             const std::vector<double>& r_fine) {
    return spmv_transpose(p.matrix, r_fine);
}

/// Galerkin coarse operator P^T A P.
inline SparseMatrix galerkin_product(const SparseMatrix& p, const SparseMatrix& a) {
    if (a.rows != p.rows || a.cols != p.rows)
        throw std::invalid_argument("galerkin_product: shape mismatch");
    std::vector<std::tuple<int, int, double>> triplets;
    for (int r = 0; r < a.rows; ++r) {
        for (int ka = a.row_ptr[r]; ka < a.row_ptr[r + 1]; ++ka) {
            const int c = a.col_idx[ka];
            const double v = a.values[ka];
            for (int kr = p.row_ptr[r]; kr < p.row_ptr[r + 1]; ++kr)
                for (int kc = p.row_ptr[c]; kc < p.row_ptr[c + 1]; ++kc)
                    triplets.emplace_back(p.col_idx[kr], p.col_idx[kc],
                                          p.values[kr] * v * p.values[kc]);
        }
    }
    return SparseMatrix::from_triplets(p.cols, p.cols, std::move(triplets));
}

}  // namespace saddlemg
