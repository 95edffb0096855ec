#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include "saddlemg/linalg.hpp"
#include "saddlemg/mesh.hpp"

namespace saddlemg {

/// Symmetric 2x2 tensor.
struct SymTensor2 {
    double k11 = 1.0;
    double k12 = 0.0;
    double k22 = 1.0;

    SymTensor2 inverse() const {
        const double det = k11 * k22 - k12 * k12;
        if (!(k11 > 0.0) || !(det > 0.0))
            throw std::runtime_error("SymTensor2: tensor sample is not SPD");
        return {k22 / det, -k12 / det, k11 / det};
    }
    Vec2 apply(Vec2 v) const { return {k11 * v.x + k12 * v.y, k12 * v.x + k22 * v.y}; }
};

/// Spatially varying SPD diffusion tensor K; the mass matrix weights by
/// K^{-1}.  The triangle index is available for element-attached data.
struct CoefficientTensor {
    std::function<SymTensor2(double x, double y, int triangle)> eval;

    static CoefficientTensor identity() {
        return {[](double, double, int) { return SymTensor2{}; }};
    }
};

/// The coefficient fields of the four benchmark problems:
///  1: identity tensor;
///  2: smooth full tensor [[1+4(x^2+y^2), 3xy], [3xy, 1+11(x^2+y^2)]];
///  3, 4: a(x) I with a = 10^{-p}, p drawn uniformly from {0,...,5} per
///        cell of the fixed 4x4 partition of the unit square.
inline CoefficientTensor example_tensor(int id, std::uint64_t seed = 1) {
    switch (id) {
        case 1:
            return CoefficientTensor::identity();
        case 2:
            return {[](double x, double y, int) {
                const double r2 = x * x + y * y;
                return SymTensor2{1.0 + 4.0 * r2, 3.0 * x * y, 1.0 + 11.0 * r2};
            }};
        case 3:
        case 4: {
            std::mt19937_64 rng(seed);
            std::vector<double> cell_value(16);
            for (int c = 0; c < 16; ++c) {
                const int p = static_cast<int>(rng() % 6);
                cell_value[c] = std::pow(10.0, -p);
            }
            return {[cell_value](double x, double y, int) {
                const int i = std::min(3, std::max(0, static_cast<int>(x * 4.0)));
                const int j = std::min(3, std::max(0, static_cast<int>(y * 4.0)));
                const double a = cell_value[j * 4 + i];
                return SymTensor2{a, 0.0, a};
            }};
        }
        default:
            throw std::invalid_argument("example_tensor: id must be in 1..4");
    }
}

/// The benchmark coefficient field of the distorted-grid problem: the
/// same per-cell values as example_tensor(3, seed), but attached to the
/// logical cells of the given initial grid (two triangles per original
/// square).  Points are located through the coarse triangulation, so the
/// field follows the distorted cells and stays aligned with every mesh
/// obtained by refining that grid.
inline CoefficientTensor cell_tensor_on_grid(const TriangleMesh& initial_grid,
                                             std::uint64_t seed) {
    if (initial_grid.num_triangles() != 32)
        throw std::invalid_argument("cell_tensor_on_grid: expects the 4x4 initial grid");
    std::mt19937_64 rng(seed);
    auto cell_value = std::make_shared<std::vector<double>>(16);
    for (int c = 0; c < 16; ++c) {
        const int p = static_cast<int>(rng() % 6);
        (*cell_value)[c] = std::pow(10.0, -p);
    }
    auto grid = std::make_shared<const TriangleMesh>(initial_grid);
    return {[cell_value, grid](double x, double y, int) {
        const Vec2 p{x, y};
        for (int t = 0; t < grid->num_triangles(); ++t) {
            const auto& tri = grid->triangles[t];
            const Vec2 a = grid->vertices[tri[0]];
            const Vec2 b = grid->vertices[tri[1]];
            const Vec2 c = grid->vertices[tri[2]];
            if (cross(b - a, p - a) >= -1e-13 && cross(c - b, p - b) >= -1e-13 &&
                cross(a - c, p - c) >= -1e-13) {
                const double v = (*cell_value)[(t / 2) % 16];
                return SymTensor2{v, 0.0, v};
            }
        }
        throw std::runtime_error("cell_tensor_on_grid: point outside the initial grid");
    }};
}

namespace detail {

/// RT0 basis field on triangle t for local edge slot s, scaled so the
/// degree of freedom is the total flux through the edge in the direction
/// of the global edge normal: phi(x) = sigma(T,E) (x - p_opp) / (2|T|).
inline Vec2 rt0_basis(const TriangleMesh& mesh, int t, int s, Vec2 x) {
    const auto& tri = mesh.triangles[t];
    const Vec2 opp = mesh.vertices[tri[(s + 2) % 3]];
    const double scale = mesh.edge_sign[t][s] / (2.0 * mesh.area(t));
    return scale * (x - opp);
}

}  // namespace detail

/// Evaluate an RT0 flux field (coefficients = edge fluxes) at a point of
/// triangle t.
inline Vec2 rt0_evaluate(const TriangleMesh& mesh, const std::vector<double>& flux, int t,
                         Vec2 x) {
    Vec2 u{0.0, 0.0};
    for (int s = 0; s < 3; ++s) {
        const Vec2 phi = detail::rt0_basis(mesh, t, s, x);
        u = u + flux[mesh.edge_of_triangle[t][s]] * phi;
    }
    return u;
}

/// Weighted RT0 mass matrix, entries int_T K^{-1} phi_E . phi_E' dx,
/// assembled with the strictly interior 3-point degree-2 rule (barycentric
/// 2/3, 1/6, 1/6); exact for constant K.  Interior sample points keep
/// discontinuous coefficients well defined when jumps align with mesh
/// lines, where the edge-midpoint rule would sample on the interface.
inline SparseMatrix assemble_mass(const TriangleMesh& mesh, const CoefficientTensor& k) {
    std::vector<std::tuple<int, int, double>> triplets;
    triplets.reserve(9 * mesh.num_triangles());
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double w = mesh.area(t) / 3.0;
        const Vec2 a = mesh.vertices[tri[0]];
        const Vec2 b = mesh.vertices[tri[1]];
        const Vec2 c = mesh.vertices[tri[2]];
        const Vec2 qp[3] = {
            (1.0 / 6.0) * (4.0 * a + b + c),
            (1.0 / 6.0) * (a + 4.0 * b + c),
            (1.0 / 6.0) * (a + b + 4.0 * c),
        };
        double local[3][3] = {};
        for (int q = 0; q < 3; ++q) {
            const SymTensor2 kinv = k.eval(qp[q].x, qp[q].y, t).inverse();
            Vec2 phi[3];
            for (int s = 0; s < 3; ++s) phi[s] = detail::rt0_basis(mesh, t, s, qp[q]);
            for (int i = 0; i < 3; ++i) {
                const Vec2 kphi = kinv.apply(phi[i]);
                for (int j = i; j < 3; ++j) local[i][j] += w * dot(kphi, phi[j]);
            }
        }
        for (int i = 0; i < 3; ++i)  // mirror for exact symmetry
            for (int j = 0; j < i; ++j) local[i][j] = local[j][i];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                triplets.emplace_back(mesh.edge_of_triangle[t][i], mesh.edge_of_triangle[t][j],
                                      local[i][j]);
    }
    return SparseMatrix::from_triplets(mesh.num_edges(), mesh.num_edges(), std::move(triplets));
}

/// Discrete -div: row T, column E holds -sigma(T,E); for unit-flux RT0
/// basis functions int_T div phi_E dx = sigma(T,E).
inline SparseMatrix assemble_div(const TriangleMesh& mesh) {
    std::vector<std::tuple<int, int, double>> triplets;
    triplets.reserve(3 * mesh.num_triangles());
    for (int t = 0; t < mesh.num_triangles(); ++t)
        for (int s = 0; s < 3; ++s)
            triplets.emplace_back(t, mesh.edge_of_triangle[t][s],
                                  -static_cast<double>(mesh.edge_sign[t][s]));
    return SparseMatrix::from_triplets(mesh.num_triangles(), mesh.num_edges(),
                                       std::move(triplets));
}

/// Element averages of f times element areas (the pressure-block load).
/// Uses the same 3-point midpoint rule as the mass matrix.
inline std::vector<double> assemble_rhs(const TriangleMesh& mesh,
                                        const std::function<double(double, double)>& f) {
    std::vector<double> rhs(mesh.num_triangles(), 0.0);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        double avg = 0.0;
        for (int s = 0; s < 3; ++s) {
            const Vec2 m = 0.5 * (mesh.vertices[tri[s]] + mesh.vertices[tri[(s + 1) % 3]]);
            avg += f(m.x, m.y);
        }
        rhs[t] = mesh.area(t) * (avg / 3.0);
    }
    return rhs;
}

/// Quadrature averages f_T of f per element.
inline std::vector<double> element_averages(const TriangleMesh& mesh,
                                            const std::function<double(double, double)>& f) {
    std::vector<double> avg(mesh.num_triangles(), 0.0);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        double s3 = 0.0;
        for (int s = 0; s < 3; ++s) {
            const Vec2 m = 0.5 * (mesh.vertices[tri[s]] + mesh.vertices[tri[(s + 1) % 3]]);
            s3 += f(m.x, m.y);
        }
        avg[t] = s3 / 3.0;
    }
    return avg;
}

/// Prescribed boundary fluxes: per boundary edge the integral of the
/// outward normal flux density g, oriented along the global edge normal.
/// Uses 2-point Gauss along the edge.
inline std::vector<double> boundary_flux_values(
    const TriangleMesh& mesh, const std::function<double(double, double)>& g) {
    std::vector<double> values(mesh.num_edges(), 0.0);
    // Outward of the domain = outward of the single adjacent triangle.
    std::vector<int> bdry_sign(mesh.num_edges(), 0);
    for (int t = 0; t < mesh.num_triangles(); ++t)
        for (int s = 0; s < 3; ++s) {
            const int e = mesh.edge_of_triangle[t][s];
            if (mesh.boundary_edge_flags[e]) bdry_sign[e] = mesh.edge_sign[t][s];
        }
    const double gauss = 0.5 / std::sqrt(3.0);
    for (int e = 0; e < mesh.num_edges(); ++e) {
        if (!mesh.boundary_edge_flags[e]) continue;
        const Vec2 a = mesh.vertices[mesh.edges[e][0]];
        const Vec2 b = mesh.vertices[mesh.edges[e][1]];
        const Vec2 mid = 0.5 * (a + b);
        const Vec2 half = 0.5 * (b - a);
        const Vec2 q1 = mid - 2.0 * gauss * half;
        const Vec2 q2 = mid + 2.0 * gauss * half;
        const double len = mesh.edge_length(e);
        values[e] = bdry_sign[e] * 0.5 * len * (g(q1.x, q1.y) + g(q2.x, q2.y));
    }
    return values;
}

/// Flux unknowns: one coefficient per edge, the total normal flux
/// int_E u . n_E ds.
struct FluxField {
    std::vector<double> coefficients;
};

/// Piecewise-constant pressure, one coefficient per triangle.
struct PressureField {
    std::vector<double> coefficients;
};

/// Assembled saddle system of the mixed discretization.  Boundary-edge
/// unknowns stay in the system and are pinned to their prescribed values.
struct MixedSystem {
    SparseMatrix M;
    SparseMatrix B;
    std::vector<double> rhs_u;
    std::vector<double> rhs_p;
    std::vector<int> fixed_dofs;       // boundary edge ids
    std::vector<double> fixed_values;  // aligned with fixed_dofs
};

inline MixedSystem assemble_mixed_system(const TriangleMesh& mesh, const CoefficientTensor& k,
                                         const std::function<double(double, double)>& f,
                                         const std::function<double(double, double)>& g) {
    MixedSystem sys;
    sys.M = assemble_mass(mesh, k);
    sys.B = assemble_div(mesh);
    sys.rhs_u.assign(mesh.num_edges(), 0.0);
    sys.rhs_p = assemble_rhs(mesh, f);
    const auto bvals = boundary_flux_values(mesh, g);
    for (int e = 0; e < mesh.num_edges(); ++e) {
        if (mesh.boundary_edge_flags[e]) {
            sys.fixed_dofs.push_back(e);
            sys.fixed_values.push_back(bvals[e]);
        }
    }
    return sys;
}

/// Crouzeix-Raviart system: stiffness over edge-midpoint unknowns,
/// load vector, and the weights of the mean constraint
/// (int lambda = sum_E mean_weights[E] * lambda_E).
struct CRSystem {
    SparseMatrix stiffness;
    std::vector<double> rhs;
    std::vector<double> mean_weights;
};

/// Assemble the CR nonconforming discretization of the Neumann problem.
/// On each triangle the basis function of edge E is 1 - 2*ell_opp, with
/// constant gradient (|E|/|T|) n_out; gradients are assembled exactly.
inline CRSystem assemble_cr(const TriangleMesh& mesh,
                            const std::function<double(double, double)>& f) {
    CRSystem sys;
    std::vector<std::tuple<int, int, double>> triplets;
    triplets.reserve(9 * mesh.num_triangles());
    sys.rhs.assign(mesh.num_edges(), 0.0);
    sys.mean_weights.assign(mesh.num_edges(), 0.0);
    const auto favg = element_averages(mesh, f);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const double at = mesh.area(t);
        Vec2 grad[3];
        for (int s = 0; s < 3; ++s) {
            // Edge slot s spans (v_s, v_{s+1}); outward normal scaled by |E|/|T|.
            const Vec2 a = mesh.vertices[tri[s]];
            const Vec2 b = mesh.vertices[tri[(s + 1) % 3]];
            const Vec2 n = rotate_cw(b - a);  // outward, length |E|
            grad[s] = (1.0 / at) * n;
        }
        for (int i = 0; i < 3; ++i) {
            const int ei = mesh.edge_of_triangle[t][i];
            sys.rhs[ei] += favg[t] * at / 3.0;
            sys.mean_weights[ei] += at / 3.0;
            for (int j = 0; j < 3; ++j)
                triplets.emplace_back(ei, mesh.edge_of_triangle[t][j],
                                      at * dot(grad[i], grad[j]));
        }
    }
    sys.stiffness = SparseMatrix::from_triplets(mesh.num_edges(), mesh.num_edges(),
                                                std::move(triplets));
    return sys;
}

}  // namespace saddlemg
