#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <vector>

#include "saddlemg/mixed_fem.hpp"
#include "saddlemg/saddle_mg.hpp"

namespace saddlemg {

/// Crouzeix-Raviart function: one value per edge midpoint.
struct CRField {
    std::vector<double> coefficients;
};

/// Elementwise gradient of a CR function (constant per triangle).
inline std::vector<Vec2> cr_gradients(const TriangleMesh& mesh, const CRField& lambda) {
    std::vector<Vec2> grad(mesh.num_triangles());
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        Vec2 g{0.0, 0.0};
        for (int s = 0; s < 3; ++s) {
            // CR basis gradient: (|E|/|T|) n_out for the edge spanned by
            // (v_s, v_{s+1}).
            const Vec2 a = mesh.vertices[tri[s]];
            const Vec2 b = mesh.vertices[tri[(s + 1) % 3]];
            const Vec2 n = rotate_cw(b - a);
            g = g + (lambda.coefficients[mesh.edge_of_triangle[t][s]] / mesh.area(t)) * n;
        }
        grad[t] = g;
    }
    return grad;
}

/// Gradient parts of an RT0 flux: the field evaluated at the barycenter,
/// where the linear (divergence-carrying) part vanishes.  For the pair
/// (u, lambda) of the mixed-nonconforming correspondence this equals the
/// broken gradient of lambda on each element.
inline std::vector<Vec2> flux_gradient_parts(const TriangleMesh& mesh,
                                             const std::vector<double>& flux) {
    std::vector<Vec2> grad(mesh.num_triangles());
    for (int t = 0; t < mesh.num_triangles(); ++t)
        grad[t] = rt0_evaluate(mesh, flux, t, mesh.barycenter(t));
    return grad;
}

/// Broken H1 pairing of two elementwise-constant gradients.
inline double broken_h1_product(const TriangleMesh& mesh, const std::vector<Vec2>& a,
                                const std::vector<Vec2>& b) {
    double s = 0.0;
    for (int t = 0; t < mesh.num_triangles(); ++t) s += mesh.area(t) * dot(a[t], b[t]);
    return s;
}

/// Flux of the mixed approximation recovered from a CR function:
/// u|_T = grad lambda|_T - (f_T/2)(x - x_T), evaluated as edge degrees of
/// freedom int_E u.n_E = int_E grad lambda . n_E - sigma(T,E) f_T |T|/3.
/// Interior edges average the two elementwise values (they coincide
/// whenever lambda solves the local equations).
inline FluxField cr_to_flux(const TriangleMesh& mesh, const CRField& lambda,
                            const std::vector<double>& f_avg) {
    const auto grad = cr_gradients(mesh, lambda);
    std::vector<double> flux(mesh.num_edges(), 0.0);
    std::vector<int> sides(mesh.num_edges(), 0);
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        for (int s = 0; s < 3; ++s) {
            const int e = mesh.edge_of_triangle[t][s];
            const Vec2 a = mesh.vertices[mesh.edges[e][0]];
            const Vec2 b = mesh.vertices[mesh.edges[e][1]];
            const Vec2 n = rotate_cw(b - a);  // global normal scaled by |E|
            const double value =
                dot(grad[t], n) - mesh.edge_sign[t][s] * f_avg[t] * mesh.area(t) / 3.0;
            flux[e] += value;
            ++sides[e];
        }
    }
    for (int e = 0; e < mesh.num_edges(); ++e) flux[e] /= sides[e];
    return {std::move(flux)};
}

/// CR function recovered from a constraint-feasible flux:
/// grad lambda|_T is the gradient part of u, midpoint values are
/// integrated along a spanning tree of the element adjacency graph, and
/// the result is normalized to zero mean.  The maximal two-sided
/// disagreement across interior edges is reported through
/// *consistency_residual (zero exactly when u lies in the image of
/// cr_to_flux).
inline CRField flux_to_cr(const TriangleMesh& mesh, const std::vector<double>& flux,
                          const std::vector<double>& f_avg,
                          double* consistency_residual = nullptr) {
    // Feasibility: the elementwise divergence must match -f_T.
    double scale = 1e-12;
    for (int e = 0; e < mesh.num_edges(); ++e) scale = std::max(scale, std::abs(flux[e]));
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        double bu = 0.0;
        for (int s = 0; s < 3; ++s)
            bu -= mesh.edge_sign[t][s] * flux[mesh.edge_of_triangle[t][s]];
        if (std::abs(bu - f_avg[t] * mesh.area(t)) > 1e-8 * std::max(scale, 1.0))
            throw std::invalid_argument("flux_to_cr: flux violates the element constraint");
    }

    const auto grad = flux_gradient_parts(mesh, flux);

    // Triangle adjacency over interior edges.
    std::vector<std::vector<int>> tris_of_edge(mesh.num_edges());
    for (int t = 0; t < mesh.num_triangles(); ++t)
        for (int s = 0; s < 3; ++s) tris_of_edge[mesh.edge_of_triangle[t][s]].push_back(t);

    std::vector<double> offset(mesh.num_triangles(), 0.0);
    std::vector<char> seen(mesh.num_triangles(), 0);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = 1;
    while (!frontier.empty()) {
        const int t = frontier.front();
        frontier.pop();
        for (int s = 0; s < 3; ++s) {
            const int e = mesh.edge_of_triangle[t][s];
            for (int t2 : tris_of_edge[e]) {
                if (seen[t2]) continue;
                // Match the shared midpoint value across the edge.
                const Vec2 m = mesh.edge_midpoint(e);
                offset[t2] = offset[t] + dot(grad[t], m - mesh.barycenter(t)) -
                             dot(grad[t2], m - mesh.barycenter(t2));
                seen[t2] = 1;
                frontier.push(t2);
            }
        }
    }

    CRField lambda;
    lambda.coefficients.assign(mesh.num_edges(), 0.0);
    double mismatch = 0.0;
    for (int e = 0; e < mesh.num_edges(); ++e) {
        const Vec2 m = mesh.edge_midpoint(e);
        double sum = 0.0;
        std::vector<double> vals;
        for (int t : tris_of_edge[e]) {
            const double v = offset[t] + dot(grad[t], m - mesh.barycenter(t));
            vals.push_back(v);
            sum += v;
        }
        lambda.coefficients[e] = sum / vals.size();
        if (vals.size() == 2) mismatch = std::max(mismatch, std::abs(vals[0] - vals[1]));
    }
    if (consistency_residual) *consistency_residual = mismatch;

    // Zero mean: int lambda = sum_T |T|/3 sum of its midpoint values.
    double integral = 0.0, area = 0.0;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        for (int s = 0; s < 3; ++s)
            integral += mesh.area(t) / 3.0 * lambda.coefficients[mesh.edge_of_triangle[t][s]];
        area += mesh.area(t);
    }
    const double shift = integral / area;
    for (double& v : lambda.coefficients) v -= shift;
    return lambda;
}

/// Piecewise-constant source of the patch-local problem cast in
/// nonconforming form: delta_f = div(M_loc^{-1} r) on the patch
/// triangles.  Adding the correction -M_loc^{-1} r to the local Neumann
/// solution's flux reproduces the exact local saddle correction.
inline std::vector<double> cr_local_source(const TriangleMesh& mesh, const PatchIndexSet& patch,
                                           const SparseMatrix& m,
                                           const std::vector<double>& residual_loc) {
    const int n = static_cast<int>(patch.edge_ids.size());
    const DenseMatrix mloc = local_mass(m, patch.edge_ids);
    const auto z = dense_solve(mloc, residual_loc);
    std::vector<double> source(patch.triangle_ids.size(), 0.0);
    for (std::size_t ti = 0; ti < patch.triangle_ids.size(); ++ti) {
        const int t = patch.triangle_ids[ti];
        double div = 0.0;
        for (int s = 0; s < 3; ++s) {
            const int e = mesh.edge_of_triangle[t][s];
            for (int i = 0; i < n; ++i)
                if (patch.edge_ids[i] == e) div += mesh.edge_sign[t][s] * z[i];
        }
        source[ti] = div / mesh.area(t);
    }
    return source;
}

/// Direct solve of the CR Neumann system (dense; kernel of constants
/// removed by pinning one unknown, result normalized to zero mean).
inline CRField solve_cr_direct(const TriangleMesh& mesh,
                               const std::function<double(double, double)>& f) {
    const auto sys = assemble_cr(mesh, f);
    const int n = mesh.num_edges();
    DenseMatrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int k = sys.stiffness.row_ptr[i]; k < sys.stiffness.row_ptr[i + 1]; ++k)
            a(i, sys.stiffness.col_idx[k]) = sys.stiffness.values[k];
    std::vector<double> rhs = sys.rhs;
    for (int j = 0; j < n; ++j) {  // pin the first unknown
        a(0, j) = 0.0;
        a(j, 0) = 0.0;
    }
    a(0, 0) = 1.0;
    rhs[0] = 0.0;
    auto x = dense_solve(a, rhs);

    double integral = 0.0, area = 0.0;
    for (int t = 0; t < mesh.num_triangles(); ++t) area += mesh.area(t);
    for (int e = 0; e < n; ++e) integral += sys.mean_weights[e] * x[e];
    const double shift = integral / area;
    for (double& v : x) v -= shift;
    return {std::move(x)};
}

struct CRSolveResult {
    CRField lambda;
    FluxField flux;
    SolveStats stats;
    /// Largest relative mismatch, over the outer iterations, between
    /// ||u^{k} - u^{k-1}||_M^2 and the broken-H1 energy of the
    /// corresponding gradient increments.
    double equivalence_residual = 0.0;
};

/// V-cycle multigrid for the CR discretization through the mixed-method
/// equivalence: the iteration runs on the flux variable of the
/// equivalent saddle system (K = I) and the CR iterate is recovered from
/// the final flux.  Iteration counts coincide with the mixed solver's by
/// construction.
inline CRSolveResult cr_solve_mg(const MixedHierarchy& mh,
                                 const std::function<double(double, double)>& f,
                                 const SolverConfig& cfg) {
    cfg.validate();
    const MixedLevel& lvl = mh.finest();
    const TriangleMesh& mesh = mh.finest_mesh();

    const auto rhs_p = assemble_rhs(mesh, f);
    const auto f_avg = element_averages(mesh, f);
    const std::vector<double> boundary(mesh.num_edges(), 0.0);
    const std::vector<double> rhs_u(mesh.num_edges(), 0.0);

    CRSolveResult result;
    auto u = compatible_flux(mh, rhs_p, boundary).coefficients;

    SolveStats& stats = result.stats;
    stats.energy_history.push_back(detail::level_energy(lvl, u, rhs_u));
    stats.constraint_history.push_back(detail::constraint_residual_inf(lvl, u, rhs_p));

    double first_correction_energy = 0.0;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        std::vector<double> r = spmv(lvl.M, u);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = rhs_u[i] - r[i];
        detail::zero_fixed(lvl, r);

        const auto delta = vcycle(mh, mh.num_levels() - 1, r, cfg);
        const double br_r = std::inner_product(delta.begin(), delta.end(), r.begin(), 0.0);
        if (it == 1) {
            first_correction_energy = br_r;
            if (!(br_r > 0.0)) {
                stats.converged = true;
                break;
            }
        }
        const auto mu = spmv(lvl.M, u);
        double den = std::inner_product(u.begin(), u.end(), mu.begin(), 0.0);
        if (den < 1e-300) den = first_correction_energy;

        for (std::size_t i = 0; i < u.size(); ++i) u[i] += delta[i];

        // Energy equivalence between consecutive iterates: the flux
        // increment is divergence free, so its M-energy must equal the
        // broken-H1 energy of its gradient parts (gradient extraction is
        // linear in the flux).
        const auto mdelta = spmv(lvl.M, delta);
        const double lhs =
            std::inner_product(delta.begin(), delta.end(), mdelta.begin(), 0.0);
        const auto dgrad = flux_gradient_parts(mesh, delta);
        const double rhs_energy = broken_h1_product(mesh, dgrad, dgrad);
        if (lhs > 0.0)
            result.equivalence_residual =
                std::max(result.equivalence_residual, std::abs(lhs - rhs_energy) / lhs);

        const double est = std::sqrt(std::max(br_r, 0.0) / den);
        stats.iterations = it;
        stats.error_history.push_back(est);
        stats.energy_history.push_back(detail::level_energy(lvl, u, rhs_u));
        stats.constraint_history.push_back(detail::constraint_residual_inf(lvl, u, rhs_p));
        if (est <= cfg.tolerance) {
            stats.converged = true;
            break;
        }
    }
    stats.final_constraint_residual = stats.constraint_history.back();

    result.lambda = flux_to_cr(mesh, u, f_avg);
    result.flux.coefficients = std::move(u);
    return result;
}

}  // namespace saddlemg
