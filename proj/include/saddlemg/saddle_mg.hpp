#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include "saddlemg/hierarchy.hpp"
#include "saddlemg/linalg.hpp"
#include "saddlemg/mesh.hpp"
#include "saddlemg/mixed_fem.hpp"

namespace saddlemg {

enum class SmootherKind { ExactKernel, ExactDense, InexactDiagonal };

struct SolverConfig {
    double tolerance = 1e-8;
    int max_iterations = 100;
    int pre_sweeps = 1;
    int post_sweeps = 1;
    SmootherKind kind = SmootherKind::ExactKernel;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(tolerance > 0.0)) throw std::invalid_argument("SolverConfig: tolerance <= 0");
        if (pre_sweeps < 0 || post_sweeps < 0 || pre_sweeps + post_sweeps < 1)
            throw std::invalid_argument("SolverConfig: need pre + post >= 1");
    }
};

/// Energy drop of one smoother sweep next to the accumulated
/// half-sum of squared correction energies; the two agree for exact
/// local solves.
struct SweepEnergySample {
    double energy_drop = 0.0;
    double half_sum_sq = 0.0;
};

struct SweepEnergyCollector {
    int max_samples = 16;
    std::vector<SweepEnergySample> samples;
    bool active() const { return static_cast<int>(samples.size()) < max_samples; }
};

struct SolveStats {
    int iterations = 0;
    bool converged = false;
    std::vector<double> error_history;       // stopping estimate per iteration
    std::vector<double> energy_history;      // E(u^k) including the start
    std::vector<double> constraint_history;  // ||B u^k - rhs_p||_inf per iteration
    double final_constraint_residual = 0.0;
    std::vector<SweepEnergySample> sweep_samples;
};

/// One level of the assembled saddle hierarchy.
struct MixedLevel {
    SparseMatrix M;
    SparseMatrix B;
    std::vector<char> edge_fixed;
    std::vector<PatchIndexSet> patches;
    // Cached per-patch data for the smoother.
    std::vector<DenseMatrix> patch_mass;
    std::vector<double> patch_kernel_energy;  // c^T M_loc c
    // Coarsest-level factorization (free edges + all but one pressure),
    // with the matrix retained for iterative refinement.
    std::vector<int> free_edges;
    std::shared_ptr<const DenseMatrix> coarse_matrix;
    std::shared_ptr<const DenseLU> coarse_lu;

    std::vector<double> coarse_solve(const std::vector<double>& rhs) const {
        return coarse_lu->solve_refined(*coarse_matrix, rhs, 1);
    }
};

/// Meshes plus per-level assembled operators and transfer matrices.
/// Each level is assembled directly from its mesh with the same
/// coefficient tensor.
struct MixedHierarchy {
    MeshHierarchy geometry;
    std::vector<MixedLevel> levels;
    std::vector<Prolongation> prolongations;  // [k]: level k -> k+1

    int num_levels() const { return static_cast<int>(levels.size()); }
    const TriangleMesh& finest_mesh() const { return geometry.finest(); }
    const MixedLevel& finest() const { return levels.back(); }
};

inline DenseMatrix local_mass(const SparseMatrix& m, const std::vector<int>& edges) {
    const int n = static_cast<int>(edges.size());
    DenseMatrix loc(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) loc(i, j) = m.coeff(edges[i], edges[j]);
    return loc;
}

namespace detail {

/// Saddle matrix of the coarsest level: free edges plus all pressures but
/// the last (the dropped divergence row is implied by column telescoping).
inline DenseMatrix coarse_saddle_matrix(const MixedLevel& level) {
    const int nf = static_cast<int>(level.free_edges.size());
    const int mt = level.B.rows;
    const int dim = nf + mt - 1;
    DenseMatrix a(dim, dim);
    for (int i = 0; i < nf; ++i)
        for (int j = 0; j < nf; ++j) a(i, j) = level.M.coeff(level.free_edges[i], level.free_edges[j]);
    for (int t = 0; t < mt - 1; ++t)
        for (int j = 0; j < nf; ++j) {
            const double v = level.B.coeff(t, level.free_edges[j]);
            a(nf + t, j) = v;
            a(j, nf + t) = v;
        }
    return a;
}

}  // namespace detail

namespace detail {

inline SparseMatrix symmetrized(const SparseMatrix& a) {
    std::vector<std::tuple<int, int, double>> trips;
    trips.reserve(2 * a.values.size());
    for (int i = 0; i < a.rows; ++i)
        for (int k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
            trips.emplace_back(i, a.col_idx[k], 0.5 * a.values[k]);
            trips.emplace_back(a.col_idx[k], i, 0.5 * a.values[k]);
        }
    return SparseMatrix::from_triplets(a.rows, a.cols, std::move(trips));
}

}  // namespace detail

/// Assemble the finest mass matrix from the mesh and push it down with
/// Galerkin products M_k = P^T M_{k+1} P.  The coarse-level operators are
/// then the restrictions of the finest energy to the coarse subspaces,
/// which is what the subspace-correction iteration minimizes; with
/// constant coefficients this coincides with direct coarse assembly.
inline MixedHierarchy build_mixed_hierarchy(MeshHierarchy geometry, const CoefficientTensor& k) {
    MixedHierarchy mh;
    mh.geometry = std::move(geometry);
    const int levels = mh.geometry.levels();
    mh.prolongations.reserve(levels - 1);
    for (int l = 0; l + 1 < levels; ++l) mh.prolongations.push_back(build_prolongation(mh.geometry, l));

    mh.levels.resize(levels);
    for (int l = levels - 1; l >= 0; --l) {
        const TriangleMesh& mesh = mh.geometry.meshes[l];
        MixedLevel& lvl = mh.levels[l];
        lvl.M = (l == levels - 1)
                    ? assemble_mass(mesh, k)
                    : detail::symmetrized(
                          galerkin_product(mh.prolongations[l].matrix, mh.levels[l + 1].M));
        lvl.B = assemble_div(mesh);
        lvl.edge_fixed.assign(mesh.num_edges(), 0);
        for (int e = 0; e < mesh.num_edges(); ++e) lvl.edge_fixed[e] = mesh.boundary_edge_flags[e];
        lvl.patches = vertex_patches(mesh, l);
        lvl.patch_mass.reserve(lvl.patches.size());
        lvl.patch_kernel_energy.reserve(lvl.patches.size());
        for (const auto& patch : lvl.patches) {
            lvl.patch_mass.push_back(local_mass(lvl.M, patch.edge_ids));
            const auto& mloc = lvl.patch_mass.back();
            const int n = static_cast<int>(patch.edge_ids.size());
            double energy = 0.0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    energy += patch.kernel_vector[i] * mloc(i, j) * patch.kernel_vector[j];
            if (!(energy > 0.0))
                throw std::runtime_error("build_mixed_hierarchy: kernel energy not positive");
            lvl.patch_kernel_energy.push_back(energy);
        }
        for (int e = 0; e < mesh.num_edges(); ++e)
            if (!lvl.edge_fixed[e]) lvl.free_edges.push_back(e);
    }
    mh.levels[0].coarse_matrix =
        std::make_shared<const DenseMatrix>(detail::coarse_saddle_matrix(mh.levels[0]));
    mh.levels[0].coarse_lu = std::make_shared<const DenseLU>(*mh.levels[0].coarse_matrix);
    return mh;
}

/// Exact solve of the one-dimensional local problem: the constrained
/// minimizer over the patch kernel direction c is t*c with
/// t = (c, r) / (c, M c).
inline double local_kernel_solve(const PatchIndexSet& patch, const SparseMatrix& m,
                                 const std::vector<double>& residual_loc) {
    const int n = static_cast<int>(patch.edge_ids.size());
    const DenseMatrix mloc = local_mass(m, patch.edge_ids);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < n; ++i) {
        num += patch.kernel_vector[i] * residual_loc[i];
        for (int j = 0; j < n; ++j)
            den += patch.kernel_vector[i] * mloc(i, j) * patch.kernel_vector[j];
    }
    if (!(den > 0.0)) throw std::runtime_error("local_kernel_solve: c^T M c <= 0");
    return num / den;
}

/// Exact local saddle solve on a vertex patch.  The local pressure space
/// drops its last degree of freedom; the remaining system is nonsingular
/// and the dropped divergence row is implied.
inline std::pair<std::vector<double>, std::vector<double>> local_dense_saddle_solve(
    const PatchIndexSet& patch, const SparseMatrix& m, const SparseMatrix& b,
    const std::vector<double>& residual_loc) {
    const int n = static_cast<int>(patch.edge_ids.size());
    const int mt = static_cast<int>(patch.triangle_ids.size());
    const int dim = n + mt - 1;
    DenseMatrix a(dim, dim);
    const DenseMatrix mloc = local_mass(m, patch.edge_ids);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = mloc(i, j);
    for (int t = 0; t < mt - 1; ++t)
        for (int j = 0; j < n; ++j) {
            const double v = b.coeff(patch.triangle_ids[t], patch.edge_ids[j]);
            a(n + t, j) = v;
            a(j, n + t) = v;
        }
    std::vector<double> rhs(dim, 0.0);
    for (int i = 0; i < n; ++i) rhs[i] = residual_loc[i];
    const auto sol = dense_solve(std::move(a), std::move(rhs));
    std::vector<double> e(sol.begin(), sol.begin() + n);
    std::vector<double> p(mt, 0.0);
    for (int t = 0; t < mt - 1; ++t) p[t] = sol[n + t];
    return {std::move(e), std::move(p)};
}

/// Core of the inexact local solve on explicit dense data: solve the
/// D-saddle system [D B^T; B 0][s;p] = [r;0] for the direction s, then
/// line-search e = alpha s with alpha = (r,s)/(Ms,s).  The constraint
/// B e = 0 and the first-order condition (Me - r, e) = 0 both survive.
/// b_pinned holds the constraint rows with one pressure already dropped.
inline std::vector<double> inexact_local_correction(const DenseMatrix& mloc,
                                                    const DenseMatrix& d,
                                                    const DenseMatrix& b_pinned,
                                                    const std::vector<double>& residual_loc) {
    const int n = mloc.rows;
    const int mc = b_pinned.rows;
    const int dim = n + mc;
    DenseMatrix a(dim, dim);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = d(i, j);
    for (int t = 0; t < mc; ++t)
        for (int j = 0; j < n; ++j) {
            a(n + t, j) = b_pinned(t, j);
            a(j, n + t) = b_pinned(t, j);
        }
    std::vector<double> rhs(dim, 0.0);
    for (int i = 0; i < n; ++i) rhs[i] = residual_loc[i];
    const auto sol = dense_solve(std::move(a), std::move(rhs));
    std::vector<double> s(sol.begin(), sol.begin() + n);

    double rs = 0.0, sms = 0.0;
    for (int i = 0; i < n; ++i) {
        rs += residual_loc[i] * s[i];
        for (int j = 0; j < n; ++j) sms += s[i] * mloc(i, j) * s[j];
    }
    if (sms == 0.0) return std::vector<double>(n, 0.0);  // zero direction
    if (!(sms > 0.0)) throw std::runtime_error("inexact_local_correction: (Ms,s) <= 0");
    const double alpha = rs / sms;
    for (double& v : s) v *= alpha;
    return s;
}

/// Inexact solve on a vertex patch with an SPD diagonal preconditioner
/// (by default the diagonal of the local mass matrix).
inline std::vector<double> local_inexact_solve(const PatchIndexSet& patch, const SparseMatrix& m,
                                               const SparseMatrix& b,
                                               const std::vector<double>& residual_loc,
                                               const std::vector<double>& d_diag) {
    const int n = static_cast<int>(patch.edge_ids.size());
    const int mt = static_cast<int>(patch.triangle_ids.size());
    const DenseMatrix mloc = local_mass(m, patch.edge_ids);
    DenseMatrix d(n, n);
    for (int i = 0; i < n; ++i) {
        if (!(d_diag[i] > 0.0)) throw std::invalid_argument("local_inexact_solve: D not SPD");
        d(i, i) = d_diag[i];
    }
    DenseMatrix b_pinned(mt - 1, n);
    for (int t = 0; t < mt - 1; ++t)
        for (int j = 0; j < n; ++j)
            b_pinned(t, j) = b.coeff(patch.triangle_ids[t], patch.edge_ids[j]);
    return inexact_local_correction(mloc, d, b_pinned, residual_loc);
}

namespace detail {

inline void zero_fixed(const MixedLevel& level, std::vector<double>& v) {
    for (std::size_t e = 0; e < v.size(); ++e)
        if (level.edge_fixed[e]) v[e] = 0.0;
}

inline double level_energy(const MixedLevel& level, const std::vector<double>& z,
                           const std::vector<double>& rhs) {
    const auto mz = spmv(level.M, z);
    double quad = 0.0, lin = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        quad += z[i] * mz[i];
        lin += rhs[i] * z[i];
    }
    return 0.5 * quad - lin;
}

}  // namespace detail

/// One multiplicative sweep over the level's vertex patches.  Each patch
/// sees the residual left by its predecessors; updates preserve the
/// divergence constraint exactly.
inline void smoother_sweep(const MixedLevel& level, std::vector<double>& flux,
                           const std::vector<double>& rhs, bool ascending, SmootherKind kind,
                           SweepEnergyCollector* collector = nullptr) {
    const bool sample = collector && collector->active();
    double e_before = 0.0;
    if (sample) e_before = detail::level_energy(level, flux, rhs);

    double sum_sq = 0.0;
    const int np = static_cast<int>(level.patches.size());
    std::vector<double> r_loc, e_loc;
    for (int idx = 0; idx < np; ++idx) {
        const int pi = ascending ? idx : np - 1 - idx;
        const auto& patch = level.patches[pi];
        const int n = static_cast<int>(patch.edge_ids.size());
        r_loc.resize(n);
        for (int i = 0; i < n; ++i) {
            const int e = patch.edge_ids[i];
            r_loc[i] = rhs[e] - level.M.row_dot(e, flux);
        }
        switch (kind) {
            case SmootherKind::ExactKernel: {
                double num = 0.0;
                for (int i = 0; i < n; ++i) num += patch.kernel_vector[i] * r_loc[i];
                const double t = num / level.patch_kernel_energy[pi];
                for (int i = 0; i < n; ++i)
                    flux[patch.edge_ids[i]] += t * patch.kernel_vector[i];
                sum_sq += t * t * level.patch_kernel_energy[pi];
                break;
            }
            case SmootherKind::ExactDense: {
                auto [e, p] = local_dense_saddle_solve(patch, level.M, level.B, r_loc);
                const auto& mloc = level.patch_mass[pi];
                for (int i = 0; i < n; ++i) flux[patch.edge_ids[i]] += e[i];
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) sum_sq += e[i] * mloc(i, j) * e[j];
                break;
            }
            case SmootherKind::InexactDiagonal: {
                const auto& mloc = level.patch_mass[pi];
                std::vector<double> d(n);
                for (int i = 0; i < n; ++i) d[i] = mloc(i, i);
                const auto e = local_inexact_solve(patch, level.M, level.B, r_loc, d);
                for (int i = 0; i < n; ++i) flux[patch.edge_ids[i]] += e[i];
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) sum_sq += e[i] * mloc(i, j) * e[j];
                break;
            }
        }
    }

    if (sample) {
        const double e_after = detail::level_energy(level, flux, rhs);
        collector->samples.push_back({e_before - e_after, 0.5 * sum_sq});
    }
}

namespace detail {

/// Exact coarsest solve: returns the divergence-free correction for the
/// given velocity residual (free components only, fixed edges zero).
inline std::vector<double> coarse_exact_solve(const MixedLevel& level,
                                              const std::vector<double>& rhs) {
    const int nf = static_cast<int>(level.free_edges.size());
    const int mt = level.B.rows;
    std::vector<double> full_rhs(nf + mt - 1, 0.0);
    for (int i = 0; i < nf; ++i) full_rhs[i] = rhs[level.free_edges[i]];
    const auto sol = level.coarse_solve(full_rhs);
    std::vector<double> z(level.edge_fixed.size(), 0.0);
    for (int i = 0; i < nf; ++i) z[level.free_edges[i]] = sol[i];
    return z;
}

}  // namespace detail

/// One V-cycle on the correction equation M z = rhs over divergence-free
/// fields: pre-smooth ascending, restrict the residual, recurse,
/// prolongate, post-smooth descending.  The coarsest level is solved
/// exactly.
inline std::vector<double> vcycle(const MixedHierarchy& mh, int level,
                                  const std::vector<double>& rhs, const SolverConfig& cfg,
                                  SweepEnergyCollector* collector = nullptr) {
    const MixedLevel& lvl = mh.levels[level];
    if (level == 0) return detail::coarse_exact_solve(lvl, rhs);

    std::vector<double> z(lvl.edge_fixed.size(), 0.0);
    for (int s = 0; s < cfg.pre_sweeps; ++s)
        smoother_sweep(lvl, z, rhs, /*ascending=*/true, cfg.kind, collector);

    std::vector<double> residual = spmv(lvl.M, z);
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = rhs[i] - residual[i];
    auto coarse_rhs = restrict_residual(mh.prolongations[level - 1], residual);
    detail::zero_fixed(mh.levels[level - 1], coarse_rhs);

    const auto coarse_z = vcycle(mh, level - 1, coarse_rhs, cfg, collector);
    const auto fine_z = spmv(mh.prolongations[level - 1].matrix, coarse_z);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += fine_z[i];

    for (int s = 0; s < cfg.post_sweeps; ++s)
        smoother_sweep(lvl, z, rhs, /*ascending=*/false, cfg.kind, collector);
    return z;
}

/// Compatible fluxes on every level: B_k u_k = f_k with f_k aggregated
/// from the finest right-hand side, and boundary values aggregated from
/// the finest prescribed fluxes.  The coarsest flux comes from a direct
/// solve; each finer one from element-local mixed solves on the four
/// children of each coarse triangle.
inline std::vector<std::vector<double>> compatible_flux_levels(
    const MixedHierarchy& mh, const std::vector<double>& rhs_p_finest,
    const std::vector<double>& boundary_finest) {
    const int levels = mh.num_levels();
    const int finest = levels - 1;

    // Aggregate element loads and boundary fluxes from fine to coarse.
    std::vector<std::vector<double>> rp(levels);
    rp[finest] = rhs_p_finest;
    std::vector<std::vector<double>> bv(levels);
    bv[finest] = boundary_finest;
    for (int k = finest - 1; k >= 0; --k) {
        const auto& map = mh.geometry.refinements[k];
        const TriangleMesh& coarse = mh.geometry.meshes[k];
        rp[k].assign(coarse.num_triangles(), 0.0);
        for (int t = 0; t < coarse.num_triangles(); ++t) {
            double s = 0.0;
            for (int c : map.child_triangles[t]) s += rp[k + 1][c];
            rp[k][t] = s;
        }
        bv[k].assign(coarse.num_edges(), 0.0);
        for (int e = 0; e < coarse.num_edges(); ++e)
            if (coarse.boundary_edge_flags[e])
                bv[k][e] = bv[k + 1][map.child_edges[e][0]] + bv[k + 1][map.child_edges[e][1]];
    }

    // Compatibility: with B = -div, the row sums telescope to the boundary,
    // so sum_T (B u)_T = -outflow and the data must satisfy
    // sum_T f_T |T| + outflow(g) = 0.
    {
        const double total_f = std::accumulate(rp[0].begin(), rp[0].end(), 0.0);
        double outflow = 0.0;
        const TriangleMesh& coarse = mh.geometry.meshes[0];
        for (int t = 0; t < coarse.num_triangles(); ++t)
            for (int s = 0; s < 3; ++s) {
                const int e = coarse.edge_of_triangle[t][s];
                if (coarse.boundary_edge_flags[e])
                    outflow += coarse.edge_sign[t][s] * bv[0][e];
            }
        double scale = std::abs(total_f);
        for (double v : rhs_p_finest) scale = std::max(scale, std::abs(v));
        if (std::abs(total_f + outflow) > 1e-10 * std::max(scale, 1.0))
            throw std::invalid_argument("compatible_flux: incompatible data (f, g)");
    }

    std::vector<std::vector<double>> u(levels);

    // Coarsest: direct saddle solve with pinned boundary values.
    {
        const MixedLevel& lvl = mh.levels[0];
        const int nf = static_cast<int>(lvl.free_edges.size());
        const int mt = lvl.B.rows;
        u[0].assign(lvl.edge_fixed.size(), 0.0);
        for (std::size_t e = 0; e < lvl.edge_fixed.size(); ++e)
            if (lvl.edge_fixed[e]) u[0][e] = bv[0][e];
        std::vector<double> rhs(nf + mt - 1, 0.0);
        for (int i = 0; i < nf; ++i)
            rhs[i] = -lvl.M.row_dot(lvl.free_edges[i], u[0]);
        const auto bu = spmv(lvl.B, u[0]);
        for (int t = 0; t < mt - 1; ++t) rhs[nf + t] = rp[0][t] - bu[t];
        const auto sol = lvl.coarse_solve(rhs);
        for (int i = 0; i < nf; ++i) u[0][lvl.free_edges[i]] = sol[i];
    }

    // Refine level by level with element-local solves.
    for (int k = 0; k + 1 < levels; ++k) {
        const TriangleMesh& coarse = mh.geometry.meshes[k];
        const TriangleMesh& fine = mh.geometry.meshes[k + 1];
        const auto& map = mh.geometry.refinements[k];
        const MixedLevel& flvl = mh.levels[k + 1];
        u[k + 1].assign(fine.num_edges(), 0.0);

        // Child edges of coarse edges inherit half the parent flux;
        // boundary children take their prescribed values directly.
        for (int e = 0; e < coarse.num_edges(); ++e) {
            for (int c : map.child_edges[e]) {
                u[k + 1][c] = fine.boundary_edge_flags[c] ? bv[k + 1][c] : 0.5 * u[k][e];
            }
        }

        for (int t = 0; t < coarse.num_triangles(); ++t) {
            const auto& interior = map.interior_edges[t];
            // Velocity rows for the three interior edges; their mass rows
            // only touch edges of this coarse triangle's children.
            DenseMatrix a(6, 6);
            std::vector<double> rhs(6, 0.0);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) a(i, j) = flvl.M.coeff(interior[i], interior[j]);
                double r = 0.0;
                const int row = interior[i];
                for (int kk = flvl.M.row_ptr[row]; kk < flvl.M.row_ptr[row + 1]; ++kk) {
                    const int col = flvl.M.col_idx[kk];
                    if (col == interior[0] || col == interior[1] || col == interior[2]) continue;
                    r -= flvl.M.values[kk] * u[k + 1][col];
                }
                rhs[i] = r;
            }
            // Constraint rows: the three corner children (the central one
            // is implied by the element balance).
            for (int c = 0; c < 3; ++c) {
                const int tf = map.child_triangles[t][c];
                double r = rp[k + 1][tf];
                for (int kk = flvl.B.row_ptr[tf]; kk < flvl.B.row_ptr[tf + 1]; ++kk) {
                    const int col = flvl.B.col_idx[kk];
                    if (col == interior[0] || col == interior[1] || col == interior[2]) {
                        const int idx = (col == interior[0]) ? 0 : (col == interior[1]) ? 1 : 2;
                        a(3 + c, idx) = flvl.B.values[kk];
                        a(idx, 3 + c) = flvl.B.values[kk];
                    } else {
                        r -= flvl.B.values[kk] * u[k + 1][col];
                    }
                }
                rhs[3 + c] = r;
            }
            const auto sol = dense_solve(std::move(a), std::move(rhs));
            for (int i = 0; i < 3; ++i) u[k + 1][interior[i]] = sol[i];
        }
    }
    return u;
}

inline FluxField compatible_flux(const MixedHierarchy& mh, const std::vector<double>& rhs_p_finest,
                                 const std::vector<double>& boundary_finest) {
    return {compatible_flux_levels(mh, rhs_p_finest, boundary_finest).back()};
}

struct SolveResult {
    FluxField flux;
    PressureField pressure;
    SolveStats stats;
};

namespace detail {

inline double constraint_residual_inf(const MixedLevel& level, const std::vector<double>& u,
                                      const std::vector<double>& rhs_p) {
    const auto bu = spmv(level.B, u);
    double r = 0.0;
    for (std::size_t t = 0; t < bu.size(); ++t) r = std::max(r, std::abs(bu[t] - rhs_p[t]));
    return r;
}

/// Pressure recovery from the converged flux: solve the consistent normal
/// equations (B_f B_f^T) p = B_f (rhs_u - M u) and shift to zero mean.
inline PressureField recover_pressure(const MixedHierarchy& mh, const std::vector<double>& u,
                                      const std::vector<double>& rhs_u) {
    const MixedLevel& lvl = mh.finest();
    const TriangleMesh& mesh = mh.finest_mesh();
    std::vector<double> w = spmv(lvl.M, u);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rhs_u[i] - w[i];
    zero_fixed(lvl, w);
    const auto rhs = spmv(lvl.B, w);

    // B_f B_f^T assembled edge by edge over free columns.
    std::vector<std::tuple<int, int, double>> trips;
    for (int e = 0; e < mesh.num_edges(); ++e) {
        if (lvl.edge_fixed[e]) continue;
        int ts[2] = {-1, -1};
        double vs[2] = {0.0, 0.0};
        int cnt = 0;
        for (int t = 0; t < lvl.B.rows && cnt < 2; ++t) {
            const double v = lvl.B.coeff(t, e);
            if (v != 0.0) {
                ts[cnt] = t;
                vs[cnt] = v;
                ++cnt;
            }
        }
        for (int i = 0; i < cnt; ++i)
            for (int j = 0; j < cnt; ++j) trips.emplace_back(ts[i], ts[j], vs[i] * vs[j]);
    }
    const auto bbt = SparseMatrix::from_triplets(lvl.B.rows, lvl.B.rows, std::move(trips));
    auto p = cg_mean_free(bbt, rhs);

    // Normalize to zero integral (area-weighted mean).
    double integral = 0.0, total_area = 0.0;
    for (int t = 0; t < mesh.num_triangles(); ++t) {
        integral += p[t] * mesh.area(t);
        total_area += mesh.area(t);
    }
    const double shift = integral / total_area;
    for (double& v : p) v -= shift;
    return {std::move(p)};
}

}  // namespace detail

/// Outer stationary iteration: start from a compatible flux, apply one
/// V-cycle per step to the velocity residual, and stop when the
/// energy-norm error estimate sqrt((Br, r) / ||u||_M^2) drops below the
/// tolerance.  The denominator is the discrete solution energy, the
/// magnitude of the load-pressure pairing (f, p) at convergence.
inline SolveResult solve(const MixedHierarchy& mh,
                         const std::function<double(double, double)>& f,
                         const std::function<double(double, double)>& g,
                         const SolverConfig& cfg) {
    cfg.validate();
    const MixedLevel& lvl = mh.finest();
    const TriangleMesh& mesh = mh.finest_mesh();

    const auto rhs_p = assemble_rhs(mesh, f);
    const auto boundary = boundary_flux_values(mesh, g);
    const std::vector<double> rhs_u(mesh.num_edges(), 0.0);

    SolveResult result;
    auto u = compatible_flux(mh, rhs_p, boundary).coefficients;

    SweepEnergyCollector collector;
    SolveStats& stats = result.stats;
    stats.energy_history.push_back(detail::level_energy(lvl, u, rhs_u));
    stats.constraint_history.push_back(detail::constraint_residual_inf(lvl, u, rhs_p));

    double first_correction_energy = 0.0;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        std::vector<double> r = spmv(lvl.M, u);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = rhs_u[i] - r[i];
        detail::zero_fixed(lvl, r);

        const auto delta = vcycle(mh, mh.num_levels() - 1, r, cfg, &collector);
        const double br_r = std::inner_product(delta.begin(), delta.end(), r.begin(), 0.0);
        if (it == 1) {
            first_correction_energy = br_r;
            if (!(br_r > 0.0)) {  // nothing to correct: u_* already solves the problem
                stats.converged = true;
                break;
            }
        }

        // Solution-energy normalizer: |(f, p)| = ||u||_M^2 at the solution,
        // approximated by the current iterate's energy.
        const auto mu = spmv(lvl.M, u);
        double den = std::inner_product(u.begin(), u.end(), mu.begin(), 0.0);
        if (den < 1e-300) den = first_correction_energy;

        for (std::size_t i = 0; i < u.size(); ++i) u[i] += delta[i];

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
    stats.sweep_samples = std::move(collector.samples);
    result.flux.coefficients = std::move(u);
    result.pressure = detail::recover_pressure(mh, result.flux.coefficients, rhs_u);
    return result;
}

/// Direct dense solve of the full saddle system (test oracle and
/// reference for contraction measurements).
inline std::pair<FluxField, PressureField> direct_solve_dense(
    const TriangleMesh& mesh, const CoefficientTensor& k,
    const std::function<double(double, double)>& f,
    const std::function<double(double, double)>& g) {
    const auto m = assemble_mass(mesh, k);
    const auto b = assemble_div(mesh);
    const auto rhs_p = assemble_rhs(mesh, f);
    const auto bvals = boundary_flux_values(mesh, g);

    std::vector<int> free_edges;
    for (int e = 0; e < mesh.num_edges(); ++e)
        if (!mesh.boundary_edge_flags[e]) free_edges.push_back(e);
    const int nf = static_cast<int>(free_edges.size());
    const int mt = mesh.num_triangles();
    const int dim = nf + mt - 1;

    std::vector<double> u(mesh.num_edges(), 0.0);
    for (int e = 0; e < mesh.num_edges(); ++e)
        if (mesh.boundary_edge_flags[e]) u[e] = bvals[e];

    DenseMatrix a(dim, dim);
    for (int i = 0; i < nf; ++i)
        for (int j = 0; j < nf; ++j) a(i, j) = m.coeff(free_edges[i], free_edges[j]);
    for (int t = 0; t < mt - 1; ++t)
        for (int j = 0; j < nf; ++j) {
            const double v = b.coeff(t, free_edges[j]);
            a(nf + t, j) = v;
            a(j, nf + t) = v;
        }
    std::vector<double> rhs(dim, 0.0);
    for (int i = 0; i < nf; ++i) rhs[i] = -m.row_dot(free_edges[i], u);
    const auto bu = spmv(b, u);
    for (int t = 0; t < mt - 1; ++t) rhs[nf + t] = rhs_p[t] - bu[t];

    const auto sol = dense_solve(std::move(a), std::move(rhs));
    for (int i = 0; i < nf; ++i) u[free_edges[i]] = sol[i];

    std::vector<double> p(mt, 0.0);
    for (int t = 0; t < mt - 1; ++t) p[t] = sol[nf + t];
    double integral = 0.0, total_area = 0.0;
    for (int t = 0; t < mt; ++t) {
        integral += p[t] * mesh.area(t);
        total_area += mesh.area(t);
    }
    for (double& v : p) v -= integral / total_area;
    return {FluxField{std::move(u)}, PressureField{std::move(p)}};
}

struct ContractionEstimate {
    double rho = 0.0;
    int samples = 0;  // zero means the run was degenerate (already converged)
};

/// Measured contraction factor of the V-cycle iteration on a problem with
/// a known minimizer: the supremum of (E(u^{k+1}) - E(u)) / (E(u^k) - E(u))
/// over post-burn-in iterations above the rounding floor.  The reference
/// minimizer is computed by a dense solve when the system is small and by
/// a deeply converged symmetric multigrid run otherwise.
inline ContractionEstimate measure_contraction(const MixedHierarchy& mh,
                                               const std::function<double(double, double)>& f,
                                               const std::function<double(double, double)>& g,
                                               const SolverConfig& cfg, int trials = 25,
                                               int burn_in = 2) {
    cfg.validate();
    const MixedLevel& lvl = mh.finest();
    const TriangleMesh& mesh = mh.finest_mesh();
    const auto rhs_p = assemble_rhs(mesh, f);
    const auto boundary = boundary_flux_values(mesh, g);
    const std::vector<double> rhs_u(mesh.num_edges(), 0.0);

    std::vector<double> u_ref;
    if (static_cast<int>(lvl.free_edges.size()) + lvl.B.rows <= 1600) {
        // Dense reference through the already assembled operators.
        const int nf = static_cast<int>(lvl.free_edges.size());
        const int mt = lvl.B.rows;
        DenseMatrix a(nf + mt - 1, nf + mt - 1);
        for (int i = 0; i < nf; ++i)
            for (int j = 0; j < nf; ++j) a(i, j) = lvl.M.coeff(lvl.free_edges[i], lvl.free_edges[j]);
        for (int t = 0; t < mt - 1; ++t)
            for (int j = 0; j < nf; ++j) {
                const double v = lvl.B.coeff(t, lvl.free_edges[j]);
                a(nf + t, j) = v;
                a(j, nf + t) = v;
            }
        u_ref.assign(mesh.num_edges(), 0.0);
        for (int e = 0; e < mesh.num_edges(); ++e)
            if (lvl.edge_fixed[e]) u_ref[e] = boundary[e];
        std::vector<double> rhs(nf + mt - 1, 0.0);
        for (int i = 0; i < nf; ++i) rhs[i] = -lvl.M.row_dot(lvl.free_edges[i], u_ref);
        const auto bu = spmv(lvl.B, u_ref);
        for (int t = 0; t < mt - 1; ++t) rhs[nf + t] = rhs_p[t] - bu[t];
        const auto sol = dense_solve(std::move(a), std::move(rhs));
        for (int i = 0; i < nf; ++i) u_ref[lvl.free_edges[i]] = sol[i];
    } else {
        SolverConfig deep = cfg;
        deep.kind = SmootherKind::ExactKernel;
        deep.pre_sweeps = 2;
        deep.post_sweeps = 2;
        deep.tolerance = 1e-13;
        deep.max_iterations = 200;
        u_ref = solve(mh, f, g, deep).flux.coefficients;
    }
    const double e_min = detail::level_energy(lvl, u_ref, rhs_u);

    auto u = compatible_flux(mh, rhs_p, boundary).coefficients;
    std::vector<double> d;
    d.push_back(detail::level_energy(lvl, u, rhs_u) - e_min);
    for (int it = 0; it < trials; ++it) {
        std::vector<double> r = spmv(lvl.M, u);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = rhs_u[i] - r[i];
        detail::zero_fixed(lvl, r);
        const auto delta = vcycle(mh, mh.num_levels() - 1, r, cfg);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += delta[i];
        d.push_back(detail::level_energy(lvl, u, rhs_u) - e_min);
    }

    double scale = std::abs(e_min);
    for (double v : d) scale = std::max(scale, std::abs(v));
    const double floor = std::max(1e-12 * scale, 1e-280);

    ContractionEstimate est;
    for (std::size_t k = std::max(burn_in, 0); k + 1 < d.size(); ++k) {
        if (d[k] <= floor || d[k + 1] <= 0.0) continue;
        est.rho = std::max(est.rho, d[k + 1] / d[k]);
        ++est.samples;
    }
    return est;
}

}  // namespace saddlemg
