#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "saddlemg/saddle_mg.hpp"

namespace saddlemg {

/// E(v) = 1/2 v^T M v - rhs^T v.
inline double energy(const SparseMatrix& m, const std::vector<double>& rhs,
                     const std::vector<double>& v) {
    const auto mv = spmv(m, v);
    double quad = 0.0, lin = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        quad += v[i] * mv[i];
        lin += rhs[i] * v[i];
    }
    return 0.5 * quad - lin;
}

/// The multilevel collection of one-dimensional kernel subspaces, each
/// represented by its finest-level flux vector, listed in the order the
/// downward half-sweep of the V-cycle visits them (finest level first,
/// patches by ascending vertex index).  The finest-level block doubles as
/// a basis of the global kernel.
struct KernelBasis {
    std::vector<std::vector<double>> columns;
    std::vector<int> level_of;
    int kernel_dim = 0;  // size of the finest block (= dim of the kernel)

    int size() const { return static_cast<int>(columns.size()); }
};

inline KernelBasis build_kernel_basis(const MixedHierarchy& mh) {
    KernelBasis basis;
    const int levels = mh.num_levels();
    const int n_finest = mh.finest_mesh().num_edges();
    for (int k = levels - 1; k >= 0; --k) {
        for (const auto& patch : mh.levels[k].patches) {
            std::vector<double> c(mh.geometry.meshes[k].num_edges(), 0.0);
            for (std::size_t i = 0; i < patch.edge_ids.size(); ++i)
                c[patch.edge_ids[i]] = patch.kernel_vector[i];
            for (int l = k; l + 1 < levels; ++l) c = spmv(mh.prolongations[l].matrix, c);
            if (static_cast<int>(c.size()) != n_finest)
                throw std::runtime_error("build_kernel_basis: prolongation chain broken");
            basis.columns.push_back(std::move(c));
            basis.level_of.push_back(k);
            if (k == levels - 1) ++basis.kernel_dim;
        }
    }
    return basis;
}

namespace detail {

inline double dot_vec(const std::vector<double>& a, const std::vector<double>& b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

/// M-Gram matrix of the basis columns.
inline DenseMatrix gram_matrix(const KernelBasis& basis, const SparseMatrix& m) {
    const int n = basis.size();
    DenseMatrix g(n, n);
    std::vector<std::vector<double>> mc(n);
    for (int i = 0; i < n; ++i) mc[i] = spmv(m, basis.columns[i]);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            const double v = dot_vec(basis.columns[i], mc[j]);
            g(i, j) = v;
            g(j, i) = v;
        }
    return g;
}

/// Pseudo-inverse action helpers from a symmetric eigendecomposition.
struct SymPseudo {
    DenseMatrix vectors;
    std::vector<double> values;
    double cutoff = 0.0;

    explicit SymPseudo(const DenseMatrix& a, double rel_cutoff = 1e-10) {
        values = dense_sym_eig(a, &vectors);
        double vmax = 0.0;
        for (double v : values) vmax = std::max(vmax, std::abs(v));
        cutoff = rel_cutoff * std::max(vmax, 1e-300);
    }

    int rank() const {
        int r = 0;
        for (double v : values)
            if (v > cutoff) ++r;
        return r;
    }

    std::vector<double> apply_pinv(const std::vector<double>& x) const {
        const int n = static_cast<int>(values.size());
        std::vector<double> y(n, 0.0);
        for (int k = 0; k < n; ++k) {
            if (values[k] <= cutoff) continue;
            double proj = 0.0;
            for (int i = 0; i < n; ++i) proj += vectors(i, k) * x[i];
            proj /= values[k];
            for (int i = 0; i < n; ++i) y[i] += proj * vectors(i, k);
        }
        return y;
    }

    /// Columns spanning the (numerical) null space.
    DenseMatrix null_basis() const {
        const int n = static_cast<int>(values.size());
        int nz = 0;
        for (double v : values)
            if (v <= cutoff) ++nz;
        DenseMatrix z(n, nz);
        int col = 0;
        for (int k = 0; k < n; ++k) {
            if (values[k] > cutoff) continue;
            for (int i = 0; i < n; ++i) z(i, col) = vectors(i, k);
            ++col;
        }
        return z;
    }
};

/// Kernel-coordinate matrices: for v = Q y (Q = finest block columns),
/// returns M_y = Q^T M Q.
inline DenseMatrix kernel_mass(const KernelBasis& basis, const SparseMatrix& m) {
    const int dim = basis.kernel_dim;
    DenseMatrix my(dim, dim);
    for (int r = 0; r < dim; ++r) {
        const auto mq = spmv(m, basis.columns[r]);
        for (int s = 0; s < dim; ++s) my(r, s) = dot_vec(basis.columns[s], mq);
    }
    return my;
}

}  // namespace detail

/// Sharp stable-decomposition constant for the ordered one-dimensional
/// decomposition: the minimal sum of squared M-norms over decompositions
/// v = sum x_i c_i equals v^T T^+ v with T = C W^{-1} C^T
/// (W = diag of the Gram matrix); C_A is the largest generalized
/// eigenvalue of that quadratic form against the M-form on the kernel.
inline double estimate_CA(const KernelBasis& basis, const SparseMatrix& m) {
    const int n = basis.size();
    const int dim = basis.kernel_dim;
    const auto g = detail::gram_matrix(basis, m);

    // Cross products C^T Q (plain Euclidean) and Q^T Q.
    DenseMatrix ctq(n, dim), qtq(dim, dim);
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < dim; ++r)
            ctq(i, r) = detail::dot_vec(basis.columns[i], basis.columns[r]);
    for (int r = 0; r < dim; ++r)
        for (int s = 0; s < dim; ++s)
            qtq(r, s) = detail::dot_vec(basis.columns[r], basis.columns[s]);

    // Q^T T Q = (C^T Q)^T W^{-1} (C^T Q).
    DenseMatrix qtq_t(dim, dim);
    for (int r = 0; r < dim; ++r)
        for (int s = 0; s < dim; ++s) {
            double v = 0.0;
            for (int i = 0; i < n; ++i) v += ctq(i, r) * ctq(i, s) / g(i, i);
            qtq_t(r, s) = v;
        }

    // S_y = (Q^T Q) (Q^T T Q)^{-1} (Q^T Q).
    DenseMatrix sy(dim, dim);
    for (int s = 0; s < dim; ++s) {
        std::vector<double> col(dim);
        for (int r = 0; r < dim; ++r) col[r] = qtq(r, s);
        const auto x = dense_solve(qtq_t, col);
        for (int r = 0; r < dim; ++r) sy(r, s) = 0.0;
        for (int r = 0; r < dim; ++r)
            for (int k = 0; k < dim; ++k) sy(r, s) += qtq(r, k) * x[k];
    }
    for (int r = 0; r < dim; ++r)  // symmetrize rounding noise
        for (int s = r + 1; s < dim; ++s) {
            const double v = 0.5 * (sy(r, s) + sy(s, r));
            sy(r, s) = sy(s, r) = v;
        }

    const auto my = detail::kernel_mass(basis, m);
    const auto ev = generalized_sym_eig(sy, my);
    return ev.back();
}

/// Sharp strengthened-Cauchy-Schwarz constant for rank-one-per-subspace
/// fields: the squared spectral norm of the strictly upper triangle of
/// the normalized Gram matrix.
inline double estimate_CS(const KernelBasis& basis, const SparseMatrix& m) {
    const int n = basis.size();
    const auto g = detail::gram_matrix(basis, m);
    DenseMatrix u(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            u(i, j) = g(i, j) / std::sqrt(g(i, i) * g(j, j));
    DenseMatrix utu(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double v = 0.0;
            for (int k = 0; k < n; ++k) v += u(k, i) * u(k, j);
            utu(i, j) = v;
        }
    const auto ev = dense_sym_eig(utu);
    return ev.back();
}

/// The XZ constant: c0 = sup_{||v||_A = 1} inf over decompositions of
/// sum_i ||P_i sum_{j>i} v_j||_A^2.  With one-dimensional subspaces the
/// objective is x^T (U~^T D^{-1} U~) x for the strictly upper Gram part;
/// the constrained minimum is assembled by KKT elimination through a
/// null-space parametrization.
inline double compute_c0_xz(const KernelBasis& basis, const SparseMatrix& m) {
    const int n = basis.size();
    const int dim = basis.kernel_dim;
    const auto g = detail::gram_matrix(basis, m);

    // Objective matrix Q_obj = U~^T D^{-1} U~.
    DenseMatrix qobj(n, n);
    for (int i = 0; i < n; ++i) {
        for (int a = i + 1; a < n; ++a)
            for (int b = i + 1; b < n; ++b) qobj(a, b) += g(i, a) * g(i, b) / g(i, i);
    }

    // Constraint C x = v in kernel coordinates through the Euclidean
    // normal matrix C^T C and cross products with the kernel basis.
    DenseMatrix ctc(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            const double v = detail::dot_vec(basis.columns[i], basis.columns[j]);
            ctc(i, j) = v;
            ctc(j, i) = v;
        }
    const detail::SymPseudo ctc_eig(ctc);
    const DenseMatrix z = ctc_eig.null_basis();
    const int nz = z.cols;

    // x_p(v) = C^+ v = (C^T C)^+ C^T v; for v = q_r this is
    // (C^T C)^+ (C^T Q e_r).
    DenseMatrix ctq(n, dim);
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < dim; ++r)
            ctq(i, r) = detail::dot_vec(basis.columns[i], basis.columns[r]);

    // Reduced Hessian Z^T Qobj Z (may be singular).
    DenseMatrix zqz(nz, nz);
    std::vector<std::vector<double>> qz(nz, std::vector<double>(n, 0.0));
    for (int c = 0; c < nz; ++c) {
        std::vector<double> zc(n);
        for (int i = 0; i < n; ++i) zc[i] = z(i, c);
        qz[c] = dense_matvec(qobj, zc);
    }
    for (int a = 0; a < nz; ++a)
        for (int b = 0; b < nz; ++b) {
            double v = 0.0;
            for (int i = 0; i < n; ++i) v += z(i, a) * qz[b][i];
            zqz(a, b) = v;
        }
    for (int a = 0; a < nz; ++a)
        for (int b = a + 1; b < nz; ++b) {
            const double v = 0.5 * (zqz(a, b) + zqz(b, a));
            zqz(a, b) = zqz(b, a) = v;
        }

    // Minimizing decompositions x*(q_r) and the value matrix S_y.
    DenseMatrix xs(n, dim);
    for (int r = 0; r < dim; ++r) {
        std::vector<double> ctqr(n);
        for (int i = 0; i < n; ++i) ctqr[i] = ctq(i, r);
        auto xp = ctc_eig.apply_pinv(ctqr);
        if (nz > 0) {
            const auto qxp = dense_matvec(qobj, xp);
            std::vector<double> rhs(nz, 0.0);
            for (int c = 0; c < nz; ++c)
                for (int i = 0; i < n; ++i) rhs[c] -= z(i, c) * qxp[i];
            const detail::SymPseudo zqz_eig(zqz, 1e-12);
            const auto t = zqz_eig.apply_pinv(rhs);
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < nz; ++c) xp[i] += z(i, c) * t[c];
        }
        for (int i = 0; i < n; ++i) xs(i, r) = xp[i];
    }
    DenseMatrix sy(dim, dim);
    for (int r = 0; r < dim; ++r) {
        std::vector<double> xr(n);
        for (int i = 0; i < n; ++i) xr[i] = xs(i, r);
        const auto qxr = dense_matvec(qobj, xr);
        for (int s = 0; s < dim; ++s) {
            double v = 0.0;
            for (int i = 0; i < n; ++i) v += xs(i, s) * qxr[i];
            sy(r, s) = v;
        }
    }
    for (int r = 0; r < dim; ++r)
        for (int s = r + 1; s < dim; ++s) {
            const double v = 0.5 * (sy(r, s) + sy(s, r));
            sy(r, s) = sy(s, r) = v;
        }

    const auto my = detail::kernel_mass(basis, m);
    const auto ev = generalized_sym_eig(sy, my);
    return std::max(ev.back(), 0.0);
}

/// Squared A-norm of the one-sweep multiplicative error operator
/// E = (I - P_N) ... (I - P_1) over the kernel, computed densely; by the
/// XZ identity this equals 1 - 1/(1 + c0).
inline double sweep_operator_norm_sq(const KernelBasis& basis, const SparseMatrix& m) {
    const int n = basis.size();
    const int dim = basis.kernel_dim;
    std::vector<std::vector<double>> mc(n);
    std::vector<double> gii(n);
    for (int i = 0; i < n; ++i) {
        mc[i] = spmv(m, basis.columns[i]);
        gii[i] = detail::dot_vec(basis.columns[i], mc[i]);
    }
    auto apply_sweep = [&](std::vector<double> v) {
        for (int i = 0; i < n; ++i) {
            const double t = detail::dot_vec(mc[i], v) / gii[i];
            for (std::size_t e = 0; e < v.size(); ++e) v[e] -= t * basis.columns[i][e];
        }
        return v;
    };

    // E in kernel coordinates: solve (Q^T Q) y = Q^T (E q_r).
    DenseMatrix qtq(dim, dim);
    for (int r = 0; r < dim; ++r)
        for (int s = 0; s < dim; ++s)
            qtq(r, s) = detail::dot_vec(basis.columns[r], basis.columns[s]);
    const DenseLU qtq_lu{qtq};
    DenseMatrix ey(dim, dim);
    for (int r = 0; r < dim; ++r) {
        const auto eqr = apply_sweep(basis.columns[r]);
        std::vector<double> rhs(dim);
        for (int s = 0; s < dim; ++s) rhs[s] = detail::dot_vec(basis.columns[s], eqr);
        const auto y = qtq_lu.solve(rhs);
        for (int s = 0; s < dim; ++s) ey(s, r) = y[s];
    }

    // ||E||_A^2 = lambda_max(E^T M_y E, M_y).
    const auto my = detail::kernel_mass(basis, m);
    DenseMatrix me(dim, dim), eme(dim, dim);
    for (int r = 0; r < dim; ++r)
        for (int s = 0; s < dim; ++s) {
            double v = 0.0;
            for (int k = 0; k < dim; ++k) v += my(r, k) * ey(k, s);
            me(r, s) = v;
        }
    for (int r = 0; r < dim; ++r)
        for (int s = 0; s < dim; ++s) {
            double v = 0.0;
            for (int k = 0; k < dim; ++k) v += ey(k, r) * me(k, s);
            eme(r, s) = v;
        }
    for (int r = 0; r < dim; ++r)
        for (int s = r + 1; s < dim; ++s) {
            const double v = 0.5 * (eme(r, s) + eme(s, r));
            eme(r, s) = eme(s, r) = v;
        }
    const auto ev = generalized_sym_eig(eme, my);
    return std::max(ev.back(), 0.0);
}

/// Numerically validated convergence constants for one hierarchy.
struct TheoryEstimates {
    double C_A = 0.0;
    double C_S = 0.0;
    double c0 = 0.0;
    double rho_measured = 0.0;
    double bound = 0.0;     // 1 - 1/(1 + C_A C_S)
    double bound_c0 = 0.0;  // 1 - 1/(1 + c0)
    double sweep_norm_sq = 0.0;
    double xz_error = 0.0;
    double kappa_max = 0.0;
    double rho_inexact = 0.0;
    double inexact_bound = 0.0;
    bool xz_identity_pass = false;
    bool bound_chain_pass = false;
    bool inexact_pass = false;
};

/// Brute-force all constants on a small hierarchy and check the bound
/// chain rho <= 1 - 1/(1+c0) <= 1 - 1/(1 + C_A C_S) together with the XZ
/// identity and the inexact-smoother rate.
inline TheoryEstimates verify_bound(const MixedHierarchy& mh,
                                    const std::function<double(double, double)>& f,
                                    const std::function<double(double, double)>& g,
                                    double slack = 1e-8) {
    const auto basis = build_kernel_basis(mh);
    if (basis.kernel_dim > 60)
        throw std::invalid_argument("verify_bound: kernel dimension beyond the dense regime");
    const auto& m = mh.finest().M;

    TheoryEstimates est;
    est.C_A = estimate_CA(basis, m);
    est.C_S = estimate_CS(basis, m);
    est.c0 = compute_c0_xz(basis, m);
    est.bound = 1.0 - 1.0 / (1.0 + est.C_A * est.C_S);
    est.bound_c0 = 1.0 - 1.0 / (1.0 + est.c0);
    est.sweep_norm_sq = sweep_operator_norm_sq(basis, m);
    est.xz_error = std::abs(est.sweep_norm_sq - est.bound_c0);

    SolverConfig cfg;
    est.rho_measured = measure_contraction(mh, f, g, cfg).rho;
    SolverConfig inexact = cfg;
    inexact.kind = SmootherKind::InexactDiagonal;
    est.rho_inexact = measure_contraction(mh, f, g, inexact).rho;

    for (const auto& lvl : mh.levels) {
        for (std::size_t p = 0; p < lvl.patches.size(); ++p) {
            const auto& mloc = lvl.patch_mass[p];
            DenseMatrix d(mloc.rows, mloc.cols);
            for (int i = 0; i < mloc.rows; ++i) d(i, i) = mloc(i, i);
            const auto ev = generalized_sym_eig(mloc, d);
            est.kappa_max = std::max(est.kappa_max, ev.back() / ev.front());
        }
    }
    const double inexact_term = std::sqrt(est.C_S) + 0.5 * (est.kappa_max - 1.0);
    est.inexact_bound = 1.0 - 1.0 / (1.0 + est.C_A * inexact_term * inexact_term);

    est.xz_identity_pass = est.xz_error <= slack;
    est.bound_chain_pass = est.rho_measured <= est.bound_c0 + slack &&
                           est.bound_c0 <= est.bound + slack &&
                           est.c0 <= est.C_A * est.C_S + slack;
    est.inexact_pass = est.rho_inexact <= est.inexact_bound + slack;
    return est;
}

}  // namespace saddlemg
