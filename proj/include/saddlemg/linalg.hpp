#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace saddlemg {

/// Compressed-sparse-row matrix with sorted column indices per row.
struct SparseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<int> row_ptr;
    std::vector<int> col_idx;
    std::vector<double> values;

    static SparseMatrix from_triplets(int rows, int cols,
                                      std::vector<std::tuple<int, int, double>> triplets) {
        SparseMatrix m;
        m.rows = rows;
        m.cols = cols;
        // Stable sort keeps duplicate accumulation in insertion order, so
        // symmetric triplet streams assemble to a bitwise-symmetric matrix.
        std::stable_sort(triplets.begin(), triplets.end(),
                         [](const auto& a, const auto& b) {
                             return std::tie(std::get<0>(a), std::get<1>(a)) <
                                    std::tie(std::get<0>(b), std::get<1>(b));
                         });
        m.row_ptr.assign(rows + 1, 0);
        for (std::size_t k = 0; k < triplets.size();) {
            const int i = std::get<0>(triplets[k]);
            const int j = std::get<1>(triplets[k]);
            if (i < 0 || i >= rows || j < 0 || j >= cols)
                throw std::invalid_argument("SparseMatrix: triplet out of range");
            double v = 0.0;
            while (k < triplets.size() && std::get<0>(triplets[k]) == i &&
                   std::get<1>(triplets[k]) == j) {
                v += std::get<2>(triplets[k]);
                ++k;
            }
            m.col_idx.push_back(j);
            m.values.push_back(v);
            ++m.row_ptr[i + 1];
        }
        for (int i = 0; i < rows; ++i) m.row_ptr[i + 1] += m.row_ptr[i];
        return m;
    }

    std::span<const int> row_cols(int i) const {
        return {col_idx.data() + row_ptr[i],
                static_cast<std::size_t>(row_ptr[i + 1] - row_ptr[i])};
    }
    std::span<const double> row_vals(int i) const {
        return {values.data() + row_ptr[i],
                static_cast<std::size_t>(row_ptr[i + 1] - row_ptr[i])};
    }

    double coeff(int i, int j) const {
        const auto cs = row_cols(i);
        const auto it = std::lower_bound(cs.begin(), cs.end(), j);
        if (it == cs.end() || *it != j) return 0.0;
        return values[row_ptr[i] + (it - cs.begin())];
    }

    /// Dot product of row i with x.
    double row_dot(int i, const std::vector<double>& x) const {
        double s = 0.0;
        for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += values[k] * x[col_idx[k]];
        return s;
    }
};

inline std::vector<double> spmv(const SparseMatrix& a, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != a.cols)
        throw std::invalid_argument("spmv: shape mismatch");
    std::vector<double> y(a.rows, 0.0);
    for (int i = 0; i < a.rows; ++i) y[i] = a.row_dot(i, x);
    return y;
}

inline std::vector<double> spmv_transpose(const SparseMatrix& a, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != a.rows)
        throw std::invalid_argument("spmv_transpose: shape mismatch");
    std::vector<double> y(a.cols, 0.0);
    for (int i = 0; i < a.rows; ++i)
        for (int k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k)
            y[a.col_idx[k]] += a.values[k] * x[i];
    return y;
}

/// Row-major dense matrix.
struct DenseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    DenseMatrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }
};

inline std::vector<double> dense_matvec(const DenseMatrix& m, const std::vector<double>& x) {
    std::vector<double> y(m.rows, 0.0);
    for (int i = 0; i < m.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < m.cols; ++j) s += m(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

struct DenseLU;
inline std::vector<double> dense_solve(const DenseMatrix& a, const std::vector<double>& b);

/// Reusable LU factorization (partial pivoting) for repeated solves
/// against the same matrix.
struct DenseLU {
    DenseMatrix lu;
    std::vector<int> perm;

    explicit DenseLU(DenseMatrix a) : lu(std::move(a)) {
        if (lu.rows != lu.cols) throw std::invalid_argument("DenseLU: matrix not square");
        const int n = lu.rows;
        double amax = 0.0;
        for (double v : lu.a) amax = std::max(amax, std::abs(v));
        const double tiny = 1e-14 * std::max(amax, 1e-300);
        perm.resize(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (int k = 0; k < n; ++k) {
            int piv = k;
            double best = std::abs(lu(k, k));
            for (int i = k + 1; i < n; ++i) {
                const double v = std::abs(lu(i, k));
                if (v > best) {
                    best = v;
                    piv = i;
                }
            }
            if (best < tiny) throw std::runtime_error("DenseLU: matrix is singular");
            if (piv != k) {
                for (int j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
                std::swap(perm[k], perm[piv]);
            }
            const double inv = 1.0 / lu(k, k);
            for (int i = k + 1; i < n; ++i) {
                const double f = lu(i, k) * inv;
                lu(i, k) = f;
                if (f == 0.0) continue;
                for (int j = k + 1; j < n; ++j) lu(i, j) -= f * lu(k, j);
            }
        }
    }

    std::vector<double> solve(const std::vector<double>& b) const {
        const int n = lu.rows;
        std::vector<double> x(n);
        for (int i = 0; i < n; ++i) x[i] = b[perm[i]];
        for (int i = 0; i < n; ++i) {
            double s = x[i];
            for (int j = 0; j < i; ++j) s -= lu(i, j) * x[j];
            x[i] = s;
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = x[i];
            for (int j = i + 1; j < n; ++j) s -= lu(i, j) * x[j];
            x[i] = s / lu(i, i);
        }
        return x;
    }

    /// Solve with steps of iterative refinement against the original
    /// matrix; keeps the forward error small when entry scales vary by
    /// many orders of magnitude.
    std::vector<double> solve_refined(const DenseMatrix& a, const std::vector<double>& b,
                                      int refinements = 1) const {
        auto x = solve(b);
        const int n = lu.rows;
        for (int pass = 0; pass < refinements; ++pass) {
            std::vector<double> r(n);
            for (int i = 0; i < n; ++i) {
                double s = b[i];
                for (int j = 0; j < n; ++j) s -= a(i, j) * x[j];
                r[i] = s;
            }
            const auto dx = solve(r);
            for (int i = 0; i < n; ++i) x[i] += dx[i];
        }
        return x;
    }
};

/// Solve Ax = b by LU with partial pivoting plus one refinement pass.
/// Throws if a pivot falls below 1e-14 times the largest entry of A.
inline std::vector<double> dense_solve(const DenseMatrix& a, const std::vector<double>& b) {
    if (a.rows != a.cols || static_cast<int>(b.size()) != a.rows)
        throw std::invalid_argument("dense_solve: shape mismatch");
    const DenseLU lu(a);
    return lu.solve_refined(a, b, 1);
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues ascending; eigenvectors (columns) optional.
inline std::vector<double> dense_sym_eig(const DenseMatrix& in, DenseMatrix* vectors = nullptr) {
    if (in.rows != in.cols) throw std::invalid_argument("dense_sym_eig: matrix not square");
    const int n = in.rows;
    double asym = 0.0, scale = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            asym = std::max(asym, std::abs(in(i, j) - in(j, i)));
            scale = std::max(scale, std::abs(in(i, j)));
        }
    if (asym > 1e-10 * std::max(scale, 1e-300))
        throw std::invalid_argument("dense_sym_eig: matrix not symmetric");

    DenseMatrix a = in;
    DenseMatrix v(n, n);
    for (int i = 0; i < n; ++i) v(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off <= 1e-30 * std::max(scale * scale, 1e-300) || off == 0.0) break;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> diag(n);
    for (int i = 0; i < n; ++i) diag[i] = a(i, i);
    std::sort(order.begin(), order.end(), [&](int i, int j) { return diag[i] < diag[j]; });

    std::vector<double> values(n);
    for (int i = 0; i < n; ++i) values[i] = diag[order[i]];
    if (vectors) {
        *vectors = DenseMatrix(n, n);
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) (*vectors)(i, j) = v(i, order[j]);
    }
    return values;
}

/// Cholesky factor (lower) of an SPD matrix.  Throws if not SPD.
inline DenseMatrix cholesky(const DenseMatrix& b) {
    if (b.rows != b.cols) throw std::invalid_argument("cholesky: matrix not square");
    const int n = b.rows;
    DenseMatrix l(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = b(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("cholesky: matrix not SPD");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

/// Eigenvalues of the pencil (A, B) with A symmetric and B SPD, via
/// Cholesky reduction to a standard symmetric problem.
inline std::vector<double> generalized_sym_eig(const DenseMatrix& a, const DenseMatrix& b,
                                               DenseMatrix* vectors = nullptr) {
    if (a.rows != a.cols || b.rows != b.cols || a.rows != b.rows)
        throw std::invalid_argument("generalized_sym_eig: shape mismatch");
    const int n = a.rows;
    const DenseMatrix l = cholesky(b);

    // C = L^{-1} A L^{-T}
    DenseMatrix c = a;
    for (int col = 0; col < n; ++col) {  // forward solves, column by column
        for (int i = 0; i < n; ++i) {
            double s = c(i, col);
            for (int k = 0; k < i; ++k) s -= l(i, k) * c(k, col);
            c(i, col) = s / l(i, i);
        }
    }
    for (int row = 0; row < n; ++row) {  // same solve from the right
        for (int j = 0; j < n; ++j) {
            double s = c(row, j);
            for (int k = 0; k < j; ++k) s -= l(j, k) * c(row, k);
            c(row, j) = s / l(j, j);
        }
    }
    for (int i = 0; i < n; ++i)  // symmetrize rounding noise
        for (int j = i + 1; j < n; ++j) {
            const double m = 0.5 * (c(i, j) + c(j, i));
            c(i, j) = c(j, i) = m;
        }

    DenseMatrix w;
    auto values = dense_sym_eig(c, vectors ? &w : nullptr);
    if (vectors) {
        // x = L^{-T} y per column
        *vectors = DenseMatrix(n, n);
        for (int col = 0; col < n; ++col) {
            std::vector<double> y(n);
            for (int i = 0; i < n; ++i) y[i] = w(i, col);
            for (int i = n - 1; i >= 0; --i) {
                double s = y[i];
                for (int k = i + 1; k < n; ++k) s -= l(k, i) * y[k];
                y[i] = s / l(i, i);
            }
            for (int i = 0; i < n; ++i) (*vectors)(i, col) = y[i];
        }
    }
    return values;
}

/// Largest eigenvalue of a symmetric matrix by power iteration (sanity
/// companion to the Jacobi path).
inline double power_iteration(const DenseMatrix& a, int iterations = 500) {
    const int n = a.rows;
    std::vector<double> x(n, 1.0);
    double lambda = 0.0;
    for (int it = 0; it < iterations; ++it) {
        auto y = dense_matvec(a, x);
        double nrm = 0.0;
        for (double v : y) nrm += v * v;
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) return 0.0;
        for (double& v : y) v /= nrm;
        lambda = 0.0;
        auto ay = dense_matvec(a, y);
        for (int i = 0; i < n; ++i) lambda += y[i] * ay[i];
        x = std::move(y);
    }
    return lambda;
}

/// Conjugate gradients for a consistent singular SPD system whose kernel
/// is spanned by the constant vector (used for pressure recovery).  Both
/// the right-hand side and the iterates are kept mean-free.
inline std::vector<double> cg_mean_free(const SparseMatrix& a, std::vector<double> b,
                                        double tol = 1e-13, int max_iter = 100000) {
    const int n = a.rows;
    auto project = [n](std::vector<double>& v) {
        double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        for (double& x : v) x -= mean;
    };
    project(b);
    std::vector<double> x(n, 0.0), r = b, p = b;
    double rr = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
    const double stop = tol * tol * std::max(rr, 1e-300);
    for (int it = 0; it < max_iter && rr > stop; ++it) {
        auto ap = spmv(a, p);
        const double pap = std::inner_product(p.begin(), p.end(), ap.begin(), 0.0);
        if (pap <= 0.0) break;
        const double alpha = rr / pap;
        for (int i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project(r);
        const double rr_new = std::inner_product(r.begin(), r.end(), r.begin(), 0.0);
        const double beta = rr_new / rr;
        rr = rr_new;
        for (int i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    }
    project(x);
    return x;
}

}  // namespace saddlemg
