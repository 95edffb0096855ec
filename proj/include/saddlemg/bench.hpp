#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "saddlemg/noncon_cr.hpp"
#include "saddlemg/saddle_mg.hpp"
#include "saddlemg/theory_lab.hpp"

namespace saddlemg {

/// One benchmark configuration: an example id, the mesh levels to run
/// (as denominators of h), and the solver settings.
struct BenchSpec {
    int example_id = 1;
    int coarse_n = 4;
    std::vector<int> levels = {8, 16, 32, 64};
    SolverConfig solver;
    std::uint64_t seed = 1;

    void validate() const {
        solver.validate();
        if (example_id < 1 || example_id > 4)
            throw std::invalid_argument("BenchSpec: example id must be 1..4");
        if (coarse_n < 1) throw std::invalid_argument("BenchSpec: coarse_n must be >= 1");
        int prev = 0;
        for (int l : levels) {
            if (l <= prev) throw std::invalid_argument("BenchSpec: levels must ascend");
            prev = l;
        }
    }

    /// Level count J for a target resolution: 1/l = h with l = coarse_n 2^{J-1}.
    int depth_for(int resolution) const {
        int j = 1, n = coarse_n;
        while (n < resolution) {
            n *= 2;
            ++j;
        }
        if (n != resolution)
            throw std::invalid_argument("BenchSpec: level " + std::to_string(resolution) +
                                        " is not coarse_n times a power of two");
        return j;
    }
};

struct RunRow {
    double h = 0.0;
    int size = 0;
    int iterations = 0;
    double final_error = 0.0;
    double elapsed_ms = 0.0;
    bool converged = false;
    double max_constraint = 0.0;        // largest constraint residual seen
    double equivalence_residual = 0.0;  // cr runs only
};

/// The standard benchmark load, shifted so its assembled element
/// integrals sum to zero on the given mesh (discrete compatibility with
/// zero boundary flux, exact on distorted meshes too).
inline std::function<double(double, double)> benchmark_load(const TriangleMesh& mesh) {
    const double pi = std::acos(-1.0);
    auto raw = [pi](double x, double y) {
        return 2.0 * pi * pi * std::cos(pi * x) * std::cos(pi * y);
    };
    const auto rhs = assemble_rhs(mesh, raw);
    double total = std::accumulate(rhs.begin(), rhs.end(), 0.0);
    double area = 0.0;
    for (int t = 0; t < mesh.num_triangles(); ++t) area += mesh.area(t);
    const double shift = total / area;
    return [raw, shift](double x, double y) { return raw(x, y) - shift; };
}

namespace detail {

inline TriangleMesh bench_coarse_mesh(const BenchSpec& spec) {
    auto coarse = build_square_mesh(spec.coarse_n);
    if (spec.example_id == 4) coarse = distort_mesh(coarse, 0.4, spec.seed);
    return coarse;
}

inline CoefficientTensor bench_tensor(const BenchSpec& spec, const TriangleMesh& coarse) {
    if (spec.example_id == 4) return cell_tensor_on_grid(coarse, spec.seed);
    return example_tensor(spec.example_id, spec.seed);
}

}  // namespace detail

/// One row per level of the V-cycle iteration-count table.
inline std::vector<RunRow> run_table(const BenchSpec& spec) {
    spec.validate();
    const auto coarse = detail::bench_coarse_mesh(spec);
    const auto tensor = detail::bench_tensor(spec, coarse);
    std::vector<RunRow> rows;
    for (int resolution : spec.levels) {
        const int depth = spec.depth_for(resolution);
        const auto t0 = std::chrono::steady_clock::now();
        const auto mh = build_mixed_hierarchy(build_hierarchy(coarse, depth), tensor);
        const auto f = benchmark_load(mh.finest_mesh());
        const auto result = solve(mh, f, [](double, double) { return 0.0; }, spec.solver);
        const auto t1 = std::chrono::steady_clock::now();

        RunRow row;
        row.h = 1.0 / resolution;
        row.size = mh.finest_mesh().num_edges() + mh.finest_mesh().num_triangles();
        row.iterations = result.stats.iterations;
        row.final_error =
            result.stats.error_history.empty() ? 0.0 : result.stats.error_history.back();
        row.elapsed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        row.converged = result.stats.converged;
        for (double c : result.stats.constraint_history)
            row.max_constraint = std::max(row.max_constraint, c);
        rows.push_back(row);
    }
    return rows;
}

/// The nonconforming solver on the Poisson problem (K = I), with the
/// per-iteration energy-equivalence residual as an extra column.
inline std::vector<RunRow> run_cr(const BenchSpec& spec) {
    spec.validate();
    const auto coarse = build_square_mesh(spec.coarse_n);
    std::vector<RunRow> rows;
    for (int resolution : spec.levels) {
        const int depth = spec.depth_for(resolution);
        const auto t0 = std::chrono::steady_clock::now();
        const auto mh = build_mixed_hierarchy(build_hierarchy(coarse, depth),
                                              CoefficientTensor::identity());
        const auto f = benchmark_load(mh.finest_mesh());
        const auto result = cr_solve_mg(mh, f, spec.solver);
        const auto t1 = std::chrono::steady_clock::now();

        RunRow row;
        row.h = 1.0 / resolution;
        row.size = mh.finest_mesh().num_edges() + mh.finest_mesh().num_triangles();
        row.iterations = result.stats.iterations;
        row.final_error =
            result.stats.error_history.empty() ? 0.0 : result.stats.error_history.back();
        row.elapsed_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        row.converged = result.stats.converged;
        for (double c : result.stats.constraint_history)
            row.max_constraint = std::max(row.max_constraint, c);
        row.equivalence_residual = result.equivalence_residual;
        rows.push_back(row);
    }
    return rows;
}

inline std::string to_csv(const std::vector<RunRow>& rows, bool with_equivalence = false) {
    std::string out = "h,size,iterations,final_error,elapsed_ms";
    if (with_equivalence) out += ",equiv_residual";
    out += "\n";
    char buf[160];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof buf, "%.10g,%d,%d,%.6e,%.3f", row.h, row.size,
                      row.iterations, row.final_error, row.elapsed_ms);
        out += buf;
        if (with_equivalence) {
            std::snprintf(buf, sizeof buf, ",%.6e", row.equivalence_residual);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

/// Theory report over small hierarchies (levels are V-cycle depths here).
inline nlohmann::json run_theory(const BenchSpec& spec) {
    const double pi = std::acos(-1.0);
    auto f = [pi](double x, double y) {
        return 2.0 * pi * pi * std::cos(pi * x) * std::cos(pi * y);
    };
    auto g = [](double, double) { return 0.0; };
    nlohmann::json report;
    report["coarse_n"] = spec.coarse_n;
    report["levels"] = nlohmann::json::array();
    for (int depth : spec.levels) {
        const auto mh = build_mixed_hierarchy(
            build_hierarchy(build_square_mesh(spec.coarse_n), depth),
            CoefficientTensor::identity());
        const auto est = verify_bound(mh, f, g);
        nlohmann::json entry;
        entry["J"] = depth;
        entry["C_A"] = est.C_A;
        entry["C_S"] = est.C_S;
        entry["c0"] = est.c0;
        entry["rho_measured"] = est.rho_measured;
        entry["bound_CACS"] = est.bound;
        entry["bound_c0"] = est.bound_c0;
        entry["sweep_norm_sq"] = est.sweep_norm_sq;
        entry["xz_identity_error"] = est.xz_error;
        entry["kappa_max"] = est.kappa_max;
        entry["rho_inexact"] = est.rho_inexact;
        entry["inexact_bound"] = est.inexact_bound;
        entry["xz_identity_pass"] = est.xz_identity_pass;
        entry["bound_chain_pass"] = est.bound_chain_pass;
        entry["inexact_pass"] = est.inexact_pass;
        report["levels"].push_back(entry);
    }
    return report;
}

}  // namespace saddlemg
