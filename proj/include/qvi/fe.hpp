#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <Eigen/SparseCholesky>

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "qvi/errors.hpp"

namespace qvi {

using SpMat    = Eigen::SparseMatrix<double>;
using Triplet  = Eigen::Triplet<double>;
using VectorXd = Eigen::VectorXd;

// Uniform lattice over (0,1) or (0,1)^2 with n cells per direction.
// Node coordinates are always j*h with integer j, so they are bit-reproducible.
// 2D nodes are ordered lexicographically by (x2, x1): idx = j2*(n+1) + j1.
struct Mesh {
    int    dim = 1;
    int    n   = 0;     // cells per direction
    double h   = 0.0;   // = 1/n

    long nodes_per_dim() const { return n + 1; }
    long n_nodes() const { return dim == 1 ? n + 1 : long(n + 1) * (n + 1); }
    long n_cells() const { return dim == 1 ? n : long(n) * n; }
    long n_interior() const { return dim == 1 ? n - 1 : long(n - 1) * (n - 1); }

    bool is_boundary(long idx) const {
        if (dim == 1) return idx == 0 || idx == n;
        const long j1 = idx % (n + 1), j2 = idx / (n + 1);
        return j1 == 0 || j1 == n || j2 == 0 || j2 == n;
    }
    std::array<double, 2> node_coord(long idx) const {
        if (dim == 1) return {idx * h, 0.0};
        const long j1 = idx % (n + 1), j2 = idx / (n + 1);
        return {j1 * h, j2 * h};
    }
    friend bool operator==(const Mesh& a, const Mesh& b) {
        return a.dim == b.dim && a.n == b.n;
    }
};

Mesh build_mesh(int dim, int n_cells);

enum class Space { H1, H10 };

inline long n_dofs(const Mesh& m, Space s) {
    return s == Space::H1 ? m.n_nodes() : m.n_interior();
}

// P1 (1D) / Q1 (2D) finite element function given by nodal coefficients.
// H10 coefficients run over interior nodes only; the function is exactly 0 at
// boundary nodes.
struct FeFunction {
    Mesh     mesh;
    Space    space = Space::H1;
    VectorXd coeffs;
};

// Scalar field evaluable at arbitrary points of the domain (closed forms,
// composed nodal data wrapped in an interpolating lambda, ...).
using ScalarField = std::function<double(double, double)>;

FeFunction interpolate(const Mesh& mesh, Space space, const ScalarField& f);

// Nodal values at all mesh nodes (zero-padded on the boundary for H10).
VectorXd nodal_values_full(const FeFunction& u);

// Extension by zero of interior coefficients to the full node set / restriction back.
VectorXd extend_interior(const Mesh& mesh, const VectorXd& v_int);
VectorXd restrict_interior(const Mesh& mesh, const VectorXd& v_full);

// P1/Q1 point evaluation of a full-node coefficient vector.
double eval_nodal(const Mesh& mesh, const VectorXd& full, double x, double y = 0.0);

// ---------------------------------------------------------------------------
// Assembly. Unweighted stiffness/mass use the analytic element integrals;
// weighted forms and loads use tensor Gauss-Legendre quadrature with three
// points per direction.
// ---------------------------------------------------------------------------

SpMat assemble_stiffness(const Mesh& mesh, Space space);
SpMat assemble_mass(const Mesh& mesh, Space space_row, Space space_col);
SpMat assemble_weighted_form(const Mesh& mesh, Space space_row, Space space_col,
                             const ScalarField& weight, bool gradient_form);
SpMat assemble_weighted_form(const Mesh& mesh, Space space_row, Space space_col,
                             const FeFunction& weight, bool gradient_form);
VectorXd assemble_load(const Mesh& mesh, Space space, const ScalarField& f);

// ---------------------------------------------------------------------------
// Direct sparse solves. Both refine iteratively until the normwise backward
// error |Ax-b|/(|b| + |A||x|) is <= 1e-12 and throw if it cannot be reached.
// ---------------------------------------------------------------------------

VectorXd solve_sparse(const SpMat& A, const VectorXd& b);   // general, SparseLU
VectorXd solve_spd(const SpMat& A, const VectorXd& b);      // SPD, LDLT

// Reusable LU for sequences of solves with a fixed sparsity pattern (inner
// Newton loops): the symbolic analysis runs once, factorize() per matrix.
struct PatternLU {
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    bool analyzed = false;
    VectorXd solve(const SpMat& A, const VectorXd& b);
};

enum class NormKind { L2, H10, H1 };

double norm(const FeFunction& u, NormKind kind);

// Cached forms for one mesh; every solver component shares one instance.
struct Forms {
    Mesh  mesh;
    SpMat K_h1, M_h1;    // all nodes (Neumann forms)
    SpMat K_int, M_int;  // interior nodes (H10 forms)
    SpMat E;             // extension by zero: n_nodes x n_interior
    SpMat M_io, K_io;    // interior rows, all-node columns
    std::vector<long> int2full, full2int;  // full2int has -1 on boundary nodes

    double h10_int(const VectorXd& v) const { return std::sqrt(std::max(0.0, v.dot(K_int * v))); }
    double l2_int(const VectorXd& v) const { return std::sqrt(std::max(0.0, v.dot(M_int * v))); }
    double h1_int(const VectorXd& v) const {
        return std::sqrt(std::max(0.0, v.dot(K_int * v) + v.dot(M_int * v)));
    }
    double h10_full(const VectorXd& v) const { return std::sqrt(std::max(0.0, v.dot(K_h1 * v))); }
};

std::shared_ptr<const Forms> build_forms(const Mesh& mesh);

} // namespace qvi
