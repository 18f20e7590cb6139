#include "qvi/fe.hpp"

#include <cmath>
#include <cstdio>

namespace qvi {

Mesh build_mesh(int dim, int n_cells) {
    if (dim != 1 && dim != 2)
        throw std::invalid_argument("build_mesh: dim must be 1 or 2");
    if (n_cells < 2)
        throw std::invalid_argument("build_mesh: need at least 2 cells per direction");
    return Mesh{dim, n_cells, 1.0 / n_cells};
}

namespace {

// Dof index of a full node index in the given space, -1 if constrained.
long dof_of_node(const Mesh& m, Space s, long idx) {
    if (s == Space::H1) return idx;
    if (m.is_boundary(idx)) return -1;
    if (m.dim == 1) return idx - 1;
    const long j1 = idx % (m.n + 1), j2 = idx / (m.n + 1);
    return (j2 - 1) * (m.n - 1) + (j1 - 1);
}

// Nodes of cell c, in the local order (0,0),(1,0),(1,1),(0,1) for 2D.
void cell_nodes(const Mesh& m, long c, long* nodes, int& n_local) {
    if (m.dim == 1) {
        n_local = 2;
        nodes[0] = c;
        nodes[1] = c + 1;
    } else {
        n_local = 4;
        const long c1 = c % m.n, c2 = c / m.n;
        const long base = c2 * (m.n + 1) + c1;
        nodes[0] = base;
        nodes[1] = base + 1;
        nodes[2] = base + m.n + 2;
        nodes[3] = base + m.n + 1;
    }
}

// 3-point Gauss-Legendre rule on [0,1].
constexpr double kGLx[3] = {0.5 - 0.5 * 0.7745966692414834, 0.5,
                            0.5 + 0.5 * 0.7745966692414834};
constexpr double kGLw[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

struct QuadPoint {
    double x, y;     // physical coordinates
    double w;        // weight including the cell measure
    double N[4];     // basis values
    double gx[4];    // physical basis gradients
    double gy[4];
};

// Quadrature points of one cell with basis data; returns count.
int cell_quadrature(const Mesh& m, long c, QuadPoint* qp) {
    if (m.dim == 1) {
        const double x0 = (c)*m.h;
        for (int q = 0; q < 3; ++q) {
            QuadPoint& p = qp[q];
            const double t = kGLx[q];
            p.x = x0 + t * m.h;
            p.y = 0.0;
            p.w = kGLw[q] * m.h;
            p.N[0] = 1.0 - t;
            p.N[1] = t;
            p.gx[0] = -1.0 / m.h;
            p.gx[1] = 1.0 / m.h;
            p.gy[0] = p.gy[1] = 0.0;
        }
        return 3;
    }
    const long c1 = c % m.n, c2 = c / m.n;
    const double x0 = c1 * m.h, y0 = c2 * m.h;
    int k = 0;
    for (int q2 = 0; q2 < 3; ++q2)
        for (int q1 = 0; q1 < 3; ++q1) {
            QuadPoint& p = qp[k++];
            const double s = kGLx[q1], t = kGLx[q2];
            p.x = x0 + s * m.h;
            p.y = y0 + t * m.h;
            p.w = kGLw[q1] * kGLw[q2] * m.h * m.h;
            const double bs[2] = {1.0 - s, s}, bt[2] = {1.0 - t, t};
            const double ds[2] = {-1.0 / m.h, 1.0 / m.h};
            // local order (0,0),(1,0),(1,1),(0,1)
            const int ls[4] = {0, 1, 1, 0}, lt[4] = {0, 0, 1, 1};
            for (int l = 0; l < 4; ++l) {
                p.N[l] = bs[ls[l]] * bt[lt[l]];
                p.gx[l] = ds[ls[l]] * bt[lt[l]];
                p.gy[l] = bs[ls[l]] * ds[lt[l]];
            }
        }
    return 9;
}

SpMat from_triplets(long rows, long cols, std::vector<Triplet>& trips) {
    SpMat A(rows, cols);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    return A;
}

} // namespace

FeFunction interpolate(const Mesh& mesh, Space space, const ScalarField& f) {
    FeFunction u{mesh, space, VectorXd(n_dofs(mesh, space))};
    for (long idx = 0; idx < mesh.n_nodes(); ++idx) {
        const long d = dof_of_node(mesh, space, idx);
        if (d < 0) continue;
        const auto xy = mesh.node_coord(idx);
        u.coeffs[d] = f(xy[0], xy[1]);
    }
    return u;
}

VectorXd nodal_values_full(const FeFunction& u) {
    if (u.space == Space::H1) return u.coeffs;
    return extend_interior(u.mesh, u.coeffs);
}

VectorXd extend_interior(const Mesh& mesh, const VectorXd& v_int) {
    VectorXd full = VectorXd::Zero(mesh.n_nodes());
    for (long idx = 0; idx < mesh.n_nodes(); ++idx) {
        const long d = dof_of_node(mesh, Space::H10, idx);
        if (d >= 0) full[idx] = v_int[d];
    }
    return full;
}

VectorXd restrict_interior(const Mesh& mesh, const VectorXd& v_full) {
    VectorXd v(mesh.n_interior());
    for (long idx = 0; idx < mesh.n_nodes(); ++idx) {
        const long d = dof_of_node(mesh, Space::H10, idx);
        if (d >= 0) v[d] = v_full[idx];
    }
    return v;
}

double eval_nodal(const Mesh& mesh, const VectorXd& full, double x, double y) {
    const int n = mesh.n;
    auto clamp_cell = [n](double s, double h) {
        long c = static_cast<long>(std::floor(s / h));
        if (c < 0) c = 0;
        if (c > n - 1) c = n - 1;
        return c;
    };
    if (mesh.dim == 1) {
        const long c = clamp_cell(x, mesh.h);
        const double t = x / mesh.h - c;
        return (1.0 - t) * full[c] + t * full[c + 1];
    }
    const long c1 = clamp_cell(x, mesh.h), c2 = clamp_cell(y, mesh.h);
    const double s = x / mesh.h - c1, t = y / mesh.h - c2;
    const long base = c2 * (n + 1) + c1;
    return (1 - s) * (1 - t) * full[base] + s * (1 - t) * full[base + 1] +
           s * t * full[base + n + 2] + (1 - s) * t * full[base + n + 1];
}

SpMat assemble_stiffness(const Mesh& mesh, Space space) {
    std::vector<Triplet> trips;
    long nodes[4];
    int n_local;
    if (mesh.dim == 1) {
        const double k = 1.0 / mesh.h;
        const double local[2][2] = {{k, -k}, {-k, k}};
        for (long c = 0; c < mesh.n_cells(); ++c) {
            cell_nodes(mesh, c, nodes, n_local);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    const long i = dof_of_node(mesh, space, nodes[a]);
                    const long j = dof_of_node(mesh, space, nodes[b]);
                    if (i >= 0 && j >= 0) trips.emplace_back(i, j, local[a][b]);
                }
        }
    } else {
        // Q1 element stiffness on a square cell is h-independent.
        const double local[4][4] = {{4, -1, -2, -1},
                                    {-1, 4, -1, -2},
                                    {-2, -1, 4, -1},
                                    {-1, -2, -1, 4}};
        for (long c = 0; c < mesh.n_cells(); ++c) {
            cell_nodes(mesh, c, nodes, n_local);
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) {
                    const long i = dof_of_node(mesh, space, nodes[a]);
                    const long j = dof_of_node(mesh, space, nodes[b]);
                    if (i >= 0 && j >= 0) trips.emplace_back(i, j, local[a][b] / 6.0);
                }
        }
    }
    return from_triplets(n_dofs(mesh, space), n_dofs(mesh, space), trips);
}

SpMat assemble_mass(const Mesh& mesh, Space space_row, Space space_col) {
    std::vector<Triplet> trips;
    long nodes[4];
    int n_local;
    if (mesh.dim == 1) {
        const double m0 = mesh.h / 6.0;
        const double local[2][2] = {{2 * m0, m0}, {m0, 2 * m0}};
        for (long c = 0; c < mesh.n_cells(); ++c) {
            cell_nodes(mesh, c, nodes, n_local);
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    const long i = dof_of_node(mesh, space_row, nodes[a]);
                    const long j = dof_of_node(mesh, space_col, nodes[b]);
                    if (i >= 0 && j >= 0) trips.emplace_back(i, j, local[a][b]);
                }
        }
    } else {
        const double m0 = mesh.h * mesh.h / 36.0;
        const double local[4][4] = {{4, 2, 1, 2}, {2, 4, 2, 1}, {1, 2, 4, 2}, {2, 1, 2, 4}};
        for (long c = 0; c < mesh.n_cells(); ++c) {
            cell_nodes(mesh, c, nodes, n_local);
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) {
                    const long i = dof_of_node(mesh, space_row, nodes[a]);
                    const long j = dof_of_node(mesh, space_col, nodes[b]);
                    if (i >= 0 && j >= 0) trips.emplace_back(i, j, local[a][b] * m0);
                }
        }
    }
    return from_triplets(n_dofs(mesh, space_row), n_dofs(mesh, space_col), trips);
}

SpMat assemble_weighted_form(const Mesh& mesh, Space space_row, Space space_col,
                             const ScalarField& weight, bool gradient_form) {
    std::vector<Triplet> trips;
    long nodes[4];
    int n_local;
    QuadPoint qp[9];
    for (long c = 0; c < mesh.n_cells(); ++c) {
        cell_nodes(mesh, c, nodes, n_local);
        const int nq = cell_quadrature(mesh, c, qp);
        double local[4][4] = {};
        for (int q = 0; q < nq; ++q) {
            const double wq = qp[q].w * weight(qp[q].x, qp[q].y);
            for (int a = 0; a < n_local; ++a)
                for (int b = 0; b < n_local; ++b)
                    local[a][b] += wq * (gradient_form
                                             ? qp[q].gx[a] * qp[q].gx[b] + qp[q].gy[a] * qp[q].gy[b]
                                             : qp[q].N[a] * qp[q].N[b]);
        }
        for (int a = 0; a < n_local; ++a)
            for (int b = 0; b < n_local; ++b) {
                const long i = dof_of_node(mesh, space_row, nodes[a]);
                const long j = dof_of_node(mesh, space_col, nodes[b]);
                if (i >= 0 && j >= 0) trips.emplace_back(i, j, local[a][b]);
            }
    }
    return from_triplets(n_dofs(mesh, space_row), n_dofs(mesh, space_col), trips);
}

SpMat assemble_weighted_form(const Mesh& mesh, Space space_row, Space space_col,
                             const FeFunction& weight, bool gradient_form) {
    const VectorXd full = nodal_values_full(weight);
    const Mesh wm = weight.mesh;
    return assemble_weighted_form(
        mesh, space_row, space_col,
        [&](double x, double y) { return eval_nodal(wm, full, x, y); }, gradient_form);
}

VectorXd assemble_load(const Mesh& mesh, Space space, const ScalarField& f) {
    VectorXd rhs = VectorXd::Zero(n_dofs(mesh, space));
    long nodes[4];
    int n_local;
    QuadPoint qp[9];
    for (long c = 0; c < mesh.n_cells(); ++c) {
        cell_nodes(mesh, c, nodes, n_local);
        const int nq = cell_quadrature(mesh, c, qp);
        for (int q = 0; q < nq; ++q) {
            const double wq = qp[q].w * f(qp[q].x, qp[q].y);
            for (int a = 0; a < n_local; ++a) {
                const long i = dof_of_node(mesh, space, nodes[a]);
                if (i >= 0) rhs[i] += wq * qp[q].N[a];
            }
        }
    }
    return rhs;
}

namespace {

std::string matrix_diag(const SpMat& A) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%ldx%ld, nnz=%ld", long(A.rows()), long(A.cols()),
                  long(A.nonZeros()));
    return buf;
}

// Iterative refinement until the normwise backward error
//   |Ax - b| / (|b| + |A|_F |x|)
// drops below 1e-12; relative to |b| alone the rounding floor eps*|A||x| is
// out of reach whenever the blocks are badly scaled.
VectorXd check_and_refine(const SpMat& A, const VectorXd& b, VectorXd x,
                          const std::function<VectorXd(const VectorXd&)>& apply_inv) {
    const double an = A.norm();
    double res = 0.0, scale = 1.0;
    for (int pass = 0; pass < 6; ++pass) {
        res = (A * x - b).norm();
        scale = b.norm() + an * x.norm();
        if (scale == 0.0) scale = 1.0;
        if (res <= 1e-12 * scale) return x;
        x += apply_inv(b - A * x);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", res / scale);
    throw LinearSolverFailure("direct solve missed the backward-error tolerance (" +
                              std::string(buf) + ", " + matrix_diag(A) + ")");
}

} // namespace

VectorXd solve_sparse(const SpMat& A, const VectorXd& b) {
    if (A.rows() != A.cols() || A.rows() != b.size())
        throw std::invalid_argument("solve_sparse: dimension mismatch");
    if (b.norm() == 0.0) return VectorXd::Zero(b.size());
    SpMat Ac = A;
    Ac.makeCompressed();
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(Ac);
    lu.factorize(Ac);
    if (lu.info() != Eigen::Success)
        throw LinearSolverFailure("sparse LU factorization failed (" + matrix_diag(Ac) + ")");
    return check_and_refine(Ac, b, lu.solve(b), [&](const VectorXd& r) { return lu.solve(r); });
}

VectorXd solve_spd(const SpMat& A, const VectorXd& b) {
    if (A.rows() != A.cols() || A.rows() != b.size())
        throw std::invalid_argument("solve_spd: dimension mismatch");
    if (b.norm() == 0.0) return VectorXd::Zero(b.size());
    SpMat Ac = A;
    Ac.makeCompressed();
    Eigen::SimplicialLDLT<SpMat> ldlt;
    ldlt.compute(Ac);
    if (ldlt.info() != Eigen::Success)
        throw LinearSolverFailure("LDLT factorization failed, matrix not SPD? (" +
                                  matrix_diag(Ac) + ")");
    return check_and_refine(Ac, b, ldlt.solve(b),
                            [&](const VectorXd& r) { return ldlt.solve(r); });
}

VectorXd PatternLU::solve(const SpMat& A, const VectorXd& b) {
    const SpMat* Ap = &A;
    SpMat tmp;
    if (!A.isCompressed()) {
        tmp = A;
        tmp.makeCompressed();
        Ap = &tmp;
    }
    if (!analyzed) {
        lu.analyzePattern(*Ap);
        analyzed = true;
    }
    lu.factorize(*Ap);
    if (lu.info() != Eigen::Success)
        throw LinearSolverFailure("sparse LU factorization failed (pattern reuse, " +
                                  matrix_diag(*Ap) + ")");
    VectorXd x = lu.solve(b);
    x += lu.solve(b - (*Ap) * x);
    return x;
}

double norm(const FeFunction& u, NormKind kind) {
    const SpMat K = (kind == NormKind::L2) ? SpMat() : assemble_stiffness(u.mesh, u.space);
    const SpMat M = (kind == NormKind::H10) ? SpMat() : assemble_mass(u.mesh, u.space, u.space);
    double q = 0.0;
    if (kind != NormKind::L2) q += u.coeffs.dot(K * u.coeffs);
    if (kind != NormKind::H10) q += u.coeffs.dot(M * u.coeffs);
    return std::sqrt(std::max(0.0, q));
}

std::shared_ptr<const Forms> build_forms(const Mesh& mesh) {
    auto f = std::make_shared<Forms>();
    f->mesh = mesh;
    f->K_h1 = assemble_stiffness(mesh, Space::H1);
    f->M_h1 = assemble_mass(mesh, Space::H1, Space::H1);
    f->K_int = assemble_stiffness(mesh, Space::H10);
    f->M_int = assemble_mass(mesh, Space::H10, Space::H10);
    f->M_io = assemble_mass(mesh, Space::H10, Space::H1);
    f->full2int.assign(mesh.n_nodes(), -1);
    f->int2full.assign(mesh.n_interior(), -1);
    std::vector<Triplet> trips;
    for (long idx = 0; idx < mesh.n_nodes(); ++idx) {
        const long d = dof_of_node(mesh, Space::H10, idx);
        if (d >= 0) {
            f->full2int[idx] = d;
            f->int2full[d] = idx;
            trips.emplace_back(idx, d, 1.0);
        }
    }
    f->E = from_triplets(mesh.n_nodes(), mesh.n_interior(), trips);
    f->K_io = (SpMat(f->E.transpose()) * f->K_h1).pruned();
    f->K_io.makeCompressed();
    return f;
}

} // namespace qvi
