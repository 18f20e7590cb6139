#include "qvi/newton_system.hpp"

#include <Eigen/SparseLU>

#include <stdexcept>
#include <vector>

namespace qvi {

namespace {

VectorXd apply_scalar(const std::function<double(double)>& f, const VectorXd& s) {
    VectorXd out(s.size());
    for (long i = 0; i < s.size(); ++i)
        out[i] = f(s[i]);
    return out;
}

void check_dims(const ThermoMapData& thermo, const FeFunction& u_i, const FeFunction& T_i,
                const FeFunction& u_B) {
    const long m = n_dofs(thermo.mesh, Space::H10);
    const long nn = thermo.mesh.n_nodes();
    if (u_i.coeffs.size() != m || u_B.coeffs.size() != m || T_i.coeffs.size() != nn)
        throw std::invalid_argument("step system: field sizes do not match the mesh");
}

// Scatter a block into the stacked triplet list, optionally compressing rows
// or columns through an index map (-1 drops the entry).
void add_block(std::vector<Triplet>& trips, const SpMat& B, long row0, long col0,
               const std::vector<long>* row_map = nullptr,
               const std::vector<long>* col_map = nullptr) {
    for (int k = 0; k < B.outerSize(); ++k) {
        for (SpMat::InnerIterator it(B, k); it; ++it) {
            long r = it.row();
            long c = it.col();
            if (row_map) {
                r = (*row_map)[r];
                if (r < 0)
                    continue;
            }
            if (col_map) {
                c = (*col_map)[c];
                if (c < 0)
                    continue;
            }
            trips.emplace_back(row0 + r, col0 + c, it.value());
        }
    }
}

} // namespace

NewtonStepSystem assemble_active_system(const ThermoMapData& thermo, const FeFunction& u_i,
                                        const FeFunction& T_i, const FeFunction& u_B,
                                        const ActiveSet& active, const FeFunction* u_eval,
                                        const BallChain* ball) {
    check_dims(thermo, u_i, T_i, u_B);
    const Forms& f = *thermo.forms;
    const FeFunction& ue = u_eval ? *u_eval : u_i;

    const VectorXd s = thermo.psi0 + thermo.psi.cwiseProduct(T_i.coeffs) - nodal_values_full(ue);
    const VectorXd dg = apply_scalar(thermo.g.nderiv, s);

    NewtonStepSystem sys;
    sys.mesh = thermo.mesh;
    sys.forms = thermo.forms;
    sys.active = active;

    sys.K11 = f.M_int;
    sys.K12 = -SpMat(f.M_io * thermo.phi.asDiagonal());
    sys.K13 = -f.M_int;
    sys.K21 = SpMat(f.M_h1 * dg.asDiagonal()) * f.E;
    if (ball && !ball->trivial()) {
        sys.K21 = ball->scale * sys.K21;
        sys.ball = *ball;
    }
    sys.K22 = f.K_h1 + thermo.k * f.M_h1 - SpMat(f.M_h1 * dg.cwiseProduct(thermo.psi).asDiagonal());
    sys.K23 = SpMat(f.K_h1.rows(), f.M_int.cols());
    sys.K31 = SpMat(f.M_int.rows(), f.M_int.cols());
    sys.K32 = SpMat(f.K_io * thermo.phi.asDiagonal());
    sys.K33 = f.K_int;

    sys.rhs1 = f.M_int * (u_B.coeffs - u_i.coeffs);
    sys.rhs2 = VectorXd::Zero(f.K_h1.rows());
    sys.rhs3 = VectorXd::Zero(f.M_int.rows());
    return sys;
}

NewtonStepSystem assemble_smoothed_system(const ThermoMapData& thermo, const FeFunction& u_i,
                                          const FeFunction& T_i, const FeFunction& u_B,
                                          const VectorXd& theta_bar, double rho) {
    check_dims(thermo, u_i, T_i, u_B);
    if (theta_bar.size() != u_i.coeffs.size())
        throw std::invalid_argument("step system: obstacle size does not match the mesh");
    const Forms& f = *thermo.forms;

    const VectorXd s = thermo.psi0 + thermo.psi.cwiseProduct(T_i.coeffs) - nodal_values_full(u_i);
    const VectorXd dg = apply_scalar(thermo.g.nderiv, s);

    VectorXd d_int(u_i.coeffs.size());
    for (long i = 0; i < d_int.size(); ++i)
        d_int[i] = huber_deriv(u_i.coeffs[i] - theta_bar[i], rho) / rho;
    const VectorXd d_full = f.E * d_int; // phi vanishes on the boundary anyway

    NewtonStepSystem sys;
    sys.mesh = thermo.mesh;
    sys.forms = thermo.forms;
    sys.smoothed = true;

    sys.K11 = f.M_int;
    sys.K12 = SpMat(f.M_int.rows(), f.K_h1.cols());
    sys.K13 = -f.M_int;
    sys.K21 = SpMat(f.M_h1 * dg.asDiagonal()) * f.E;
    sys.K22 = f.K_h1 + thermo.k * f.M_h1 - SpMat(f.M_h1 * dg.cwiseProduct(thermo.psi).asDiagonal());
    sys.K23 = SpMat(f.K_h1.rows(), f.M_int.cols());
    sys.K31 = SpMat(f.M_int.rows(), f.M_int.cols());
    sys.K32 = -SpMat(f.M_io * d_full.cwiseProduct(thermo.phi).asDiagonal());
    sys.K33 = f.K_int + SpMat(f.M_int * d_int.asDiagonal());

    sys.rhs1 = f.M_int * (u_B.coeffs - u_i.coeffs);
    sys.rhs2 = VectorXd::Zero(f.K_h1.rows());
    sys.rhs3 = VectorXd::Zero(f.M_int.rows());
    return sys;
}

NewtonStepSystem assemble_semilinear_system(std::shared_ptr<const Forms> forms,
                                            const NemytskiiFn& b1, const NemytskiiFn& b2,
                                            const FeFunction& u_i, const FeFunction& u_B,
                                            const ActiveSet& active) {
    const Forms& f = *forms;
    const long m = f.M_int.rows();
    if (u_i.coeffs.size() != m || u_B.coeffs.size() != m)
        throw std::invalid_argument("step system: field sizes do not match the mesh");

    const VectorXd c = gphi_semilinear_weight(b1, b2, nodal_values_full(u_i));

    NewtonStepSystem sys;
    sys.mesh = f.mesh;
    sys.forms = std::move(forms);
    sys.active = active;

    sys.K11 = f.M_int;
    sys.K12 = SpMat(m, 0);
    sys.K13 = -f.M_int;
    sys.K21 = SpMat(0, m);
    sys.K22 = SpMat(0, 0);
    sys.K23 = SpMat(0, m);
    sys.K31 = -SpMat(f.M_io * c.asDiagonal()) * f.E;
    sys.K32 = SpMat(m, 0);
    sys.K33 = f.K_int;

    sys.rhs1 = f.M_int * (u_B.coeffs - u_i.coeffs);
    sys.rhs2 = VectorXd(0);
    sys.rhs3 = VectorXd::Zero(m);
    return sys;
}

NewtonStepSolution solve_newton_step(const NewtonStepSystem& sys) {
    const long m = sys.K11.rows();
    const long n_xi = sys.K22.rows();

    // The third unknown keeps every interior dof unless the active-set
    // reduction removes rows/columns (exact system only).
    std::vector<long> keep;
    std::vector<long> third_map(m, -1);
    if (!sys.smoothed && !sys.active.active.empty()) {
        for (long i : sys.active.inactive)
            keep.push_back(i);
    } else {
        keep.resize(m);
        for (long i = 0; i < m; ++i)
            keep[i] = i;
    }
    for (long j = 0; j < static_cast<long>(keep.size()); ++j)
        third_map[keep[j]] = j;
    const long n_third = static_cast<long>(keep.size());
    const long total = m + n_xi + n_third;

    std::vector<Triplet> trips;
    trips.reserve(static_cast<size_t>(sys.K11.nonZeros() + sys.K12.nonZeros()
                                      + sys.K13.nonZeros() + sys.K21.nonZeros()
                                      + sys.K22.nonZeros() + sys.K32.nonZeros()
                                      + sys.K33.nonZeros()));
    add_block(trips, sys.K11, 0, 0);
    add_block(trips, sys.K12, 0, m);
    add_block(trips, sys.K13, 0, m + n_xi, nullptr, &third_map);
    add_block(trips, sys.K21, m, 0);
    add_block(trips, sys.K22, m, m);
    add_block(trips, sys.K23, m, m + n_xi, nullptr, &third_map);
    add_block(trips, sys.K31, m + n_xi, 0, &third_map, nullptr);
    add_block(trips, sys.K32, m + n_xi, m, &third_map, nullptr);
    add_block(trips, sys.K33, m + n_xi, m + n_xi, &third_map, &third_map);

    SpMat A(total, total);
    A.setFromTriplets(trips.begin(), trips.end());

    VectorXd rhs(total);
    rhs.head(m) = sys.rhs1;
    rhs.segment(m, n_xi) = sys.rhs2;
    for (long j = 0; j < n_third; ++j)
        rhs[m + n_xi + j] = sys.rhs3[keep[j]];

    VectorXd x;
    if (sys.ball.trivial()) {
        x = solve_sparse(A, rhs);
    } else {
        // Block (2,1) carries the rank-one projection term
        // -(K21 v)(K_int v)'; fold it in by the Sherman-Morrison identity.
        Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
        lu.compute(A);
        if (lu.info() != Eigen::Success)
            throw LinearSolverFailure("step system factorization failed");
        VectorXd U = VectorXd::Zero(total);
        U.segment(m, n_xi) = sys.K21 * sys.ball.v;
        VectorXd V = VectorXd::Zero(total);
        V.head(m) = sys.forms->K_int * sys.ball.v;
        const double an = A.norm();
        const auto refined = [&](const VectorXd& b) {
            VectorXd y = lu.solve(b);
            for (int pass = 0; pass < 5; ++pass) {
                const VectorXd r = b - A * y;
                if (r.norm() <= 1e-12 * (b.norm() + an * y.norm())) break;
                y += lu.solve(r);
            }
            return y;
        };
        const VectorXd y0 = refined(rhs);
        const VectorXd y1 = refined(U);
        const double denom = 1.0 - V.dot(y1);
        if (std::abs(denom) < 1e-14)
            throw LinearSolverFailure("step system rank-one update is singular");
        x = y0 + y1 * (V.dot(y0) / denom);
    }

    NewtonStepSolution out;
    out.delta_u = {sys.mesh, Space::H10, x.head(m)};
    out.xi = {sys.mesh, Space::H1, VectorXd::Zero(sys.mesh.n_nodes())};
    if (n_xi > 0)
        out.xi.coeffs = x.segment(m, n_xi);
    VectorXd mu = VectorXd::Zero(m);
    for (long j = 0; j < n_third; ++j)
        mu[keep[j]] = x[m + n_xi + j];
    out.mu = {sys.mesh, Space::H10, std::move(mu)};
    return out;
}

} // namespace qvi
