#include "qvi/obstacle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qvi {

double huber(double s, double rho) {
    if (s <= 0.0) return 0.0;
    if (s < rho) return s * s / (2.0 * rho);
    return s - rho / 2.0;
}

double huber_deriv(double s, double rho) {
    if (s <= 0.0) return 0.0;
    if (s < rho) return s / rho;
    return 1.0;
}

ObstacleData make_obstacle_data(std::shared_ptr<const Forms> forms, const ScalarField& f,
                                const ScalarField& theta) {
    const Mesh mesh = forms->mesh;
    return ObstacleData{mesh, forms, assemble_load(mesh, Space::H10, f),
                        interpolate(mesh, Space::H10, theta).coeffs};
}

ActiveSet classify_active(const VectorXd& u, const VectorXd& theta, double eps_act) {
    ActiveSet s;
    for (long i = 0; i < u.size(); ++i) {
        if (std::isfinite(theta[i]) && u[i] >= theta[i] - eps_act)
            s.active.push_back(i);
        else
            s.inactive.push_back(i);
    }
    return s;
}

namespace {

double max_violation(const VectorXd& u, const VectorXd& theta) {
    double v = 0.0;
    for (long i = 0; i < u.size(); ++i)
        if (std::isfinite(theta[i])) v = std::max(v, u[i] - theta[i]);
    return v;
}

// K restricted to the rows/columns listed in `keep` (reduced index = position).
SpMat submatrix(const SpMat& K, const std::vector<long>& keep) {
    std::vector<long> red(K.rows(), -1);
    for (size_t p = 0; p < keep.size(); ++p) red[keep[p]] = long(p);
    std::vector<Triplet> trips;
    for (int col = 0; col < K.outerSize(); ++col) {
        if (red[col] < 0) continue;
        for (SpMat::InnerIterator it(K, col); it; ++it)
            if (red[it.row()] >= 0) trips.emplace_back(red[it.row()], red[col], it.value());
    }
    SpMat S(long(keep.size()), long(keep.size()));
    S.setFromTriplets(trips.begin(), trips.end());
    S.makeCompressed();
    return S;
}

} // namespace

std::pair<FeFunction, long> pfmy_solve(const ObstacleData& data, double rho,
                                       const FeFunction& u0, double newton_tol, int max_inner,
                                       PatternLU* lu) {
    const Forms& f = *data.forms;
    const long m = data.mesh.n_interior();
    VectorXd u = u0.coeffs;
    PatternLU local;
    if (!lu) lu = &local;

    VectorXd sig(m), dsig(m);
    std::vector<signed char> branch(m), branch_prev;
    double res = 0.0, res_prev = std::numeric_limits<double>::infinity();
    // Residual evaluation bottoms out around eps * rho^{-1} * ||M sigma||; once
    // the Huber branch pattern is stable the problem is linear and one step
    // reaches that floor, so a non-improving stable-pattern iterate of small
    // residual counts as converged.
    const double stall_cap = 1e-6 * (1.0 + data.b.norm());
    for (int it = 0; it <= max_inner; ++it) {
        for (long i = 0; i < m; ++i) {
            const double s = std::isfinite(data.theta[i]) ? u[i] - data.theta[i] : -1.0;
            sig[i] = huber(s, rho);
            dsig[i] = huber_deriv(s, rho);
            branch[i] = s <= 0.0 ? 0 : (s < rho ? 1 : 2);
        }
        const VectorXd F = f.K_int * u - data.b + (f.M_int * sig) / rho;
        res = F.norm();
        const bool at_float_floor =
            branch == branch_prev && res >= 0.5 * res_prev && res <= stall_cap;
        if (res <= newton_tol || at_float_floor)
            return {FeFunction{data.mesh, Space::H10, std::move(u)}, it};
        if (it == max_inner) break;
        // keep the structural pattern K + M regardless of dsig's zeros
        SpMat J = f.K_int + SpMat(f.M_int * (dsig / rho).asDiagonal());
        u += lu->solve(J, -F);
        branch_prev = branch;
        res_prev = res;
    }
    throw InnerSolverFailure("smoothed obstacle Newton stalled", res);
}

ObstacleSolution pdas_solve(const ObstacleData& data, const FeFunction& u0, int max_pdas) {
    const Forms& f = *data.forms;
    const long m = data.mesh.n_interior();
    const VectorXd& theta = data.theta;

    // Biactive bands (u = theta with a vanishing multiplier) make the strict
    // indicator flip on float noise and the set never stabilizes; a dead-band
    // far below the genuine multiplier scale resolves those nodes as inactive,
    // where the reduced solve reproduces u = theta anyway.
    const double dead_band = 1e-12 * (1.0 + data.b.cwiseAbs().maxCoeff());

    std::vector<char> active(m);
    {
        const VectorXd lam0 = data.b - f.K_int * u0.coeffs;
        for (long i = 0; i < m; ++i)
            active[i] =
                std::isfinite(theta[i]) && lam0[i] + (u0.coeffs[i] - theta[i]) > dead_band;
    }

    VectorXd u(m), lam(m);
    for (int it = 1; it <= max_pdas; ++it) {
        std::vector<long> inact;
        VectorXd ubar = VectorXd::Zero(m);
        for (long i = 0; i < m; ++i) {
            if (active[i])
                ubar[i] = theta[i];
            else
                inact.push_back(i);
        }
        if (inact.empty()) {
            u = ubar;
        } else {
            const VectorXd rhs_full = data.b - f.K_int * ubar;
            VectorXd rhs(inact.size());
            for (size_t p = 0; p < inact.size(); ++p) rhs[long(p)] = rhs_full[inact[p]];
            const VectorXd ui = solve_spd(submatrix(f.K_int, inact), rhs);
            u = ubar;
            for (size_t p = 0; p < inact.size(); ++p) u[inact[p]] = ui[long(p)];
        }
        lam = data.b - f.K_int * u;
        bool stable = true;
        for (long i = 0; i < m; ++i) {
            const char a = std::isfinite(theta[i]) && lam[i] + (u[i] - theta[i]) > dead_band;
            if (a != active[i]) stable = false;
            active[i] = a;
        }
        if (stable) {
            ObstacleSolution sol{FeFunction{data.mesh, Space::H10, u}, {}, 0, it, lam, {}};
            for (long i = 0; i < m; ++i)
                (active[i] ? sol.active_set.active : sol.active_set.inactive).push_back(i);
            return sol;
        }
    }
    throw RestorationFailure("active set failed to stabilize within " +
                             std::to_string(max_pdas) + " iterations");
}

std::vector<double> default_rho_schedule() {
    std::vector<double> rhos;
    for (int j = 0; j <= 8; ++j) rhos.push_back(std::pow(10.0, -j));
    return rhos;
}

ObstacleSolution solve_obstacle(const ObstacleData& data, const FeFunction& u0,
                                const PfmySchedule& schedule, PatternLU* lu) {
    FeFunction u = u0;
    long pfmy_total = 0;
    std::vector<double> path;
    for (double rho : schedule.rhos) {
        auto [ur, iters] = pfmy_solve(data, rho, u, schedule.newton_tol, schedule.max_inner, lu);
        u = std::move(ur);
        pfmy_total += iters;
        path.push_back(max_violation(u.coeffs, data.theta));
    }
    ObstacleSolution sol = pdas_solve(data, u);
    sol.pfmy_iters = pfmy_total;
    sol.path_infeasibility = std::move(path);
    return sol;
}

} // namespace qvi
