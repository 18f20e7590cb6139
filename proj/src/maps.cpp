#include "qvi/maps.hpp"

#include <cmath>
#include <utility>

namespace qvi {

ThermoMapData make_thermo_data(std::shared_ptr<const Forms> forms, double k, NemytskiiFn g,
                               const ScalarField& phi, const ScalarField& psi,
                               const ScalarField& psi0) {
    const Mesh& mesh = forms->mesh;
    ThermoMapData data;
    data.mesh = mesh;
    data.forms = std::move(forms);
    data.k = k;
    data.g = std::move(g);
    data.phi = interpolate(mesh, Space::H1, phi).coeffs;
    data.psi = interpolate(mesh, Space::H1, psi).coeffs;
    data.psi0 = interpolate(mesh, Space::H1, psi0).coeffs;
    return data;
}

namespace {

// s = Psi0 + psi*T - u at the nodes, with u extended by zero to the boundary.
VectorXd composition_point(const ThermoMapData& data, const VectorXd& u_full,
                           const VectorXd& T_full) {
    return data.psi0 + data.psi.cwiseProduct(T_full) - u_full;
}

VectorXd apply_scalar(const std::function<double(double)>& f, const VectorXd& s) {
    VectorXd out(s.size());
    for (long i = 0; i < s.size(); ++i)
        out[i] = f(s[i]);
    return out;
}

} // namespace

TemperatureSolve solve_temperature(const ThermoMapData& data, const FeFunction& u,
                                   const FeFunction& T_init, double tol, int max_iter,
                                   PatternLU* lu) {
    const Forms& f = *data.forms;
    const SpMat A = data.k * f.M_h1 + f.K_h1;
    const VectorXd u_full = nodal_values_full(u);

    PatternLU local;
    if (!lu)
        lu = &local;

    // The residual vector holds values of the weak form against the nodal
    // basis, so its natural size is the H1-dual norm |F|_{R^{-1}} with
    // R = M + K the H1 Riesz matrix. Measuring convergence in that norm (and
    // not the plain Euclidean one) also keeps the test meaningful on fine
    // meshes, where rounding noise in A*T - M*g is dominated by highly
    // oscillatory modes that the dual norm damps by 1/lambda_max.
    Eigen::SimplicialLDLT<SpMat> riesz(SpMat(f.M_h1 + f.K_h1));
    if (riesz.info() != Eigen::Success)
        throw InnerSolverFailure("H1 Riesz matrix factorization failed", 0.0);
    const auto dual = [&](const VectorXd& v) {
        return std::sqrt(std::max(0.0, v.dot(riesz.solve(v))));
    };

    // The warm start is a guess, not a candidate answer: a T carried over
    // from a distant iterate can make the absolute residual small while
    // being wildly wrong relative to the (possibly tiny) data of the current
    // equation. The scale of the two sides that cancel guards against that.
    double scale = 1.0;
    const auto residual = [&](const VectorXd& T) {
        const VectorXd s = composition_point(data, u_full, T);
        const VectorXd lhs = A * T;
        const VectorXd rhs = f.M_h1 * apply_scalar(data.g.value, s);
        scale = dual(lhs) + dual(rhs);
        return VectorXd(lhs - rhs);
    };

    VectorXd T = T_init.coeffs;
    VectorXd F = residual(T);
    double res = dual(F);
    double res_scale = scale;
    int it = 0;
    for (; it <= max_iter; ++it) {
        if (res <= tol && res <= 0.1 * res_scale)
            return {FeFunction{data.mesh, Space::H1, std::move(T)}, it};
        if (it == max_iter)
            break;
        const VectorXd s = composition_point(data, u_full, T);
        const VectorXd w = apply_scalar(data.g.nderiv, s).cwiseProduct(data.psi);
        const SpMat J = A - SpMat(f.M_h1 * w.asDiagonal());
        const VectorXd d = lu->solve(J, -F);
        // The direction is a descent direction for |F| (the Jacobian adds
        // -g' psi >= 0 to an SPD matrix), so damping makes the loop globally
        // convergent on steep growth laws; near the solution alpha = 1 wins
        // immediately and the quadratic rate is untouched.
        double alpha = 1.0;
        bool accepted = false;
        for (int t = 0; t < 40; ++t) {
            const VectorXd cand = T + alpha * d;
            const VectorXd Fc = residual(cand);
            if (dual(Fc) <= (1.0 - 1e-4 * alpha) * res) {
                T = cand;
                F = Fc;
                res = dual(F);
                res_scale = scale;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted)
            break;
    }
    // A stall (no step the line search accepts, or the iteration cap) at a
    // residual that is already tiny relative to the data is the rounding
    // floor of A*T - M*g, not a solver failure: the computed T is the best
    // this arithmetic can represent. Only a stall at a substantial relative
    // residual is reported as divergence.
    if (res <= 1e3 * tol && res <= 1e-6 * res_scale)
        return {FeFunction{data.mesh, Space::H1, std::move(T)}, it};
    throw InnerSolverFailure("temperature Newton did not reach tolerance", res);
}

PhiThermoEval phi_thermo(const ThermoMapData& data, const FeFunction& u, const FeFunction& T_init,
                         double tol, int max_iter, PatternLU* lu) {
    TemperatureSolve ts = solve_temperature(data, u, T_init, tol, max_iter, lu);
    const VectorXd prod = data.phi.cwiseProduct(ts.T.coeffs);
    return {FeFunction{data.mesh, Space::H10, restrict_interior(data.mesh, prod)},
            std::move(ts.T), ts.iters};
}

FeFunction gphi_thermo_apply(const ThermoMapData& data, const FeFunction& u, const FeFunction& T,
                             const FeFunction& h, PatternLU* lu) {
    const Forms& f = *data.forms;
    const VectorXd u_full = nodal_values_full(u);
    const VectorXd h_full = nodal_values_full(h);
    const VectorXd s = composition_point(data, u_full, T.coeffs);
    const VectorXd dg = apply_scalar(data.g.nderiv, s);

    const SpMat J = data.k * f.M_h1 + f.K_h1
                    - SpMat(f.M_h1 * dg.cwiseProduct(data.psi).asDiagonal());
    const VectorXd rhs = -(f.M_h1 * dg.cwiseProduct(h_full));

    PatternLU local;
    if (!lu)
        lu = &local;
    const VectorXd xi = lu->solve(J, rhs);
    return {data.mesh, Space::H10, restrict_interior(data.mesh, data.phi.cwiseProduct(xi))};
}

VectorXd phi_semilinear(const NemytskiiFn& b1, const NemytskiiFn& b2, const VectorXd& f_full,
                        const VectorXd& u_full) {
    return apply_scalar(b1.value, u_full).cwiseProduct(apply_scalar(b2.value, u_full)) + f_full;
}

VectorXd gphi_semilinear_weight(const NemytskiiFn& b1, const NemytskiiFn& b2,
                                const VectorXd& u_full) {
    return apply_scalar(b1.value, u_full).cwiseProduct(apply_scalar(b2.nderiv, u_full))
           + apply_scalar(b2.value, u_full).cwiseProduct(apply_scalar(b1.nderiv, u_full));
}

VectorXd gphi_semilinear_apply(const NemytskiiFn& b1, const NemytskiiFn& b2,
                               const VectorXd& u_full, const VectorXd& h_full) {
    return gphi_semilinear_weight(b1, b2, u_full).cwiseProduct(h_full);
}

} // namespace qvi
