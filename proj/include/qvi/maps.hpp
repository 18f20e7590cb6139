#pragma once

// The inner maps whose fixed points we seek: the thermo-coupled obstacle map
// Phi(u) = phi*T with T solving  k T - Lap T = g(Psi0 + psi*T - u), Neumann bc,
// and the pointwise product map Phi(u) = b1(u) b2(u) + f. Both come with the
// action of their Newton derivatives.

#include "qvi/errors.hpp"
#include "qvi/fe.hpp"

#include <functional>
#include <limits>

namespace qvi {

// Scalar superposition function with a fixed generalized-derivative selection.
struct NemytskiiFn {
    std::function<double(double)> value;
    std::function<double(double)> nderiv;
    bool monotone_nonincreasing = false;
    double lipschitz = std::numeric_limits<double>::quiet_NaN();
};

struct ThermoMapData {
    Mesh mesh;
    std::shared_ptr<const Forms> forms;
    double k = 1.0;
    NemytskiiFn g;
    VectorXd phi;  // nodal values, all nodes; vanishes on the boundary
    VectorXd psi;  // nodal values, all nodes; nonnegative
    VectorXd psi0; // nodal values, all nodes
};

ThermoMapData make_thermo_data(std::shared_ptr<const Forms> forms, double k, NemytskiiFn g,
                               const ScalarField& phi, const ScalarField& psi,
                               const ScalarField& psi0);

struct TemperatureSolve {
    FeFunction T; // H1
    long iters = 0;
};

// Semismooth Newton for the temperature equation; compositions with g are
// nodal. The residual is measured in the Euclidean norm of the assembled
// vector. An optional PatternLU is reused across calls.
TemperatureSolve solve_temperature(const ThermoMapData& data, const FeFunction& u,
                                   const FeFunction& T_init, double tol = 1e-12,
                                   int max_iter = 50, PatternLU* lu = nullptr);

struct PhiThermoEval {
    FeFunction phi_u; // H10: nodal product phi * T
    FeFunction T;     // H1
    long t_iters = 0;
};

PhiThermoEval phi_thermo(const ThermoMapData& data, const FeFunction& u, const FeFunction& T_init,
                         double tol = 1e-12, int max_iter = 50, PatternLU* lu = nullptr);

// Action h -> phi * xi_h of the Newton derivative of the thermo map, with
//   k xi - Lap xi - G_g(s) psi xi = -G_g(s) h,  s = Psi0 + psi*T - u.
// Expects T = solve_temperature(data, u).
FeFunction gphi_thermo_apply(const ThermoMapData& data, const FeFunction& u, const FeFunction& T,
                             const FeFunction& h, PatternLU* lu = nullptr);

// Pointwise-product map of the semilinear problem and its derivative weight
// c = b1(u) G_b2(u) + b2(u) G_b1(u); everything is nodal on full vectors.
VectorXd phi_semilinear(const NemytskiiFn& b1, const NemytskiiFn& b2, const VectorXd& f_full,
                        const VectorXd& u_full);
VectorXd gphi_semilinear_weight(const NemytskiiFn& b1, const NemytskiiFn& b2,
                                const VectorXd& u_full);
VectorXd gphi_semilinear_apply(const NemytskiiFn& b1, const NemytskiiFn& b2,
                               const VectorXd& u_full, const VectorXd& h_full);

} // namespace qvi
