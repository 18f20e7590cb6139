#pragma once

// Coupled linear systems behind one Newton step on the residue u - S(Phi(u)).
// The exact variant couples the state update, the temperature linearization,
// and an inactive-set correction; the smoothed variant replaces the active-set
// block by a Moreau-Yosida penalty row. A third assembler covers the
// semilinear source map, which has no temperature block.

#include "qvi/fe.hpp"
#include "qvi/maps.hpp"
#include "qvi/obstacle.hpp"

namespace qvi {

// Directional derivative of the radial ball projection in the H10 metric,
// h -> scale * (h - v (v' K h)) with v normalized so that v' K v = 1.
// An empty v means the projection was the identity.
struct BallChain {
    double scale = 1.0;
    VectorXd v;
    bool trivial() const { return v.size() == 0; }
};

// Blocks of the step system over the stacked unknown [delta_u; xi; mu].
// delta_u lives on interior nodes, xi on all nodes, mu on interior nodes with
// mu = 0 enforced on the active set. The semilinear variant has an empty xi
// block; the smoothed variant replaces mu by the penalty unknown w and skips
// the reduction.
struct NewtonStepSystem {
    Mesh mesh;
    std::shared_ptr<const Forms> forms;
    ActiveSet active;
    bool smoothed = false;

    SpMat K11, K12, K13;
    SpMat K21, K22, K23;
    SpMat K31, K32, K33;
    VectorXd rhs1, rhs2, rhs3;

    BallChain ball; // rank-one factor carried by block (2,1)
};

// Exact step system. T_i is the temperature at the evaluation point, u_B the
// obstacle solve at the same point, and active its active set against the
// bound Phi0 + phi*T_i. When a ball projection is in play, u_eval is the
// projected iterate (compositions use it) while u_i only enters the
// right-hand side.
NewtonStepSystem assemble_active_system(const ThermoMapData& thermo, const FeFunction& u_i,
                                        const FeFunction& T_i, const FeFunction& u_B,
                                        const ActiveSet& active,
                                        const FeFunction* u_eval = nullptr,
                                        const BallChain* ball = nullptr);

// Smoothed comparison system at penalty parameter rho; theta_bar is the
// current obstacle Phi0 + phi*T_i on interior nodes.
NewtonStepSystem assemble_smoothed_system(const ThermoMapData& thermo, const FeFunction& u_i,
                                          const FeFunction& T_i, const FeFunction& u_B,
                                          const VectorXd& theta_bar, double rho);

// Step system for the pointwise source map b1(u) b2(u) + f with a fixed
// obstacle; the load derivative couples straight into the inactive-set block.
NewtonStepSystem assemble_semilinear_system(std::shared_ptr<const Forms> forms,
                                            const NemytskiiFn& b1, const NemytskiiFn& b2,
                                            const FeFunction& u_i, const FeFunction& u_B,
                                            const ActiveSet& active);

struct NewtonStepSolution {
    FeFunction delta_u; // H10
    FeFunction xi;      // H1; identically zero for the semilinear system
    FeFunction mu;      // H10; zero on active nodes (the unknown w when smoothed)
};

// Monolithic sparse solve of the reduced system.
NewtonStepSolution solve_newton_step(const NewtonStepSystem& sys);

} // namespace qvi
