#pragma once

// Solution map S of the upper-obstacle problem: find u in H10 with
//   (grad u, grad v) = (f, v)  subject to  u <= theta nodally,
// evaluated by a path-following Moreau-Yosida penalty (PFMY) and finished by
// primal-dual active set (PDAS) feasibility restoration.

#include "qvi/errors.hpp"
#include "qvi/fe.hpp"

#include <utility>
#include <vector>

namespace qvi {

// Huber-type smoothing of the positive part and its Newton derivative.
// sigma(s) = 0 for s <= 0, s^2/(2 rho) on (0, rho), s - rho/2 beyond.
double huber(double s, double rho);
double huber_deriv(double s, double rho);

struct ObstacleData {
    Mesh mesh;
    std::shared_ptr<const Forms> forms;
    VectorXd b;     // load against the interior basis functions
    VectorXd theta; // nodal upper bound at interior nodes; +inf = unconstrained
};

ObstacleData make_obstacle_data(std::shared_ptr<const Forms> forms, const ScalarField& f,
                                const ScalarField& theta);

struct ActiveSet {
    std::vector<long> active;   // interior dof indices with u = theta, sorted
    std::vector<long> inactive; // complement, sorted
    bool operator==(const ActiveSet&) const = default;
};

// Nodal classification against the bound with tolerance band eps_act.
ActiveSet classify_active(const VectorXd& u, const VectorXd& theta, double eps_act = 1e-10);

struct ObstacleSolution {
    FeFunction u;
    ActiveSet active_set;
    long pfmy_iters = 0;
    long pdas_iters = 0;
    VectorXd lambda; // multiplier b - K u on interior dofs
    std::vector<double> path_infeasibility; // max nodal violation after each rho stage
};

// Smoothed subproblem at one fixed rho: semismooth Newton on
//   K u - b + rho^{-1} M sigma_rho(u - theta) = 0.
// Returns the iterate and the Newton step count. An optional PatternLU reuses
// the symbolic factorization across calls (the Jacobian pattern is fixed).
std::pair<FeFunction, long> pfmy_solve(const ObstacleData& data, double rho,
                                       const FeFunction& u0, double newton_tol = 1e-10,
                                       int max_inner = 50, PatternLU* lu = nullptr);

// Primal-dual active set iteration run to exact set stability.
ObstacleSolution pdas_solve(const ObstacleData& data, const FeFunction& u0, int max_pdas = 100);

std::vector<double> default_rho_schedule(); // 10^0, 10^-1, ..., 10^-8

struct PfmySchedule {
    std::vector<double> rhos = default_rho_schedule();
    double newton_tol = 1e-10;
    int max_inner = 50;
};

// Full evaluation of S: PFMY along the schedule (warm-started), then PDAS.
ObstacleSolution solve_obstacle(const ObstacleData& data, const FeFunction& u0,
                                const PfmySchedule& schedule = {}, PatternLU* lu = nullptr);

} // namespace qvi
