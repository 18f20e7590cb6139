#pragma once

// Problem-agnostic drivers for the nonsmooth fixed-point equation u = H(u):
// plain and globalized semismooth Newton, Picard iteration, an
// Armijo-backtracked variant, and Newton on the Moreau-Yosida smoothing with
// fixed penalty. Problems are bundles of closures so the same drivers run on
// scalar toys and on the full FE pipeline.

#include "qvi/fe.hpp"
#include "qvi/newton_system.hpp"
#include "qvi/obstacle.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace qvi {

// Closed ball in the discrete H10 metric.
struct BallSpec {
    FeFunction center;
    double radius = 1.0;
};

// One evaluation of the fixed-point map, with the auxiliary state the step
// assembly reuses and the inner-solver effort it cost.
struct EvalResult {
    FeFunction u_B;
    FeFunction T;         // temperature; empty for problems without one
    ActiveSet active;
    VectorXd theta_bar;   // interior obstacle at the evaluation point
    long t_newton = 0;
    long pfmy = 0;
    long pdas = 0;
};

// Warm-start state chained across evaluations (empty vector = cold).
struct WarmState {
    VectorXd T;
};

struct FixedPointProblem {
    Mesh mesh;
    std::shared_ptr<const Forms> forms;

    std::function<EvalResult(const FeFunction& u, const WarmState&)> evaluate_H;
    std::function<FeFunction(const FeFunction& u_i, const FeFunction& u_eval,
                             const EvalResult& eval, const BallChain& chain)>
        newton_step;

    // Fixed-penalty variants used by smoothed_my_newton; optional otherwise.
    std::function<EvalResult(const FeFunction& u, double rho, const WarmState&)> evaluate_H_rho;
    std::function<FeFunction(const FeFunction& u_i, const EvalResult& eval, double rho)>
        newton_step_rho;

    std::optional<FeFunction> exact; // for error columns
    std::optional<BallSpec> ball;    // localization H o P_B
};

enum class StopCriterion { Residue, IterateNorm };
enum class SolveStatus { Converged, MaxIterations, Stagnated, InnerFailure };
enum class StepType { N, B, FP, LS };

struct NewtonConfig {
    double tol = 1e-10;
    NormKind termination_norm = NormKind::H10;
    StopCriterion criterion = StopCriterion::Residue;

    double tau_star = std::numeric_limits<double>::infinity();
    // Forcing values for outer index i given the previous accepted step size;
    // null selects min(prev step, 2^-i) with 0.5 at i = 0.
    std::function<double(long i, double prev_step_h10)> tau_seq;
    std::function<double(long i, double prev_step_h10)> rho_seq;

    int max_outer = 100;
    bool detect_stagnation = true;
    int stagnation_window = 10;
    double stagnation_improvement = 0.99;
    double cycle_rel_tol = 1e-12;

    int max_linesearch = 30;
    double armijo_c1 = 1e-4;
    double linesearch_beta = 0.5;

    // Inner-solver knobs consumed by the problem builders.
    double epsilon_act = 1e-10;
    double inner_tol = 1e-10;
    double temperature_tol = 1e-12;
    PfmySchedule pfmy;
};

struct IterationRecord {
    long iter = 0;
    StepType step_type = StepType::N;
    double res_h10 = std::numeric_limits<double>::quiet_NaN();
    double res_h1 = std::numeric_limits<double>::quiet_NaN();
    double err_h10 = std::numeric_limits<double>::quiet_NaN();
    double eoc = std::numeric_limits<double>::quiet_NaN(); // error-based; NaN = undefined
    long t_newton = 0;
    long pfmy = 0;
    long pdas = 0;
    long ls_trials = 0;
    bool accepted_newton = false;
    double tau = 0.0;
    double rho_forcing = 0.0;
};

struct SolveReport {
    SolveStatus status = SolveStatus::MaxIterations;
    FeFunction final_iterate;
    std::vector<IterationRecord> records;
    long outer_iterations = 0; // steps actually taken

    double initial_res_h10 = std::numeric_limits<double>::quiet_NaN();
    double initial_res_h1 = std::numeric_limits<double>::quiet_NaN();
    double initial_err_h10 = std::numeric_limits<double>::quiet_NaN();
    long initial_t_newton = 0, initial_pfmy = 0, initial_pdas = 0;

    long total_t_newton = 0, total_pfmy = 0, total_pdas = 0;
    double final_monitored = std::numeric_limits<double>::quiet_NaN();
};

// Radial projection onto the ball and the action of its Newton derivative
// (identity on and inside the ball).
FeFunction project_ball(const Forms& forms, const FeFunction& x, const BallSpec& ball);
FeFunction project_ball_deriv_apply(const Forms& forms, const FeFunction& x, const BallSpec& ball,
                                    const FeFunction& h);
BallChain ball_chain(const Forms& forms, const FeFunction& x, const BallSpec& ball);

// Localized problem H o P_B; evaluation and step composition pick the ball up
// from the problem.
FixedPointProblem localize(FixedPointProblem problem, BallSpec ball);

struct ResidueResult {
    FeFunction r;       // u - H(P_B(u))
    FeFunction x_eval;  // the projected point
    BallChain chain;
    EvalResult eval;
};
ResidueResult residue(const FixedPointProblem& problem, const FeFunction& u,
                      WarmState* warm = nullptr);

SolveReport fixed_point_iteration(const FixedPointProblem& problem, const FeFunction& u0,
                                  const NewtonConfig& cfg);
SolveReport vanilla_ssn(const FixedPointProblem& problem, const FeFunction& u0,
                        const NewtonConfig& cfg);
SolveReport globalized_ssn(const FixedPointProblem& problem, const FeFunction& u0,
                           const NewtonConfig& cfg);
SolveReport linesearch_ssn(const FixedPointProblem& problem, const FeFunction& u0,
                           const NewtonConfig& cfg);
SolveReport smoothed_my_newton(const FixedPointProblem& problem, const FeFunction& u0, double rho,
                               const NewtonConfig& cfg);

// Convergence-order estimates of the H10 residue history (initial residue
// included when present); entry j is log(r_{j+2}/r_{j+1}) / log(r_{j+1}/r_j).
std::vector<double> residue_eocs(const SolveReport& report);

const char* to_string(StepType t);
const char* to_string(SolveStatus s);

} // namespace qvi
