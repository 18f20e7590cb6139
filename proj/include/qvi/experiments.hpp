#pragma once

// Canned problem instances for the four study cases (two 1D mould couplings,
// the 2D pyramid mould, a semilinear source VI), their closed-form reference
// quantities, EOC computation, and a one-call experiment runner that feeds the
// table writers.

#include "qvi/newton.hpp"

#include <optional>
#include <string>
#include <vector>

namespace qvi {

enum class Algorithm { Alg1, Alg2, C1, C2, C4 };

// Lowercase names: alg1, alg2, c1, c2, c4. Throws ConfigError otherwise.
Algorithm algorithm_from_string(const std::string& name);
const char* to_string(Algorithm a);

// A built problem plus whatever closed-form references the case has. The
// primary exact membrane state (when known) is already stored in
// problem.exact; the interpolants here are the auxiliary ones.
struct ExperimentProblem {
    FixedPointProblem problem;
    std::optional<FeFunction> exact_T;  // interpolated exact temperature
    std::optional<FeFunction> exact_u2; // second membrane state (test2 only)
    std::optional<FeFunction> u0_poisson; // (-Lap)^{-1} f, for the poisson_f start
};

// 1D coupling with growth law a1 + arctan(min((1-s)/2, 1-s)/a2) and exact
// solution sin(pi x) sitting entirely on the kink of the growth law. The
// derivative selection at the kink is the branch std::min picks at a tie,
// (1-s)/2. Requires a1, a2 > 0.
ExperimentProblem test1_problem(double alpha1, double alpha2, long n_cells);

// 1D coupling with growth law (4/a1) min(0,s)^2 and the two exact states
// u = 0 and u = a1 sin(pi x). Requires a1 > 0, a2 >= 1.
ExperimentProblem test2_problem(double alpha1, double alpha2, long n_cells);

// 2D pyramid mould under constant pressure 25. Requires n_cells >= 4.
ExperimentProblem test3_problem(long n_cells);

// 1D semilinear source VI: u = S0(b1(u) b2(u) + f) with b1 = max(0,.),
// b2 = s + cos s, fixed unit obstacle. Requires n_cells >= 4.
ExperimentProblem test4_problem(long n_cells);

// One-interior-dof contraction H(x) = x/2 for smoke tests; starts at
// coefficient one regardless of the configured initial guess.
ExperimentProblem toy_problem();

// Closed-form reference constants of the study cases.
double test1_gamma(double alpha1, double alpha2);        // (1+pi)/(pi a1 a2)
double test2_mr(double alpha1, double R);                // R/2 + 10(1+pi)/(3 pi a1) R^2
double test2_critical_radius(double alpha1, double alpha2);
double test2_u2_norm(double alpha1);                     // a1 pi / sqrt(2)
double test3_gamma();                                    // (1+pi)/5

// EOC_i = log(e_i/e_{i-1}) / log(e_{i-1}/e_{i-2}) for i >= 2. Requires at
// least three strictly positive entries (invalid_argument otherwise); entries
// whose denominator log vanishes (within 1e-15) come back as NaN.
std::vector<double> compute_eoc(const std::vector<double>& errors);

struct ExperimentSpec {
    std::string which = "test3"; // test1 | test2 | test3 | test4 | toy
    double alpha1 = 1.0;
    double alpha2 = 1.0;
    long n_cells = 64;
    std::optional<double> R; // radius of the origin-centered localization ball
    double rho = 1e-4;       // smoothing parameter (c2 runs only)
    std::string u0 = "zero"; // zero | poisson_f | interp_u2 | quad100
    Algorithm algorithm = Algorithm::Alg2;
    std::optional<double> tol; // unset = the case's published tolerance
    long max_outer = 100;
    bool detect_stagnation = true;
};

// The case's published termination tolerance and residue norm.
double default_tol(const std::string& which);
NormKind experiment_norm(const std::string& which);

// One row per outer iteration, ready for CSV (NaN = empty field).
struct IterateRow {
    long iter = 0;
    StepType step_type = StepType::N;
    double res_h10, res_h1, err_h10, eoc;
    long t_newton = 0, pfmy = 0, pdas = 0, ls_trials = 0;
};

struct ExperimentResult {
    SolveReport report;
    std::vector<IterateRow> rows;
};

std::vector<IterateRow> iterate_rows(const SolveReport& report);

// Builds the problem, applies the localization ball and initial guess, runs
// the selected algorithm, and packages the per-iteration rows. Invalid
// parameter combinations throw ConfigError.
ExperimentResult run_experiment(const ExperimentSpec& spec);

} // namespace qvi
