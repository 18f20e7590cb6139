#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "qvi/fe.hpp"
#include "qvi/maps.hpp"
#include "qvi/newton.hpp"
#include "qvi/newton_system.hpp"
#include "qvi/obstacle.hpp"

#include <cmath>
#include <memory>
#include <random>

using namespace qvi;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Scalar toy on the one-interior-dof mesh: |v|_H10 = 2 |coeff|. Every
// evaluation reports one T-Newton tick so the drivers' evaluation counting is
// observable.
FixedPointProblem make_toy(std::function<double(double)> H, std::function<double(double)> dH) {
    const Mesh mesh = build_mesh(1, 2);
    FixedPointProblem p;
    p.mesh = mesh;
    p.forms = build_forms(mesh);
    p.evaluate_H = [mesh, H](const FeFunction& u, const WarmState&) {
        EvalResult e;
        e.u_B = FeFunction{mesh, Space::H10, VectorXd::Constant(1, H(u.coeffs[0]))};
        e.t_newton = 1;
        return e;
    };
    p.newton_step = [mesh, dH](const FeFunction& u_i, const FeFunction& u_eval,
                               const EvalResult& ev, const BallChain& chain) {
        double g = dH(u_eval.coeffs[0]);
        // radial projection derivative kills the single direction outside the ball
        if (!chain.trivial()) g *= chain.scale * (1.0 - 4.0 * chain.v[0] * chain.v[0]);
        const double r = u_i.coeffs[0] - ev.u_B.coeffs[0];
        return FeFunction{mesh, Space::H10, VectorXd::Constant(1, -r / (1.0 - g))};
    };
    p.exact = FeFunction{mesh, Space::H10, VectorXd::Zero(1)};
    return p;
}

FeFunction toy_point(const FixedPointProblem& p, double coeff) {
    return FeFunction{p.mesh, Space::H10, VectorXd::Constant(1, coeff)};
}

NemytskiiFn growth_arctan(double a1, double a2) {
    NemytskiiFn g;
    g.value = [a1, a2](double s) {
        const double m = std::min(0.5 * (1.0 - s), 1.0 - s);
        return a1 + std::atan(m / a2);
    };
    g.nderiv = [a2](double s) {
        const double m = std::min(0.5 * (1.0 - s), 1.0 - s);
        const double mp = s <= 1.0 ? -0.5 : -1.0;
        return mp / (a2 * (1.0 + (m / a2) * (m / a2)));
    };
    g.monotone_nonincreasing = true;
    return g;
}

// Thermoforming fixed-point problem wired through the temperature solve, the
// obstacle solve, and the coupled step system.
FixedPointProblem make_mold_fp(std::shared_ptr<const Forms> forms, double a1, double a2) {
    const Mesh mesh = forms->mesh;
    const auto scaled_sine = [a1](double x, double) { return std::sin(kPi * x) / a1; };
    ThermoMapData thermo = make_thermo_data(forms, 1.0, growth_arctan(a1, a2), scaled_sine,
                                            scaled_sine, [](double, double) { return 1.0; });
    const VectorXd phi0_full = interpolate(mesh, Space::H1, [](double x, double) {
                                   return std::max(0.0, std::abs(x - 0.5) - 0.25);
                               }).coeffs;
    const VectorXd load = assemble_load(mesh, Space::H10, [](double x, double) {
        return kPi * kPi * std::sin(kPi * x)
               + 100.0 * std::max(0.0, -std::abs(x - 0.625) + 0.125);
    });

    FixedPointProblem p;
    p.mesh = mesh;
    p.forms = forms;
    p.evaluate_H = [mesh, forms, thermo, phi0_full, load](const FeFunction& u,
                                                          const WarmState& warm) {
        FeFunction T0{mesh, Space::H1,
                      warm.T.size() > 0 ? warm.T : VectorXd::Zero(mesh.n_nodes())};
        const TemperatureSolve ts = solve_temperature(thermo, u, T0);
        const VectorXd theta_full = phi0_full + thermo.phi.cwiseProduct(ts.T.coeffs);
        const ObstacleData od{mesh, forms, load, restrict_interior(mesh, theta_full)};
        const ObstacleSolution sol = solve_obstacle(od, u);
        EvalResult e;
        e.u_B = sol.u;
        e.T = ts.T;
        e.active = sol.active_set;
        e.theta_bar = od.theta;
        e.t_newton = ts.iters;
        e.pfmy = sol.pfmy_iters;
        e.pdas = sol.pdas_iters;
        return e;
    };
    p.newton_step = [thermo](const FeFunction& u_i, const FeFunction& u_eval,
                             const EvalResult& ev, const BallChain& chain) {
        const NewtonStepSystem sys = assemble_active_system(
            thermo, u_i, ev.T, ev.u_B, ev.active, &u_eval, chain.trivial() ? nullptr : &chain);
        return solve_newton_step(sys).delta_u;
    };
    return p;
}

} // namespace

TEST_CASE("residue is the gap to the mapped projection") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * x; },
                                   [](double) { return 0.5; });

    SUBCASE("plain point") {
        const ResidueResult rr = residue(p, toy_point(p, 0.8));
        CHECK(rr.r.coeffs[0] == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(rr.x_eval.coeffs[0] == 0.8);
        CHECK(rr.chain.trivial());
    }
    SUBCASE("at the fixed point the residue is at the bit floor") {
        const ResidueResult rr = residue(p, toy_point(p, 0.0));
        CHECK(p.forms->h10_int(rr.r.coeffs) <= 1e-13);
    }
    SUBCASE("localized residue maps the projected point") {
        const FixedPointProblem lp =
            localize(p, BallSpec{toy_point(p, 0.0), 1.0});
        const ResidueResult rr = residue(lp, toy_point(p, 1.0)); // |u|_H10 = 2
        CHECK(rr.x_eval.coeffs[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(rr.r.coeffs[0] == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(!rr.chain.trivial());
        CHECK(rr.chain.scale == doctest::Approx(0.5).epsilon(1e-15));
    }
}

TEST_CASE("picard iteration on the halving toy stops after exactly twenty steps") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * x; },
                                   [](double) { return 0.5; });
    const FeFunction u0 = toy_point(p, 0.5); // |u0|_H10 = 1

    NewtonConfig cfg;
    cfg.tol = std::pow(2.0, -20);

    SUBCASE("residue criterion") {
        const SolveReport rep = fixed_point_iteration(p, u0, cfg);
        REQUIRE(rep.status == SolveStatus::Converged);
        REQUIRE(rep.outer_iterations == 20);
        for (const auto& rec : rep.records) {
            CHECK(rec.step_type == StepType::FP);
            CHECK(rec.res_h10 == doctest::Approx(std::pow(2.0, -double(rec.iter))).epsilon(1e-14));
        }
        CHECK(rep.final_monitored == doctest::Approx(cfg.tol).epsilon(1e-14));
        // one evaluation per step, none up front
        CHECK(rep.total_t_newton == 20);
        // linear convergence shows up as order one in the error-based column
        CHECK(rep.records[10].eoc == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("iterate-norm criterion") {
        cfg.criterion = StopCriterion::IterateNorm;
        const SolveReport rep = fixed_point_iteration(p, u0, cfg);
        CHECK(rep.status == SolveStatus::Converged);
        CHECK(rep.outer_iterations == 20);
    }
    SUBCASE("an initial point already inside the iterate-norm tolerance costs nothing") {
        cfg.criterion = StopCriterion::IterateNorm;
        const SolveReport rep = fixed_point_iteration(p, toy_point(p, 0.0), cfg);
        CHECK(rep.status == SolveStatus::Converged);
        CHECK(rep.outer_iterations == 0);
        CHECK(rep.total_t_newton == 0);
    }
}

TEST_CASE("newton solves an affine toy in one step") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * x; },
                                   [](double) { return 0.5; });
    NewtonConfig cfg;
    cfg.tol = 1e-13;
    const SolveReport rep = vanilla_ssn(p, toy_point(p, 0.7), cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    REQUIRE(rep.outer_iterations == 1);
    CHECK(rep.records[0].step_type == StepType::N);
    CHECK(rep.records[0].accepted_newton);
    CHECK(rep.records[0].res_h10 <= 1e-15);
    CHECK(rep.initial_res_h10 == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(rep.total_t_newton == 2); // the initial evaluation plus one per step
    CHECK(rep.final_iterate.coeffs[0] == doctest::Approx(0.0));
}

TEST_CASE("newton is superlinear on a smooth contractive toy") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * std::tanh(x); },
                                   [](double x) { return 0.5 / std::pow(std::cosh(x), 2); });
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const SolveReport rep = vanilla_ssn(p, toy_point(p, 1.5), cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    REQUIRE(rep.outer_iterations >= 3);
    CHECK(rep.outer_iterations <= 10);
    const std::vector<double> eocs = residue_eocs(rep);
    REQUIRE(!eocs.empty());
    CHECK(eocs.back() >= 1.5);
}

TEST_CASE("globalization falls back to the picard candidate when newton overshoots") {
    FixedPointProblem p = make_toy([](double x) { return x * x; },
                                   [](double x) { return 2.0 * x; });
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const SolveReport rep = globalized_ssn(p, toy_point(p, 0.4), cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    REQUIRE(!rep.records.empty());
    // first newton candidate lands at -0.8 with a residue ten times worse
    CHECK(rep.records[0].step_type == StepType::B);
    CHECK(!rep.records[0].accepted_newton);
    double prev = rep.initial_res_h10;
    for (const auto& rec : rep.records) {
        CHECK(rec.res_h10 <= prev * (1.0 + 1e-12));
        prev = rec.res_h10;
    }
    // two fresh evaluations per outer iteration on top of the initial one
    CHECK(rep.total_t_newton == 1 + 2 * rep.outer_iterations);
}

TEST_CASE("globalized iterations obey the contraction bound") {
    const double gamma = 0.5, lambda = 0.5 * (gamma + 1.0);
    FixedPointProblem p = make_toy([](double x) { return 0.5 * std::tanh(x); },
                                   [](double x) { return 0.5 / std::pow(std::cosh(x), 2); });
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const SolveReport rep = globalized_ssn(p, toy_point(p, 1.5), cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    double prev = rep.initial_res_h10;
    for (const auto& rec : rep.records) {
        CHECK(rec.res_h10 <= lambda * prev * (1.0 + 1e-12));
        prev = rec.res_h10;
    }
    const long bound =
        long(std::ceil(std::log(cfg.tol / rep.initial_res_h10) / std::log(lambda)));
    CHECK(rep.outer_iterations <= bound);
    // on this toy the newton candidate wins every round
    for (const auto& rec : rep.records) CHECK(rec.step_type == StepType::N);
}

TEST_CASE("armijo linesearch backtracks an overshooting direction") {
    FixedPointProblem p = make_toy([](double x) { return x * x; },
                                   [](double x) { return 2.0 * x; });
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const SolveReport rep = linesearch_ssn(p, toy_point(p, 0.4), cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    REQUIRE(rep.outer_iterations >= 2);
    CHECK(rep.records[0].step_type == StepType::LS);
    CHECK(rep.records[0].ls_trials == 3); // alpha = 1 and 1/2 rejected, 1/4 accepted
    CHECK(rep.records[0].res_h10 == doctest::Approx(0.18).epsilon(1e-12));
    CHECK(rep.records[1].step_type == StepType::N);
    CHECK(rep.records[1].ls_trials == 1);
    long trials = 0;
    for (const auto& rec : rep.records) trials += rec.ls_trials;
    CHECK(rep.total_t_newton == 1 + trials); // every trial is one evaluation
}

TEST_CASE("an exhausted linesearch reports stagnation") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * x; },
                                   [](double) { return 0.5; });
    // sabotage: an ascent direction no step size can rescue
    p.newton_step = [mesh = p.mesh](const FeFunction& u_i, const FeFunction&, const EvalResult& ev,
                                    const BallChain&) {
        const double r = u_i.coeffs[0] - ev.u_B.coeffs[0];
        return FeFunction{mesh, Space::H10, VectorXd::Constant(1, 5.0 * r)};
    };
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const SolveReport rep = linesearch_ssn(p, toy_point(p, 0.8), cfg);
    REQUIRE(rep.status == SolveStatus::Stagnated);
    CHECK(rep.final_iterate.coeffs[0] == 0.8);
    REQUIRE(!rep.records.empty());
    CHECK(rep.records.back().step_type == StepType::LS);
    CHECK(rep.records.back().ls_trials == cfg.max_linesearch + 1);
    CHECK(rep.total_t_newton == 1 + cfg.max_linesearch + 1);
}

TEST_CASE("cycles and plateaus are flagged as stagnation") {
    SUBCASE("a two-cycle trips the detector at once") {
        FixedPointProblem p = make_toy([](double x) { return 1.0 - x; },
                                       [](double) { return -1.0; });
        p.exact.reset(); // fixed point of this toy is 0.25 in coefficients, unused
        NewtonConfig cfg;
        cfg.tol = 1e-13;
        const SolveReport rep = fixed_point_iteration(p, toy_point(p, 0.2), cfg);
        CHECK(rep.status == SolveStatus::Stagnated);
        CHECK(rep.outer_iterations == 4);
    }
    SUBCASE("decay slower than the window factor trips the detector") {
        FixedPointProblem p = make_toy([](double x) { return 0.999995 * x; },
                                       [](double) { return 0.999995; });
        NewtonConfig cfg;
        cfg.tol = 1e-30;
        const SolveReport rep = fixed_point_iteration(p, toy_point(p, 0.5), cfg);
        CHECK(rep.status == SolveStatus::Stagnated);
        CHECK(rep.outer_iterations == cfg.stagnation_window + 1);
    }
    SUBCASE("with the detector off the iteration cap decides") {
        FixedPointProblem p = make_toy([](double x) { return 1.0 - x; },
                                       [](double) { return -1.0; });
        NewtonConfig cfg;
        cfg.tol = 1e-13;
        cfg.detect_stagnation = false;
        cfg.max_outer = 6;
        const SolveReport rep = fixed_point_iteration(p, toy_point(p, 0.2), cfg);
        CHECK(rep.status == SolveStatus::MaxIterations);
        CHECK(rep.outer_iterations == 6);
    }
}

TEST_CASE("inner failures surface in the report") {
    auto calls = std::make_shared<int>(0);
    FixedPointProblem p = make_toy([](double x) { return 0.5 * std::tanh(x); },
                                   [](double x) { return 0.5 / std::pow(std::cosh(x), 2); });
    const auto good = p.evaluate_H;
    p.evaluate_H = [calls, good](const FeFunction& u, const WarmState& w) {
        if (++*calls >= 3) throw InnerSolverFailure("synthetic inner breakdown", 1.0);
        return good(u, w);
    };
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const SolveReport rep = vanilla_ssn(p, toy_point(p, 1.5), cfg);
    CHECK(rep.status == SolveStatus::InnerFailure);
    CHECK(rep.outer_iterations == 1);
}

TEST_CASE("radial projection onto the ball") {
    const Mesh mesh = build_mesh(1, 64);
    const auto forms = build_forms(mesh);
    const FeFunction zero{mesh, Space::H10, VectorXd::Zero(mesh.n_interior())};

    SUBCASE("inside the ball the projection and its derivative are the identity") {
        FeFunction x = interpolate(mesh, Space::H10,
                                   [](double t, double) { return std::sin(kPi * t); });
        x.coeffs *= 0.3 / forms->h10_int(x.coeffs);
        const BallSpec ball{zero, 1.0};
        const FeFunction px = project_ball(*forms, x, ball);
        CHECK((px.coeffs - x.coeffs).norm() == 0.0);
        FeFunction h = interpolate(mesh, Space::H10,
                                   [](double t, double) { return t * (1.0 - t); });
        const FeFunction gh = project_ball_deriv_apply(*forms, x, ball, h);
        CHECK((gh.coeffs - h.coeffs).norm() == 0.0);
        CHECK(ball_chain(*forms, x, ball).trivial());
    }
    SUBCASE("a point at twice the radius is halved") {
        FeFunction x = interpolate(mesh, Space::H10, [](double t, double) {
            return std::sin(kPi * t) + 0.2 * std::sin(3.0 * kPi * t);
        });
        x.coeffs *= 2.0 / forms->h10_int(x.coeffs);
        const FeFunction px = project_ball(*forms, x, BallSpec{zero, 1.0});
        CHECK((px.coeffs - 0.5 * x.coeffs).norm() <= 1e-13 * x.coeffs.norm());
        CHECK(forms->h10_int(px.coeffs) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("the projection is non-expansive") {
        std::mt19937 rng(2801);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        const Mesh m32 = build_mesh(1, 32);
        const auto f32 = build_forms(m32);
        const FeFunction c{m32, Space::H10, VectorXd::Zero(m32.n_interior())};
        const BallSpec ball{c, 1.0};
        for (int trial = 0; trial < 40; ++trial) {
            FeFunction a{m32, Space::H10, VectorXd::Zero(m32.n_interior())};
            FeFunction b = a;
            for (long i = 0; i < a.coeffs.size(); ++i) {
                a.coeffs[i] = unif(rng);
                b.coeffs[i] = unif(rng);
            }
            a.coeffs *= (0.2 + 2.8 * std::abs(unif(rng))) / f32->h10_int(a.coeffs);
            b.coeffs *= (0.2 + 2.8 * std::abs(unif(rng))) / f32->h10_int(b.coeffs);
            const FeFunction pa = project_ball(*f32, a, ball);
            const FeFunction pb = project_ball(*f32, b, ball);
            CHECK(f32->h10_int(pa.coeffs - pb.coeffs) <=
                  (1.0 + 1e-12) * f32->h10_int(a.coeffs - b.coeffs));
        }
    }
    SUBCASE("the derivative action is bounded by min(1, r/d)") {
        std::mt19937 rng(607);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        const BallSpec ball{zero, 1.0};
        for (int trial = 0; trial < 40; ++trial) {
            FeFunction x{mesh, Space::H10, VectorXd::Zero(mesh.n_interior())};
            FeFunction h = x;
            for (long i = 0; i < x.coeffs.size(); ++i) {
                x.coeffs[i] = unif(rng);
                h.coeffs[i] = unif(rng);
            }
            x.coeffs *= (0.3 + 2.5 * std::abs(unif(rng))) / forms->h10_int(x.coeffs);
            const double d = forms->h10_int(x.coeffs);
            const FeFunction gh = project_ball_deriv_apply(*forms, x, ball, h);
            CHECK(forms->h10_int(gh.coeffs) <=
                  std::min(1.0, ball.radius / d) * (1.0 + 1e-12) * forms->h10_int(h.coeffs));
        }
    }
    SUBCASE("finite differences confirm the derivative outside the ball") {
        const Mesh m16 = build_mesh(1, 16);
        const auto f16 = build_forms(m16);
        const FeFunction c{m16, Space::H10, VectorXd::Zero(m16.n_interior())};
        const BallSpec ball{c, 1.0};
        std::mt19937 rng(99);
        std::uniform_real_distribution<double> unif(-1.0, 1.0);
        for (int trial = 0; trial < 10; ++trial) {
            FeFunction x{m16, Space::H10, VectorXd::Zero(m16.n_interior())};
            FeFunction h = x;
            for (long i = 0; i < x.coeffs.size(); ++i) {
                x.coeffs[i] = unif(rng);
                h.coeffs[i] = unif(rng);
            }
            x.coeffs *= 2.0 / f16->h10_int(x.coeffs);
            h.coeffs /= f16->h10_int(h.coeffs);
            const double eps = 1e-6;
            FeFunction xp = x, xm = x;
            xp.coeffs += eps * h.coeffs;
            xm.coeffs -= eps * h.coeffs;
            const VectorXd fd =
                (project_ball(*f16, xp, ball).coeffs - project_ball(*f16, xm, ball).coeffs) /
                (2.0 * eps);
            const FeFunction gh = project_ball_deriv_apply(*f16, x, ball, h);
            CHECK(f16->h10_int(fd - gh.coeffs) <= 1e-6);
        }
    }
}

TEST_CASE("localization leaves an interior run untouched and rejects bad balls") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * std::tanh(x); },
                                   [](double x) { return 0.5 / std::pow(std::cosh(x), 2); });
    NewtonConfig cfg;
    cfg.tol = 1e-12;

    SUBCASE("a huge ball reproduces the unwrapped run bit for bit") {
        const SolveReport plain = vanilla_ssn(p, toy_point(p, 1.5), cfg);
        const FixedPointProblem lp = localize(p, BallSpec{toy_point(p, 0.0), 1e6});
        const SolveReport wrapped = vanilla_ssn(lp, toy_point(p, 1.5), cfg);
        REQUIRE(plain.records.size() == wrapped.records.size());
        for (size_t i = 0; i < plain.records.size(); ++i) {
            CHECK(plain.records[i].res_h10 == wrapped.records[i].res_h10);
            CHECK(plain.records[i].res_h1 == wrapped.records[i].res_h1);
        }
        CHECK(plain.final_iterate.coeffs == wrapped.final_iterate.coeffs);
    }
    SUBCASE("nonpositive radius is rejected") {
        CHECK_THROWS_AS(localize(p, BallSpec{toy_point(p, 0.0), 0.0}), ConfigError);
        CHECK_THROWS_AS(localize(p, BallSpec{toy_point(p, 0.0), -1.0}), ConfigError);
    }
    SUBCASE("a center of the wrong size is rejected") {
        FeFunction bad{p.mesh, Space::H10, VectorXd::Zero(3)};
        CHECK_THROWS_AS(localize(p, BallSpec{bad, 1.0}), ConfigError);
    }
}

TEST_CASE("localized picard maps the projected point") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * x; },
                                   [](double) { return 0.5; });
    const FixedPointProblem lp = localize(p, BallSpec{toy_point(p, 0.0), 1.0});
    NewtonConfig cfg;
    cfg.tol = 1e-13;
    cfg.max_outer = 2;
    cfg.detect_stagnation = false;
    const SolveReport rep = fixed_point_iteration(lp, toy_point(p, 4.0), cfg);
    REQUIRE(rep.status == SolveStatus::MaxIterations);
    REQUIRE(rep.outer_iterations == 2);
    // u0 = 4 projects to 0.5, so u1 = 0.25 (inside the ball), u2 = 0.125
    CHECK(rep.records[0].res_h10 == doctest::Approx(7.5).epsilon(1e-14));
    CHECK(rep.final_iterate.coeffs[0] == doctest::Approx(0.125).epsilon(1e-14));
}

TEST_CASE("the smoothed driver pins the penalty") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * x; },
                                   [](double) { return 0.5; });
    auto seen = std::make_shared<std::vector<double>>();
    p.evaluate_H_rho = [mesh = p.mesh, seen](const FeFunction& u, double rho, const WarmState&) {
        seen->push_back(rho);
        EvalResult e;
        e.u_B = FeFunction{mesh, Space::H10, VectorXd::Constant(1, 0.5 * u.coeffs[0])};
        e.pfmy = 1;
        return e;
    };
    p.newton_step_rho = [mesh = p.mesh](const FeFunction& u_i, const EvalResult& ev, double) {
        const double r = u_i.coeffs[0] - ev.u_B.coeffs[0];
        return FeFunction{mesh, Space::H10, VectorXd::Constant(1, -2.0 * r)};
    };
    NewtonConfig cfg;
    cfg.tol = 1e-13;

    SUBCASE("penalty reaches every evaluation and counters flow") {
        const SolveReport rep = smoothed_my_newton(p, toy_point(p, 0.7), 0.125, cfg);
        REQUIRE(rep.status == SolveStatus::Converged);
        CHECK(rep.outer_iterations == 1);
        for (double r : *seen) CHECK(r == 0.125);
        CHECK(rep.total_pfmy == 2);
        CHECK(rep.total_t_newton == 0);
    }
    SUBCASE("misuse is rejected") {
        CHECK_THROWS_AS(smoothed_my_newton(p, toy_point(p, 0.7), 0.0, cfg), ConfigError);
        FixedPointProblem lp = localize(p, BallSpec{toy_point(p, 0.0), 1.0});
        CHECK_THROWS_AS(smoothed_my_newton(lp, toy_point(p, 0.7), 0.1, cfg), ConfigError);
        FixedPointProblem bare = make_toy([](double x) { return 0.5 * x; },
                                          [](double) { return 0.5; });
        CHECK_THROWS_AS(smoothed_my_newton(bare, toy_point(p, 0.7), 0.1, cfg), ConfigError);
    }
}

TEST_CASE("reports are deterministic") {
    FixedPointProblem p = make_toy([](double x) { return 0.5 * std::tanh(x); },
                                   [](double x) { return 0.5 / std::pow(std::cosh(x), 2); });
    NewtonConfig cfg;
    cfg.tol = 1e-12;
    const SolveReport a = globalized_ssn(p, toy_point(p, 1.5), cfg);
    const SolveReport b = globalized_ssn(p, toy_point(p, 1.5), cfg);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].res_h10 == b.records[i].res_h10);
        CHECK(a.records[i].res_h1 == b.records[i].res_h1);
        CHECK(a.records[i].err_h10 == b.records[i].err_h10);
        CHECK(a.records[i].step_type == b.records[i].step_type);
    }
    CHECK(a.final_iterate.coeffs == b.final_iterate.coeffs);
}

TEST_CASE("thermoforming: plain newton from zero is superlinear") {
    const Mesh mesh = build_mesh(1, 64);
    const auto forms = build_forms(mesh);
    const FixedPointProblem p = make_mold_fp(forms, 1e-2, 1e-2);
    const FeFunction u0{mesh, Space::H10, VectorXd::Zero(mesh.n_interior())};
    NewtonConfig cfg;
    cfg.tol = 1e-10;
    const SolveReport rep = vanilla_ssn(p, u0, cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    REQUIRE(rep.outer_iterations >= 2);
    CHECK(rep.outer_iterations <= 15);
    // every step collapses the residue far beyond any linear rate
    double prev = rep.initial_res_h10;
    for (const auto& rec : rep.records) {
        CHECK(rec.res_h10 <= 0.05 * prev);
        prev = rec.res_h10;
    }
    if (rep.outer_iterations >= 4) {
        const std::vector<double> eocs = residue_eocs(rep);
        REQUIRE(!eocs.empty());
        CHECK(eocs.back() >= 1.5);
    }
    CHECK(rep.total_pfmy > 0);
    CHECK(rep.total_t_newton > 0);
    for (const auto& rec : rep.records) CHECK(rec.step_type == StepType::N);
}

TEST_CASE("thermoforming: the globalized method always keeps the newton candidate") {
    const Mesh mesh = build_mesh(1, 64);
    const auto forms = build_forms(mesh);
    const FixedPointProblem p = make_mold_fp(forms, 1.0 + 1.0 / kPi, 1.01);
    const FeFunction u0{mesh, Space::H10, VectorXd::Zero(mesh.n_interior())};
    NewtonConfig cfg;
    cfg.tol = 1e-10;
    const SolveReport rep = globalized_ssn(p, u0, cfg);
    REQUIRE(rep.status == SolveStatus::Converged);
    for (const auto& rec : rep.records) {
        CHECK(rec.step_type == StepType::N);
        CHECK(rec.accepted_newton);
    }
    // contraction at rate (gamma + 1)/2 with gamma = 1/1.01
    const double lambda = 0.5 * (1.0 / 1.01 + 1.0);
    double prev = rep.initial_res_h10;
    for (const auto& rec : rep.records) {
        CHECK(rec.res_h10 <= lambda * prev * (1.0 + 1e-10));
        prev = rec.res_h10;
    }
    const SolveReport again = globalized_ssn(p, u0, cfg);
    CHECK(rep.final_iterate.coeffs == again.final_iterate.coeffs);
}
