#include "qvi/newton.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace qvi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double norm_int(const Forms& f, const VectorXd& v, NormKind kind) {
    switch (kind) {
        case NormKind::L2: return f.l2_int(v);
        case NormKind::H10: return f.h10_int(v);
        case NormKind::H1: return f.h1_int(v);
    }
    return 0.0;
}

double default_forcing(long i, double prev_step) {
    if (i <= 0) return 0.5;
    return std::min(prev_step, std::pow(2.0, -double(i)));
}

// Order estimate from the last three entries of a positive history.
double eoc_triple(double a, double b, double c) {
    if (!(a > 0.0) || !(b > 0.0) || !(c > 0.0)) return kNaN;
    const double den = std::log(b / a);
    if (std::abs(den) < 1e-15) return kNaN;
    return std::log(c / b) / den;
}

// Flags a run as stuck: either the monitored value settles into a 2-cycle, or
// the best value of the last `window` steps no longer beats the best earlier
// value by the required factor.
class StagnationMonitor {
public:
    void push(double x) { v_.push_back(x); }
    double last() const { return v_.empty() ? kNaN : v_.back(); }

    bool stagnated(const NewtonConfig& cfg) const {
        const long n = long(v_.size());
        if (n >= 4) {
            auto near = [&](double a, double b) {
                return std::abs(a - b) <=
                       cfg.cycle_rel_tol * std::max({std::abs(a), std::abs(b), 1e-300});
            };
            if (near(v_[n - 1], v_[n - 3]) && near(v_[n - 2], v_[n - 4])) return true;
        }
        const long w = cfg.stagnation_window;
        if (n >= w + 1) {
            double recent = std::numeric_limits<double>::infinity();
            double earlier = std::numeric_limits<double>::infinity();
            for (long i = n - w; i < n; ++i) recent = std::min(recent, v_[i]);
            for (long i = 0; i < n - w; ++i) earlier = std::min(earlier, v_[i]);
            if (recent > cfg.stagnation_improvement * earlier) return true;
        }
        return false;
    }

private:
    std::vector<double> v_;
};

struct PointEval {
    FeFunction x_eval;
    BallChain chain;
    EvalResult eval;
    VectorXd r; // u - H(P_B(u)), interior coefficients
};

PointEval evaluate_at(const FixedPointProblem& p, const FeFunction& u, WarmState& warm,
                      const double* fixed_rho) {
    PointEval pe;
    if (p.ball) {
        pe.x_eval = project_ball(*p.forms, u, *p.ball);
        pe.chain = ball_chain(*p.forms, u, *p.ball);
    } else {
        pe.x_eval = u;
    }
    pe.eval = fixed_rho ? p.evaluate_H_rho(pe.x_eval, *fixed_rho, warm)
                        : p.evaluate_H(pe.x_eval, warm);
    if (pe.eval.u_B.coeffs.size() != u.coeffs.size())
        throw ConfigError("fixed-point map returned a vector of mismatched size");
    if (pe.eval.T.coeffs.size() > 0) warm.T = pe.eval.T.coeffs;
    pe.r = u.coeffs - pe.eval.u_B.coeffs;
    return pe;
}

struct Counters {
    long t_newton = 0, pfmy = 0, pdas = 0;
    void add(const EvalResult& e) {
        t_newton += e.t_newton;
        pfmy += e.pfmy;
        pdas += e.pdas;
    }
};

struct Runner {
    const FixedPointProblem& p;
    const NewtonConfig& cfg;
    SolveReport rep;
    WarmState warm;
    StagnationMonitor mon;
    std::vector<double> err_hist;
    FeFunction u;
    double prev_step = std::numeric_limits<double>::infinity();

    Runner(const FixedPointProblem& p_, const FeFunction& u0, const NewtonConfig& cfg_)
        : p(p_), cfg(cfg_), u(u0) {
        err_hist.push_back(err_of(u));
        rep.initial_err_h10 = err_hist.front();
    }

    double err_of(const FeFunction& x) const {
        if (!p.exact) return kNaN;
        return p.forms->h10_int(x.coeffs - p.exact->coeffs);
    }

    double monitored(const PointEval* pe) const {
        if (cfg.criterion == StopCriterion::IterateNorm)
            return norm_int(*p.forms, u.coeffs, cfg.termination_norm);
        return pe ? norm_int(*p.forms, pe->r, cfg.termination_norm) : kNaN;
    }

    void set_initial(const PointEval& pe) {
        rep.initial_res_h10 = p.forms->h10_int(pe.r);
        rep.initial_res_h1 = p.forms->h1_int(pe.r);
        rep.initial_t_newton = pe.eval.t_newton;
        rep.initial_pfmy = pe.eval.pfmy;
        rep.initial_pdas = pe.eval.pdas;
    }

    void push_record(StepType st, const VectorXd& r, const Counters& c, long ls_trials,
                     double tau, double rho) {
        IterationRecord rec;
        rec.iter = long(rep.records.size()) + 1;
        rec.step_type = st;
        rec.res_h10 = p.forms->h10_int(r);
        rec.res_h1 = p.forms->h1_int(r);
        rec.err_h10 = err_of(u);
        err_hist.push_back(rec.err_h10);
        const size_t n = err_hist.size();
        if (n >= 3) rec.eoc = eoc_triple(err_hist[n - 3], err_hist[n - 2], err_hist[n - 1]);
        rec.t_newton = c.t_newton;
        rec.pfmy = c.pfmy;
        rec.pdas = c.pdas;
        rec.ls_trials = ls_trials;
        rec.accepted_newton = (st == StepType::N);
        rec.tau = tau;
        rec.rho_forcing = rho;
        rep.records.push_back(std::move(rec));
    }

    SolveReport finish(SolveStatus status) {
        rep.status = status;
        rep.final_iterate = u;
        rep.outer_iterations = long(rep.records.size());
        rep.total_t_newton = rep.initial_t_newton;
        rep.total_pfmy = rep.initial_pfmy;
        rep.total_pdas = rep.initial_pdas;
        for (const auto& r : rep.records) {
            rep.total_t_newton += r.t_newton;
            rep.total_pfmy += r.pfmy;
            rep.total_pdas += r.pdas;
        }
        rep.final_monitored = mon.last();
        return std::move(rep);
    }

    std::pair<double, double> forcing(long i) const {
        double tau = cfg.tau_seq ? cfg.tau_seq(i, prev_step) : default_forcing(i, prev_step);
        tau = std::min(tau, cfg.tau_star);
        const double rho = cfg.rho_seq ? cfg.rho_seq(i, prev_step) : default_forcing(i, prev_step);
        return {tau, rho};
    }
};

// Shared Newton loop: plain steps, optional Armijo backtracking on the H1
// residue norm, optional fixed-penalty smoothing (which substitutes the
// *_rho closures for evaluation and step).
SolveReport run_newton(const FixedPointProblem& p, const FeFunction& u0, const NewtonConfig& cfg,
                       bool linesearch, const double* fixed_rho) {
    Runner R(p, u0, cfg);
    try {
        if (cfg.criterion == StopCriterion::IterateNorm &&
            norm_int(*p.forms, u0.coeffs, cfg.termination_norm) <= cfg.tol) {
            R.mon.push(norm_int(*p.forms, u0.coeffs, cfg.termination_norm));
            return R.finish(SolveStatus::Converged);
        }
        PointEval pe = evaluate_at(p, R.u, R.warm, fixed_rho);
        R.set_initial(pe);
        double v = R.monitored(&pe);
        R.mon.push(v);
        while (true) {
            if (v <= cfg.tol) return R.finish(SolveStatus::Converged);
            if (long(R.rep.records.size()) >= cfg.max_outer)
                return R.finish(SolveStatus::MaxIterations);
            if (cfg.detect_stagnation && R.mon.stagnated(cfg))
                return R.finish(SolveStatus::Stagnated);

            const long i = long(R.rep.records.size());
            const auto [tau, rho] = R.forcing(i);
            const FeFunction du = fixed_rho ? p.newton_step_rho(R.u, pe.eval, *fixed_rho)
                                            : p.newton_step(R.u, pe.x_eval, pe.eval, pe.chain);
            Counters c;
            long trials = 0;
            StepType st = StepType::N;
            if (!linesearch) {
                R.u.coeffs += du.coeffs;
                R.prev_step = p.forms->h10_int(du.coeffs);
                pe = evaluate_at(p, R.u, R.warm, fixed_rho);
                c.add(pe.eval);
            } else {
                const double merit0 = p.forms->h1_int(pe.r);
                const FeFunction base = R.u;
                double alpha = 1.0;
                bool accepted = false;
                // alpha = 1 first, then up to max_linesearch halvings
                for (trials = 1; trials <= cfg.max_linesearch + 1; ++trials) {
                    FeFunction cand = base;
                    cand.coeffs += alpha * du.coeffs;
                    WarmState trial_warm = R.warm;
                    PointEval cand_pe = evaluate_at(p, cand, trial_warm, fixed_rho);
                    c.add(cand_pe.eval);
                    if (p.forms->h1_int(cand_pe.r) <= (1.0 - cfg.armijo_c1 * alpha) * merit0) {
                        R.u = std::move(cand);
                        pe = std::move(cand_pe);
                        R.warm = std::move(trial_warm);
                        R.prev_step = alpha * p.forms->h10_int(du.coeffs);
                        accepted = true;
                        break;
                    }
                    alpha *= cfg.linesearch_beta;
                }
                if (!accepted) {
                    // the wasted evaluations still count
                    IterationRecord& dummy = R.rep.records.emplace_back();
                    dummy.iter = long(R.rep.records.size());
                    dummy.step_type = StepType::LS;
                    dummy.res_h10 = R.rep.records.size() >= 2
                                        ? R.rep.records[R.rep.records.size() - 2].res_h10
                                        : R.rep.initial_res_h10;
                    dummy.res_h1 = R.rep.records.size() >= 2
                                       ? R.rep.records[R.rep.records.size() - 2].res_h1
                                       : R.rep.initial_res_h1;
                    dummy.err_h10 = R.err_of(R.u);
                    dummy.t_newton = c.t_newton;
                    dummy.pfmy = c.pfmy;
                    dummy.pdas = c.pdas;
                    dummy.ls_trials = trials - 1;
                    dummy.tau = tau;
                    dummy.rho_forcing = rho;
                    return R.finish(SolveStatus::Stagnated);
                }
                st = (trials == 1) ? StepType::N : StepType::LS;
            }
            R.push_record(st, pe.r, c, trials, tau, rho);
            v = R.monitored(&pe);
            R.mon.push(v);
        }
    } catch (const InnerSolverFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    } catch (const LinearSolverFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    } catch (const RestorationFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    }
}

} // namespace

FeFunction project_ball(const Forms& forms, const FeFunction& x, const BallSpec& ball) {
    if (ball.center.coeffs.size() != x.coeffs.size())
        throw ConfigError("ball center does not match the iterate's coefficient size");
    const VectorXd d = x.coeffs - ball.center.coeffs;
    const double dist = forms.h10_int(d);
    if (dist <= ball.radius) return x;
    FeFunction y = x;
    y.coeffs = ball.center.coeffs + (ball.radius / dist) * d;
    return y;
}

FeFunction project_ball_deriv_apply(const Forms& forms, const FeFunction& x, const BallSpec& ball,
                                    const FeFunction& h) {
    const VectorXd d = x.coeffs - ball.center.coeffs;
    const double dist = forms.h10_int(d);
    if (dist <= ball.radius) return h;
    const VectorXd v = d / dist;
    FeFunction out = h;
    out.coeffs = (ball.radius / dist) * (h.coeffs - v * v.dot(forms.K_int * h.coeffs));
    return out;
}

BallChain ball_chain(const Forms& forms, const FeFunction& x, const BallSpec& ball) {
    BallChain chain;
    const VectorXd d = x.coeffs - ball.center.coeffs;
    const double dist = forms.h10_int(d);
    if (dist <= ball.radius) return chain;
    chain.scale = ball.radius / dist;
    chain.v = d / dist; // normalized so v' K v = 1
    return chain;
}

FixedPointProblem localize(FixedPointProblem problem, BallSpec ball) {
    if (!(ball.radius > 0.0)) throw ConfigError("ball radius must be positive");
    if (ball.center.coeffs.size() != problem.forms->K_int.rows())
        throw ConfigError("ball center does not match the problem's interior dof count");
    problem.ball = std::move(ball);
    return problem;
}

ResidueResult residue(const FixedPointProblem& problem, const FeFunction& u, WarmState* warm) {
    WarmState local;
    WarmState& w = warm ? *warm : local;
    PointEval pe = evaluate_at(problem, u, w, nullptr);
    ResidueResult out;
    out.r = FeFunction{problem.mesh, Space::H10, std::move(pe.r)};
    out.x_eval = std::move(pe.x_eval);
    out.chain = std::move(pe.chain);
    out.eval = std::move(pe.eval);
    return out;
}

SolveReport fixed_point_iteration(const FixedPointProblem& problem, const FeFunction& u0,
                                  const NewtonConfig& cfg) {
    Runner R(problem, u0, cfg);
    try {
        if (cfg.criterion == StopCriterion::IterateNorm) {
            const double v0 = norm_int(*problem.forms, u0.coeffs, cfg.termination_norm);
            R.mon.push(v0);
            if (v0 <= cfg.tol) return R.finish(SolveStatus::Converged);
        }
        while (true) {
            if (long(R.rep.records.size()) >= cfg.max_outer)
                return R.finish(SolveStatus::MaxIterations);
            if (cfg.detect_stagnation && R.mon.stagnated(cfg))
                return R.finish(SolveStatus::Stagnated);
            PointEval pe = evaluate_at(problem, R.u, R.warm, nullptr);
            Counters c;
            c.add(pe.eval);
            R.u.coeffs = pe.eval.u_B.coeffs;
            // the residue attributed to this step is |u_i - u_{i-1}| = |R(u_{i-1})|
            R.push_record(StepType::FP, pe.r, c, 0, 0.0, 0.0);
            const double v = cfg.criterion == StopCriterion::IterateNorm
                                 ? norm_int(*problem.forms, R.u.coeffs, cfg.termination_norm)
                                 : norm_int(*problem.forms, pe.r, cfg.termination_norm);
            R.mon.push(v);
            if (v <= cfg.tol) return R.finish(SolveStatus::Converged);
        }
    } catch (const InnerSolverFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    } catch (const LinearSolverFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    } catch (const RestorationFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    }
}

SolveReport vanilla_ssn(const FixedPointProblem& problem, const FeFunction& u0,
                        const NewtonConfig& cfg) {
    return run_newton(problem, u0, cfg, false, nullptr);
}

SolveReport linesearch_ssn(const FixedPointProblem& problem, const FeFunction& u0,
                           const NewtonConfig& cfg) {
    return run_newton(problem, u0, cfg, true, nullptr);
}

SolveReport smoothed_my_newton(const FixedPointProblem& problem, const FeFunction& u0, double rho,
                               const NewtonConfig& cfg) {
    if (problem.ball) throw ConfigError("the smoothed driver does not support localization");
    if (!problem.evaluate_H_rho || !problem.newton_step_rho)
        throw ConfigError("the smoothed driver needs the fixed-penalty closures");
    if (!(rho > 0.0)) throw ConfigError("smoothing penalty must be positive");
    return run_newton(problem, u0, cfg, false, &rho);
}

SolveReport globalized_ssn(const FixedPointProblem& problem, const FeFunction& u0,
                           const NewtonConfig& cfg) {
    Runner R(problem, u0, cfg);
    try {
        if (cfg.criterion == StopCriterion::IterateNorm &&
            norm_int(*problem.forms, u0.coeffs, cfg.termination_norm) <= cfg.tol) {
            R.mon.push(norm_int(*problem.forms, u0.coeffs, cfg.termination_norm));
            return R.finish(SolveStatus::Converged);
        }
        PointEval pe = evaluate_at(problem, R.u, R.warm, nullptr);
        R.set_initial(pe);
        double v = R.monitored(&pe);
        R.mon.push(v);
        while (true) {
            if (v <= cfg.tol) return R.finish(SolveStatus::Converged);
            if (long(R.rep.records.size()) >= cfg.max_outer)
                return R.finish(SolveStatus::MaxIterations);
            if (cfg.detect_stagnation && R.mon.stagnated(cfg))
                return R.finish(SolveStatus::Stagnated);

            const long i = long(R.rep.records.size());
            const auto [tau, rho] = R.forcing(i);
            const FeFunction du = problem.newton_step(R.u, pe.x_eval, pe.eval, pe.chain);

            FeFunction x_newton = R.u;
            x_newton.coeffs += du.coeffs;
            FeFunction x_basic{problem.mesh, Space::H10, pe.eval.u_B.coeffs};

            WarmState warm_n = R.warm, warm_b = R.warm;
            PointEval pe_n = evaluate_at(problem, x_newton, warm_n, nullptr);
            PointEval pe_b = evaluate_at(problem, x_basic, warm_b, nullptr);
            Counters c;
            c.add(pe_n.eval);
            c.add(pe_b.eval);

            // candidate comparison is always in the H10 residue norm; a Newton
            // candidate that already meets the stopping test is taken outright
            // (there is nothing left to safeguard at that point)
            const double mon_n = cfg.criterion == StopCriterion::IterateNorm
                                     ? norm_int(*problem.forms, x_newton.coeffs,
                                                cfg.termination_norm)
                                     : norm_int(*problem.forms, pe_n.r, cfg.termination_norm);
            const bool take_newton =
                mon_n <= cfg.tol ||
                problem.forms->h10_int(pe_n.r) <= problem.forms->h10_int(pe_b.r);
            const VectorXd& chosen = take_newton ? x_newton.coeffs : x_basic.coeffs;
            R.prev_step = problem.forms->h10_int(chosen - R.u.coeffs);
            R.u.coeffs = chosen;
            if (take_newton) {
                pe = std::move(pe_n);
                R.warm = std::move(warm_n);
            } else {
                pe = std::move(pe_b);
                R.warm = std::move(warm_b);
            }
            R.push_record(take_newton ? StepType::N : StepType::B, pe.r, c, 0, tau, rho);
            v = R.monitored(&pe);
            R.mon.push(v);
        }
    } catch (const InnerSolverFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    } catch (const LinearSolverFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    } catch (const RestorationFailure&) {
        return R.finish(SolveStatus::InnerFailure);
    }
}

std::vector<double> residue_eocs(const SolveReport& report) {
    std::vector<double> h;
    if (std::isfinite(report.initial_res_h10)) h.push_back(report.initial_res_h10);
    for (const auto& r : report.records) h.push_back(r.res_h10);
    std::vector<double> out;
    for (size_t k = 2; k < h.size(); ++k) out.push_back(eoc_triple(h[k - 2], h[k - 1], h[k]));
    return out;
}

const char* to_string(StepType t) {
    switch (t) {
        case StepType::N: return "N";
        case StepType::B: return "B";
        case StepType::FP: return "FP";
        case StepType::LS: return "LS";
    }
    return "?";
}

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::MaxIterations: return "max-iterations";
        case SolveStatus::Stagnated: return "stagnated";
        case SolveStatus::InnerFailure: return "inner-failure";
    }
    return "?";
}

} // namespace qvi
