#ifndef MODESWITCH_PLANNER_HPP
#define MODESWITCH_PLANNER_HPP

#include "error.hpp"
#include "lander.hpp"
#include "parallel.hpp"
#include "policy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

/**
 * @file planner.hpp
 *
 * @brief Latent-goal trajectory optimisation.
 *
 * Finds a thrust sequence u_0..u_{T-1} minimising ||z_goal - latent(observe(x_T))||^2,
 * where x_{t+1} follows the free-flight model of the simulator. The problem is
 * transcribed by single shooting; gradients come from one reverse (adjoint) sweep and
 * the box-constrained problem is solved with a projected limited-memory BFGS method
 * from several starting sequences.
 *
 * Decision variables are effective thrusts: main in [0, 1] and side in [-1, 1]. This
 * removes the dead zone of the main-engine gate from the search space. Planned thrusts
 * are replayed with `LanderEnv::step(EffectiveThrust)` and match the simulator exactly
 * while airborne; `PlanResult::actions` holds the raw commands from `action_from_thrust()`.
 */

namespace modeswitch {

struct ActionBox {
    double main_lo = 0.0;
    double main_hi = 1.0;
    double side_lo = -1.0;
    double side_hi = 1.0;
};

struct PlanProblem {
    LanderState x0;
    LatentVector goal;
    int horizon = 40;
    std::shared_ptr<const PolicyNet> policy;
    PhysicsParams physics;
    ObservationScale observation;
    ActionBox bounds;
    /** Path constraints checked on the predicted trajectory. */
    double safety_floor = 0.0;
    double x_bound = 1.0;

    void validate() const {
        if (!policy) {
            fail(ErrorKind::InvalidArgument, "plan problem has no policy");
        }
        if (horizon < 0) {
            fail(ErrorKind::InvalidArgument, "horizon must be >= 0");
        }
        if (goal.size() != policy->hidden()) {
            fail(ErrorKind::DimensionMismatch, "goal latent has dimension " + std::to_string(goal.size()) +
                                                   ", policy latent has " + std::to_string(policy->hidden()));
        }
        if (!x0.finite() || !goal.allFinite()) {
            fail(ErrorKind::InvalidArgument, "plan problem has non-finite initial state or goal");
        }
    }
};

using ThrustSequence = std::vector<EffectiveThrust>;

/** Flat [main_0, side_0, main_1, side_1, ...] view of a thrust sequence. */
inline Eigen::VectorXd pack(const ThrustSequence& u) {
    Eigen::VectorXd z(2 * static_cast<Eigen::Index>(u.size()));
    for (std::size_t t = 0; t < u.size(); ++t) {
        z[2 * t] = u[t].main;
        z[2 * t + 1] = u[t].side;
    }
    return z;
}

inline ThrustSequence unpack(const Eigen::VectorXd& z) {
    ThrustSequence u(static_cast<std::size_t>(z.size() / 2));
    for (std::size_t t = 0; t < u.size(); ++t) {
        u[t] = EffectiveThrust{z[2 * t], z[2 * t + 1]};
    }
    return u;
}

/**
 * Predicted states x_0..x_T under free flight (no contact, flags held at 0).
 * Throws NonFiniteState if the rollout diverges.
 */
inline std::vector<LanderState> rollout_model(const LanderState& x0, const ThrustSequence& u, const PhysicsParams& p) {
    std::vector<LanderState> xs;
    xs.reserve(u.size() + 1);
    LanderState s = x0;
    s.leg_left = 0;
    s.leg_right = 0;
    xs.push_back(s);
    for (std::size_t t = 0; t < u.size(); ++t) {
        s = integrate_free_flight(s, u[t], p);
        if (!s.finite()) {
            fail(ErrorKind::NonFiniteState, "model rollout diverged at step " + std::to_string(t + 1));
        }
        xs.push_back(s);
    }
    return xs;
}

inline double latent_distance_sq(const PolicyNet& policy, const LanderState& s, const ObservationScale& scale,
                                 const LatentVector& goal) {
    return (goal - policy.latent(observe(s, scale))).squaredNorm();
}

inline double objective(const ThrustSequence& u, const PlanProblem& problem) {
    const auto xs = rollout_model(problem.x0, u, problem.physics);
    return latent_distance_sq(*problem.policy, xs.back(), problem.observation, problem.goal);
}

/** d observe / d continuous state is diagonal. */
inline Vec6 observation_scale_diagonal(const ObservationScale& s) {
    Vec6 d;
    d << s.position, s.position, s.velocity, s.velocity, 1.0, s.angular_rate;
    return d;
}

struct ObjectiveAndGradient {
    double value = 0;
    Eigen::VectorXd gradient; // packed like `pack()`
    std::vector<LanderState> states;
};

/**
 * Objective and its gradient w.r.t. the packed effective thrusts via the adjoint sweep
 * lambda_T = dJ/dx_T, dJ/du_t = B_t^T lambda_{t+1}, lambda_t = A_t^T lambda_{t+1}.
 */
inline ObjectiveAndGradient objective_with_gradient(const ThrustSequence& u, const PlanProblem& problem) {
    ObjectiveAndGradient out;
    out.states = rollout_model(problem.x0, u, problem.physics);
    const Vec8 obs = observe(out.states.back(), problem.observation);
    const LatentVector residual = problem.policy->latent(obs) - problem.goal;
    out.value = residual.squaredNorm();

    const Vec8 dobs = problem.policy->latent_vjp(obs, 2.0 * residual);
    Vec6 lambda = dobs.head<6>().cwiseProduct(observation_scale_diagonal(problem.observation));

    out.gradient.resize(2 * static_cast<Eigen::Index>(u.size()));
    for (std::size_t k = u.size(); k-- > 0;) {
        const auto J = step_jacobians(out.states[k], u[k], problem.physics);
        out.gradient.segment<2>(2 * static_cast<Eigen::Index>(k)) = J.B.transpose() * lambda;
        lambda = J.A.transpose() * lambda;
    }
    return out;
}

inline Eigen::VectorXd objective_gradient(const ThrustSequence& u, const PlanProblem& problem) {
    return objective_with_gradient(u, problem).gradient;
}

enum class PlanStatus { Converged, MaxIters, Stalled };

inline std::string_view to_string(PlanStatus s) {
    switch (s) {
    case PlanStatus::Converged: return "Converged";
    case PlanStatus::MaxIters: return "MaxIters";
    case PlanStatus::Stalled: return "Stalled";
    }
    return "Stalled";
}

inline PlanStatus plan_status_from_string(std::string_view s) {
    for (auto v : {PlanStatus::Converged, PlanStatus::MaxIters, PlanStatus::Stalled}) {
        if (to_string(v) == s) {
            return v;
        }
    }
    fail(ErrorKind::SchemaMismatch, "unknown plan status '" + std::string(s) + "'");
}

struct SolverConfig {
    int max_iters = 500;
    double tol = 1e-6;
    int restarts = 8;
    std::uint64_t seed = 0;
    int memory = 10;
    /** Standard deviation of the random perturbations around the hover guess. */
    double perturbation = 0.3;
    int threads = 1;
};

struct PlanResult {
    ThrustSequence thrusts;
    std::vector<Action> actions;
    std::vector<LanderState> predicted_states;
    std::vector<double> objective_trace;
    double terminal_objective = std::numeric_limits<double>::infinity();
    double projected_gradient_norm = std::numeric_limits<double>::infinity();
    PlanStatus status = PlanStatus::Stalled;
    int restarts_used = 0;
    int best_restart = -1;
    int iterations = 0;
    bool path_feasible = true;

    double energy() const {
        double e = 0;
        for (const auto& u : thrusts) {
            e += u.main * u.main + u.side * u.side;
        }
        return e;
    }
};

namespace detail {

inline Eigen::VectorXd lower_bounds(const ActionBox& b, int T) {
    Eigen::VectorXd lo(2 * T);
    for (int t = 0; t < T; ++t) {
        lo[2 * t] = b.main_lo;
        lo[2 * t + 1] = b.side_lo;
    }
    return lo;
}

inline Eigen::VectorXd upper_bounds(const ActionBox& b, int T) {
    Eigen::VectorXd hi(2 * T);
    for (int t = 0; t < T; ++t) {
        hi[2 * t] = b.main_hi;
        hi[2 * t + 1] = b.side_hi;
    }
    return hi;
}

inline Eigen::VectorXd project(const Eigen::VectorXd& z, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return z.cwiseMax(lo).cwiseMin(hi);
}

inline bool path_ok(const std::vector<LanderState>& xs, const PlanProblem& problem) {
    return std::all_of(xs.begin(), xs.end(), [&](const LanderState& s) {
        return s.y >= problem.safety_floor && std::abs(s.x) <= problem.x_bound;
    });
}

struct RestartOutcome {
    Eigen::VectorXd z;
    std::vector<double> trace;
    double value = std::numeric_limits<double>::infinity();
    double pg_norm = std::numeric_limits<double>::infinity();
    PlanStatus status = PlanStatus::Stalled;
    int iterations = 0;
    bool finite = false;
};

/** Projected L-BFGS on the box [lo, hi]. Only iterates that pass the Armijo test are accepted. */
inline RestartOutcome projected_lbfgs(const PlanProblem& problem, Eigen::VectorXd z, const Eigen::VectorXd& lo,
                                      const Eigen::VectorXd& hi, const SolverConfig& cfg) {
    RestartOutcome out;
    auto eval = [&](const Eigen::VectorXd& v) { return objective_with_gradient(unpack(v), problem); };

    z = project(z, lo, hi);
    ObjectiveAndGradient cur;
    try {
        cur = eval(z);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFiniteState) {
            return out;
        }
        throw;
    }
    if (!std::isfinite(cur.value)) {
        return out;
    }
    out.finite = true;
    out.trace.push_back(cur.value);

    std::deque<Eigen::VectorXd> S, Y;
    auto pg_norm = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& g) {
        return (project(v - g, lo, hi) - v).lpNorm<Eigen::Infinity>();
    };

    out.status = PlanStatus::MaxIters;
    int it = 0;
    for (; it < cfg.max_iters; ++it) {
        const Eigen::VectorXd& g = cur.gradient;
        const double pgn = pg_norm(z, g);
        if (pgn < cfg.tol) {
            out.status = PlanStatus::Converged;
            break;
        }

        // Variables pinned at a bound with the gradient pushing outward stay fixed.
        Eigen::VectorXd free = Eigen::VectorXd::Ones(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            if ((z[i] <= lo[i] && g[i] > 0) || (z[i] >= hi[i] && g[i] < 0)) {
                free[i] = 0;
            }
        }

        bool accepted = false;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            const bool use_memory = attempt == 0 && !S.empty();
            Eigen::VectorXd q = g.cwiseProduct(free);
            Eigen::VectorXd d;
            if (use_memory) {
                std::vector<double> alpha(S.size());
                for (std::size_t k = S.size(); k-- > 0;) {
                    const Eigen::VectorXd s = S[k].cwiseProduct(free), y = Y[k].cwiseProduct(free);
                    const double sy = s.dot(y);
                    alpha[k] = sy > 0 ? s.dot(q) / sy : 0.0;
                    q -= alpha[k] * y;
                }
                const Eigen::VectorXd s_last = S.back().cwiseProduct(free), y_last = Y.back().cwiseProduct(free);
                const double yy = y_last.squaredNorm();
                const double gamma = yy > 0 && s_last.dot(y_last) > 0 ? s_last.dot(y_last) / yy : 1.0;
                q *= gamma;
                for (std::size_t k = 0; k < S.size(); ++k) {
                    const Eigen::VectorXd s = S[k].cwiseProduct(free), y = Y[k].cwiseProduct(free);
                    const double sy = s.dot(y);
                    const double beta = sy > 0 ? y.dot(q) / sy : 0.0;
                    q += s * (alpha[k] - beta);
                }
                d = -q.cwiseProduct(free);
                if (g.dot(d) >= -1e-14 * g.norm() * d.norm()) {
                    continue;
                }
            } else {
                const double gmax = q.lpNorm<Eigen::Infinity>();
                d = -q / std::max(1.0, gmax);
            }

            double step = 1.0;
            for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
                const Eigen::VectorXd trial = project(z + step * d, lo, hi);
                const Eigen::VectorXd delta = trial - z;
                if (delta.lpNorm<Eigen::Infinity>() == 0) {
                    break;
                }
                ObjectiveAndGradient next;
                try {
                    next = eval(trial);
                } catch (const Error& e) {
                    if (e.kind() != ErrorKind::NonFiniteState) {
                        throw;
                    }
                    continue;
                }
                if (std::isfinite(next.value) && next.value <= cur.value + 1e-4 * g.dot(delta) &&
                    next.value <= cur.value) {
                    const Eigen::VectorXd y = next.gradient - g;
                    if (delta.dot(y) > 1e-12 * delta.norm() * y.norm()) {
                        S.push_back(delta);
                        Y.push_back(y);
                        if (static_cast<int>(S.size()) > cfg.memory) {
                            S.pop_front();
                            Y.pop_front();
                        }
                    }
                    z = trial;
                    cur = std::move(next);
                    out.trace.push_back(cur.value);
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                S.clear();
                Y.clear();
            }
        }
        if (!accepted) {
            out.status = PlanStatus::Stalled;
            break;
        }
    }
    out.iterations = it;
    out.z = z;
    out.value = cur.value;
    out.pg_norm = pg_norm(z, cur.gradient);
    if (out.status != PlanStatus::Converged && out.pg_norm < cfg.tol) {
        out.status = PlanStatus::Converged;
    }
    return out;
}

} // namespace detail

/** Hover throttle for the given physics, clamped to the main-engine box. */
inline double hover_throttle(const PhysicsParams& p, const ActionBox& b) {
    return std::clamp(p.gravity / p.main_thrust, b.main_lo, b.main_hi);
}

/**
 * Starting sequences: restart 0 is all-zero thrust, restart 1 hovers, the rest perturb
 * the hover guess with seeded Gaussian noise.
 */
inline Eigen::VectorXd initial_guess(const PlanProblem& problem, int restart, std::uint64_t seed,
                                     double perturbation) {
    const int T = problem.horizon;
    const auto lo = detail::lower_bounds(problem.bounds, T), hi = detail::upper_bounds(problem.bounds, T);
    Eigen::VectorXd z(2 * T);
    const double hover = hover_throttle(problem.physics, problem.bounds);
    for (int t = 0; t < T; ++t) {
        z[2 * t] = restart == 0 ? problem.bounds.main_lo : hover;
        z[2 * t + 1] = std::clamp(0.0, problem.bounds.side_lo, problem.bounds.side_hi);
    }
    if (restart >= 2) {
        std::mt19937_64 rng(seed * 7919ull + static_cast<std::uint64_t>(restart));
        std::normal_distribution<double> normal(0.0, perturbation);
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            z[i] += normal(rng);
        }
    }
    return detail::project(z, lo, hi);
}

/**
 * Solve the latent-goal problem from `cfg.restarts` starting sequences and keep the best
 * path-feasible local minimum (lowest objective, then lowest action energy).
 * Throws AllRestartsFailed if every restart diverged.
 */
inline PlanResult plan(const PlanProblem& problem, const SolverConfig& cfg = {}) {
    problem.validate();
    const int T = problem.horizon;
    PlanResult result;
    if (T == 0) {
        result.predicted_states = rollout_model(problem.x0, {}, problem.physics);
        result.terminal_objective =
            latent_distance_sq(*problem.policy, result.predicted_states.back(), problem.observation, problem.goal);
        result.objective_trace = {result.terminal_objective};
        result.projected_gradient_norm = 0;
        result.status = PlanStatus::Converged;
        result.restarts_used = 0;
        result.path_feasible = detail::path_ok(result.predicted_states, problem);
        return result;
    }

    const auto lo = detail::lower_bounds(problem.bounds, T), hi = detail::upper_bounds(problem.bounds, T);
    const int restarts = std::max(1, cfg.restarts);
    std::vector<detail::RestartOutcome> outcomes(static_cast<std::size_t>(restarts));
    parallel_for(
        outcomes.size(),
        [&](std::size_t r) {
            outcomes[r] = detail::projected_lbfgs(
                problem, initial_guess(problem, static_cast<int>(r), cfg.seed, cfg.perturbation), lo, hi, cfg);
        },
        cfg.threads);

    auto energy = [](const Eigen::VectorXd& z) { return z.squaredNorm(); };
    int best = -1;
    bool best_feasible = false;
    for (int r = 0; r < restarts; ++r) {
        const auto& o = outcomes[static_cast<std::size_t>(r)];
        if (!o.finite) {
            continue;
        }
        const bool feasible = detail::path_ok(rollout_model(problem.x0, unpack(o.z), problem.physics), problem);
        if (best < 0) {
            best = r;
            best_feasible = feasible;
            continue;
        }
        const auto& b = outcomes[static_cast<std::size_t>(best)];
        bool better;
        if (feasible != best_feasible) {
            better = feasible;
        } else if (o.value != b.value) {
            better = o.value < b.value;
        } else {
            better = energy(o.z) < energy(b.z);
        }
        if (better) {
            best = r;
            best_feasible = feasible;
        }
    }
    if (best < 0) {
        fail(ErrorKind::AllRestartsFailed, "every restart produced a non-finite rollout");
    }

    const auto& b = outcomes[static_cast<std::size_t>(best)];
    result.thrusts = unpack(b.z);
    for (const auto& u : result.thrusts) {
        result.actions.push_back(action_from_thrust(u));
    }
    result.predicted_states = rollout_model(problem.x0, result.thrusts, problem.physics);
    result.objective_trace = b.trace;
    result.terminal_objective = b.value;
    result.projected_gradient_norm = b.pg_norm;
    result.status = b.status;
    result.restarts_used = restarts;
    result.best_restart = best;
    result.iterations = b.iterations;
    result.path_feasible = best_feasible;
    return result;
}

struct GradientCheckReport {
    int samples = 0;
    int kink_skipped = 0;
    double max_relative_error = 0;
    double median_relative_error = 0;
    std::vector<double> relative_errors;
};

/** Relative error of two gradient vectors in the infinity norm. */
inline double gradient_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
    const double scale = std::max({analytic.lpNorm<Eigen::Infinity>(), numeric.lpNorm<Eigen::Infinity>(), 1e-12});
    return (analytic - numeric).lpNorm<Eigen::Infinity>() / scale;
}

/**
 * Compare the adjoint gradient against central differences at `n_samples` random
 * thrust sequences strictly inside the action box. For LeakyReLU policies, samples
 * whose terminal pre-activations lie within `kink_margin` of 0 are skipped.
 */
inline GradientCheckReport gradient_check(const PlanProblem& problem, int n_samples, std::uint64_t seed,
                                          double h = 1e-6, double kink_margin = 1e-4) {
    GradientCheckReport report;
    if (problem.horizon == 0 || n_samples <= 0) {
        return report;
    }
    problem.validate();
    std::mt19937_64 rng(seed);
    const auto& b = problem.bounds;
    std::uniform_real_distribution<double> main_dist(b.main_lo + 10 * h, b.main_hi - 10 * h);
    std::uniform_real_distribution<double> side_dist(b.side_lo + 10 * h, b.side_hi - 10 * h);
    const bool leaky = problem.policy->activation().kind == Activation::Kind::LeakyReLU;

    for (int n = 0; n < n_samples; ++n) {
        ThrustSequence u(static_cast<std::size_t>(problem.horizon));
        for (auto& a : u) {
            a.main = main_dist(rng);
            a.side = side_dist(rng);
        }
        const auto analytic = objective_with_gradient(u, problem);
        if (leaky && problem.policy->kink_margin(observe(analytic.states.back(), problem.observation)) < kink_margin) {
            ++report.kink_skipped;
            continue;
        }
        Eigen::VectorXd z = pack(u), numeric(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            Eigen::VectorXd zp = z, zm = z;
            zp[i] += h;
            zm[i] -= h;
            numeric[i] = (objective(unpack(zp), problem) - objective(unpack(zm), problem)) / (2 * h);
        }
        report.relative_errors.push_back(gradient_relative_error(analytic.gradient, numeric));
    }
    report.samples = static_cast<int>(report.relative_errors.size());
    if (report.samples > 0) {
        std::vector<double> sorted = report.relative_errors;
        std::sort(sorted.begin(), sorted.end());
        report.max_relative_error = sorted.back();
        report.median_relative_error = sorted[sorted.size() / 2];
    }
    return report;
}

} // namespace modeswitch

#endif
