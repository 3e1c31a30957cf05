#ifndef MODESWITCH_LANDER_HPP
#define MODESWITCH_LANDER_HPP

#include "error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

/**
 * @file lander.hpp
 *
 * @brief Deterministic planar lander: analytic dynamics, contact, reward and termination.
 *
 * The continuous state is the six-vector (x, y, vx, vy, angle, angular rate).
 * Free flight follows
 *
 *     d/dt [x y vx vy a w] = [vx, vy, (-sin(a) m f_m + cos(a) s f_s) / mass,
 *                             (cos(a) m f_m + sin(a) s f_s - g) / mass, w, c_torque s / I]
 *
 * where (m, s) are the effective main and side thrusts produced by `gate_action()`.
 * There is no thruster noise and no random initial push: equal initial states and
 * equal action sequences give bitwise-equal trajectories.
 */

namespace modeswitch {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat62 = Eigen::Matrix<double, 6, 2>;

inline constexpr int kStateDim = 6;
inline constexpr int kObservationDim = 8;
inline constexpr int kActionDim = 2;

struct LanderState {
    double x = 0;
    double y = 0;
    double vx = 0;
    double vy = 0;
    double angle = 0;
    double angular_rate = 0;
    int leg_left = 0;
    int leg_right = 0;

    Vec6 continuous() const {
        Vec6 out;
        out << x, y, vx, vy, angle, angular_rate;
        return out;
    }

    static LanderState from_continuous(const Vec6& v, int left = 0, int right = 0) {
        return LanderState{v[0], v[1], v[2], v[3], v[4], v[5], left, right};
    }

    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(vx) && std::isfinite(vy) &&
               std::isfinite(angle) && std::isfinite(angular_rate);
    }

    bool operator==(const LanderState&) const = default;
};

/**
 * Raw policy command. Both components are clamped to [-1, 1] on construction.
 * Negative main commands switch the main engine off.
 */
struct Action {
    double main = 0;
    double side = 0;

    Action() = default;
    Action(double main_cmd, double side_cmd)
        : main(std::clamp(main_cmd, -1.0, 1.0)), side(std::clamp(side_cmd, -1.0, 1.0)) {}

    bool operator==(const Action&) const = default;
};

/** Thrust actually delivered by the engines: main in [0, 1], side in [-1, 1]. */
struct EffectiveThrust {
    double main = 0;
    double side = 0;

    bool operator==(const EffectiveThrust&) const = default;
};

struct PhysicsParams {
    double mass = 1.0;
    double inertia = 1.0;
    double gravity = 9.8;
    double main_thrust = 20.0;
    double side_thrust = 1.6;
    double torque_constant = 1.0;
    double dt = 0.02;

    void validate() const {
        if (!(mass > 0) || !(inertia > 0) || !(dt > 0) || !(main_thrust > 0) || !(side_thrust > 0)) {
            fail(ErrorKind::InvalidArgument, "physics parameters require mass, inertia, dt, main_thrust, side_thrust > 0");
        }
    }
};

struct RewardParams {
    double distance_weight = 100;
    double speed_weight = 100;
    double angle_weight = 100;
    double leg_weight = 10;
    double main_cost = 0.30;
    double side_cost = 0.03;
    double land_bonus = 100;
    double crash_penalty = -100;
    double out_of_bounds_penalty = -100;
    double solved_threshold = 200;
};

/**
 * Simplified ground contact: legs are a stiff damped spring below y = 0.
 * Compressing the legs past `compression_limit` puts the body on the ground.
 */
struct ContactParams {
    double leg_contact_height = 0.0;
    double stiffness = 500.0;
    double damping = 30.0;
    double friction = 30.0;
    double angular_stiffness = 100.0;
    double angular_damping = 20.0;
    double compression_limit = 0.04;
    double max_contact_angle = std::numbers::pi / 3;
    double rest_speed = 0.05;
    int rest_steps = 10;
};

struct ObservationScale {
    double position = 1.0;
    double velocity = 1.0;
    double angular_rate = 1.0;
};

/** Uniform box from which episode initial states are drawn. */
struct InitialStateRanges {
    std::array<double, 2> x{-0.4, 0.4};
    std::array<double, 2> y{1.2, 1.5};
    std::array<double, 2> vx{-0.5, 0.5};
    std::array<double, 2> vy{-0.5, 0.0};
    std::array<double, 2> angle{-0.3, 0.3};
    std::array<double, 2> angular_rate{-0.3, 0.3};
};

struct EnvConfig {
    PhysicsParams physics;
    RewardParams reward;
    ContactParams contact;
    ObservationScale observation;
    InitialStateRanges initial;
    double x_bound = 1.0;
    double y_ceiling = 3.0;
    int max_steps = 1000;
};

enum class TerminalEvent { None, Landed, Crashed, OutOfBounds, Timeout };

inline std::string_view to_string(TerminalEvent e) {
    switch (e) {
    case TerminalEvent::None: return "None";
    case TerminalEvent::Landed: return "Landed";
    case TerminalEvent::Crashed: return "Crashed";
    case TerminalEvent::OutOfBounds: return "OutOfBounds";
    case TerminalEvent::Timeout: return "Timeout";
    }
    return "None";
}

inline TerminalEvent terminal_event_from_string(std::string_view s) {
    for (auto e : {TerminalEvent::None, TerminalEvent::Landed, TerminalEvent::Crashed, TerminalEvent::OutOfBounds,
                   TerminalEvent::Timeout}) {
        if (to_string(e) == s) {
            return e;
        }
    }
    fail(ErrorKind::SchemaMismatch, "unknown terminal event '" + std::string(s) + "'");
}

/**
 * Main engine fires only for positive commands, throttling from half to full power
 * as the command goes from 0 to 1. Side thrust is fully continuous (no deadzone).
 */
inline EffectiveThrust gate_action(const Action& action) {
    return EffectiveThrust{action.main > 0 ? (action.main + 1.0) / 2.0 : 0.0, action.side};
}

/**
 * Raw command for an effective thrust: main command 2m - 1. Exact for m = 0 (mapped to
 * -1) and m > 1/2; thrusts in (0, 1/2] have no raw preimage and map to commands <= 0.
 */
inline Action action_from_thrust(const EffectiveThrust& thrust) {
    return Action(thrust.main > 0 ? 2.0 * thrust.main - 1.0 : -1.0, thrust.side);
}

/**
 * Jacobian of `gate_action()` w.r.t. the raw command. Undefined at the main-engine kink.
 */
inline Eigen::Matrix2d gate_jacobian(const Action& action, double kink_tolerance = 1e-9) {
    if (std::abs(action.main) < kink_tolerance) {
        fail(ErrorKind::NonDifferentiablePoint, "main command within kink tolerance of 0");
    }
    Eigen::Matrix2d J = Eigen::Matrix2d::Zero();
    J(0, 0) = action.main > 0 ? 0.5 : 0.0;
    J(1, 1) = 1.0;
    return J;
}

inline Vec6 dynamics(const LanderState& s, const EffectiveThrust& u, const PhysicsParams& p) {
    const double sa = std::sin(s.angle), ca = std::cos(s.angle);
    const double main_force = u.main * p.main_thrust;
    const double side_force = u.side * p.side_thrust;
    Vec6 d;
    d << s.vx,
         s.vy,
         (-sa * main_force + ca * side_force) / p.mass,
         (ca * main_force + sa * side_force - p.gravity) / p.mass,
         s.angular_rate,
         p.torque_constant * u.side / p.inertia;
    return d;
}

inline Vec6 dynamics(const LanderState& s, const Action& a, const PhysicsParams& p) {
    return dynamics(s, gate_action(a), p);
}

/** Partials of `dynamics()` w.r.t. the state (A) and the effective thrust (B). */
struct DynamicsJacobians {
    Mat6 A;
    Mat62 B;
};

inline DynamicsJacobians dynamics_jacobians(const LanderState& s, const EffectiveThrust& u, const PhysicsParams& p) {
    const double sa = std::sin(s.angle), ca = std::cos(s.angle);
    const double main_force = u.main * p.main_thrust;
    const double side_force = u.side * p.side_thrust;

    DynamicsJacobians J;
    J.A.setZero();
    J.A(0, 2) = 1;
    J.A(1, 3) = 1;
    J.A(2, 4) = (-ca * main_force - sa * side_force) / p.mass;
    J.A(3, 4) = (-sa * main_force + ca * side_force) / p.mass;
    J.A(4, 5) = 1;

    J.B.setZero();
    J.B(2, 0) = -sa * p.main_thrust / p.mass;
    J.B(2, 1) = ca * p.side_thrust / p.mass;
    J.B(3, 0) = ca * p.main_thrust / p.mass;
    J.B(3, 1) = sa * p.side_thrust / p.mass;
    J.B(5, 1) = p.torque_constant / p.inertia;
    return J;
}

inline DynamicsJacobians dynamics_jacobians(const LanderState& s, const Action& a, const PhysicsParams& p) {
    return dynamics_jacobians(s, gate_action(a), p);
}

/**
 * One semi-implicit Euler step of free flight: velocities first, then positions
 * from the updated velocities. Contact flags are left untouched.
 */
inline LanderState semi_implicit_update(const LanderState& s, const Vec6& d, double dt) {
    LanderState n = s;
    n.vx = s.vx + dt * d[2];
    n.vy = s.vy + dt * d[3];
    n.angular_rate = s.angular_rate + dt * d[5];
    n.x = s.x + dt * n.vx;
    n.y = s.y + dt * n.vy;
    n.angle = s.angle + dt * n.angular_rate;
    return n;
}

inline LanderState integrate_free_flight(const LanderState& s, const EffectiveThrust& u, const PhysicsParams& p) {
    return semi_implicit_update(s, dynamics(s, u, p), p.dt);
}

/**
 * Jacobians of `integrate_free_flight()`: x_{t+1} = F(x_t, u_t).
 * Returns dF/dx (6x6) and dF/du (6x2) w.r.t. effective thrust.
 */
inline DynamicsJacobians step_jacobians(const LanderState& s, const EffectiveThrust& u, const PhysicsParams& p) {
    const auto c = dynamics_jacobians(s, u, p);
    const double dt = p.dt;
    // Velocity rows: v' = v + dt * a(x, u).
    // Position rows: q' = q + dt * v'.
    DynamicsJacobians J;
    J.A.setIdentity();
    J.B.setZero();
    const int vel[3] = {2, 3, 5};
    const int pos[3] = {0, 1, 4};
    for (int k = 0; k < 3; ++k) {
        J.A.row(vel[k]) += dt * c.A.row(vel[k]);
        J.B.row(vel[k]) = dt * c.B.row(vel[k]);
    }
    for (int k = 0; k < 3; ++k) {
        J.A.row(pos[k]) += dt * J.A.row(vel[k]);
        J.B.row(pos[k]) = dt * J.B.row(vel[k]);
    }
    return J;
}

inline Vec8 observe(const LanderState& s, const ObservationScale& scale = {}) {
    Vec8 o;
    o << s.x * scale.position, s.y * scale.position, s.vx * scale.velocity, s.vy * scale.velocity, s.angle,
        s.angular_rate * scale.angular_rate, static_cast<double>(s.leg_left), static_cast<double>(s.leg_right);
    return o;
}

inline double shaping(const LanderState& s, const RewardParams& r) {
    return -r.distance_weight * std::hypot(s.x, s.y) - r.speed_weight * std::hypot(s.vx, s.vy) -
           r.angle_weight * std::abs(s.angle) + r.leg_weight * (s.leg_left + s.leg_right);
}

inline double terminal_bonus(TerminalEvent event, const RewardParams& r) {
    switch (event) {
    case TerminalEvent::Landed: return r.land_bonus;
    case TerminalEvent::Crashed: return r.crash_penalty;
    case TerminalEvent::OutOfBounds: return r.out_of_bounds_penalty;
    default: return 0.0;
    }
}

inline double reward(const LanderState& prev, const LanderState& next, const EffectiveThrust& thrust,
                     TerminalEvent event, const RewardParams& r = {}) {
    return shaping(next, r) - shaping(prev, r) - r.main_cost * thrust.main - r.side_cost * std::abs(thrust.side) +
           terminal_bonus(event, r);
}

inline double reward(const LanderState& prev, const LanderState& next, const Action& action, TerminalEvent event,
                     const RewardParams& r = {}) {
    return reward(prev, next, gate_action(action), event, r);
}

inline bool is_solved_return(double cumulative, const RewardParams& r = {}) {
    return cumulative >= r.solved_threshold;
}

/**
 * Validates an initial-state request and returns it unchanged (contact flags derived from height).
 */
inline LanderState reset_state(const LanderState& spec, const EnvConfig& cfg) {
    if (!spec.finite()) {
        fail(ErrorKind::InvalidInitialState, "initial state has non-finite fields");
    }
    if (spec.y < 0) {
        fail(ErrorKind::InvalidInitialState, "initial state is below ground");
    }
    if (std::abs(spec.x) > cfg.x_bound || spec.y > cfg.y_ceiling) {
        fail(ErrorKind::InvalidInitialState, "initial state is out of bounds");
    }
    LanderState s = spec;
    const int contact = s.y <= cfg.contact.leg_contact_height ? 1 : 0;
    s.leg_left = contact;
    s.leg_right = contact;
    return s;
}

struct StepResult {
    LanderState state;
    double reward = 0;
    TerminalEvent event = TerminalEvent::None;
};

/**
 * Episode-level simulator. Holds the state, the step counter and the resting counter
 * used to detect a completed landing. One instance per thread.
 */
class LanderEnv {
public:
    explicit LanderEnv(EnvConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.physics.validate(); }

    const EnvConfig& config() const { return cfg_; }

    const LanderState& reset(const LanderState& spec) {
        state_ = reset_state(spec, cfg_);
        steps_ = 0;
        resting_ = 0;
        event_ = TerminalEvent::None;
        return state_;
    }

    const LanderState& state() const { return state_; }
    int steps() const { return steps_; }
    TerminalEvent event() const { return event_; }
    bool terminal() const { return event_ != TerminalEvent::None; }

    Vec8 observation() const { return observe(state_, cfg_.observation); }

    StepResult step(const Action& action) { return step(gate_action(action)); }

    /** Step with effective thrusts directly (used to replay planned sequences). */
    StepResult step(const EffectiveThrust& thrust) {
        if (terminal()) {
            fail(ErrorKind::StepOnTerminalState, "step called after terminal event " + std::string(to_string(event_)));
        }
        const auto& p = cfg_.physics;
        const auto& c = cfg_.contact;
        const LanderState prev = state_;

        Vec6 d = dynamics(prev, thrust, p);
        if (prev.y < c.leg_contact_height) {
            const double pen = c.leg_contact_height - prev.y;
            d[3] += std::max(0.0, c.stiffness * pen - c.damping * prev.vy) / p.mass;
            d[2] -= c.friction * prev.vx;
            d[5] -= c.angular_stiffness * prev.angle + c.angular_damping * prev.angular_rate;
        }
        LanderState next = semi_implicit_update(prev, d, p.dt);
        const int contact = next.y <= c.leg_contact_height ? 1 : 0;
        next.leg_left = contact;
        next.leg_right = contact;
        ++steps_;

        TerminalEvent event = TerminalEvent::None;
        if (!next.finite()) {
            event = TerminalEvent::Crashed;
        } else if (contact && (std::abs(next.angle) > c.max_contact_angle ||
                               next.y < c.leg_contact_height - c.compression_limit)) {
            event = TerminalEvent::Crashed;
        } else if (std::abs(next.x) > cfg_.x_bound || next.y > cfg_.y_ceiling) {
            event = TerminalEvent::OutOfBounds;
        } else {
            if (contact && std::abs(next.vx) < c.rest_speed && std::abs(next.vy) < c.rest_speed) {
                ++resting_;
            } else {
                resting_ = 0;
            }
            if (resting_ >= c.rest_steps) {
                event = TerminalEvent::Landed;
            } else if (steps_ >= cfg_.max_steps) {
                event = TerminalEvent::Timeout;
            }
        }

        const double r = reward(prev, next, thrust, event, cfg_.reward);
        state_ = next;
        event_ = event;
        return StepResult{next, r, event};
    }

private:
    EnvConfig cfg_;
    LanderState state_;
    int steps_ = 0;
    int resting_ = 0;
    TerminalEvent event_ = TerminalEvent::None;
};

} // namespace modeswitch

#endif
