#include <modeswitch/lander.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace modeswitch;

namespace {

// Scalar transcription of the equations of motion, written out term by term.
std::array<double, 6> scalar_f(const LanderState& s, double u_main, double u_side, const PhysicsParams& p) {
    double m_eff = 0.0;
    if (u_main > 0.0) {
        m_eff = (u_main + 1.0) / 2.0;
    }
    const double s_eff = u_side;
    const double fm = p.main_thrust * m_eff;
    const double fs = p.side_thrust * s_eff;
    return {s.vx,
            s.vy,
            (-std::sin(s.angle) * fm + std::cos(s.angle) * fs) / p.mass,
            (std::cos(s.angle) * fm + std::sin(s.angle) * fs - p.gravity) / p.mass,
            s.angular_rate,
            p.torque_constant * s_eff / p.inertia};
}

LanderState random_state(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> pos(-1, 1), vel(-2, 2), ang(-1, 1);
    LanderState s;
    s.x = pos(rng);
    s.y = 1.0 + pos(rng);
    s.vx = vel(rng);
    s.vy = vel(rng);
    s.angle = ang(rng);
    s.angular_rate = vel(rng);
    return s;
}

double matrix_rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-12});
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

} // namespace

TEST(Dynamics, MatchesScalarTranscription) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> act(-1, 1);
    const PhysicsParams p;
    for (int n = 0; n < 200; ++n) {
        const LanderState s = random_state(rng);
        const Action a(act(rng), act(rng));
        const Vec6 d = dynamics(s, a, p);
        const auto ref = scalar_f(s, a.main, a.side, p);
        for (int i = 0; i < 6; ++i) {
            EXPECT_NEAR(d[i], ref[static_cast<std::size_t>(i)], 1e-12) << "component " << i;
        }
    }
}

TEST(Dynamics, GateIsHalfToFullThrottle) {
    EXPECT_EQ(gate_action(Action(-0.5, 0.2)).main, 0.0);
    EXPECT_EQ(gate_action(Action(0.0, 0.2)).main, 0.0);
    EXPECT_DOUBLE_EQ(gate_action(Action(1e-9, 0)).main, 0.5 + 0.5e-9);
    EXPECT_DOUBLE_EQ(gate_action(Action(1.0, 0)).main, 1.0);
    EXPECT_DOUBLE_EQ(gate_action(Action(0.0, -0.3)).side, -0.3);
    // Commands are clamped to the box.
    EXPECT_DOUBLE_EQ(gate_action(Action(3.0, -7.0)).main, 1.0);
    EXPECT_DOUBLE_EQ(gate_action(Action(3.0, -7.0)).side, -1.0);
}

TEST(Dynamics, ActionFromThrustInvertsGateAboveHalf) {
    for (double m : {0.0, 0.6, 0.75, 1.0}) {
        const EffectiveThrust u{m, 0.4};
        EXPECT_DOUBLE_EQ(gate_action(action_from_thrust(u)).main, m);
        EXPECT_DOUBLE_EQ(gate_action(action_from_thrust(u)).side, 0.4);
    }
}

TEST(Dynamics, GateJacobianMatchesFiniteDifferencesAwayFromKink) {
    const double h = 1e-6;
    for (double m : {-0.7, -0.1, 0.2, 0.9}) {
        const Action a(m, 0.3);
        const auto J = gate_jacobian(a);
        const double fd = (gate_action(Action(m + h, 0.3)).main - gate_action(Action(m - h, 0.3)).main) / (2 * h);
        EXPECT_NEAR(J(0, 0), fd, 1e-9);
        EXPECT_EQ(J(1, 1), 1.0);
    }
    try {
        gate_jacobian(Action(0.0, 0.0));
        FAIL() << "expected NonDifferentiablePoint";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonDifferentiablePoint);
    }
}

TEST(Dynamics, FreeFallClosedForm) {
    PhysicsParams p;
    LanderState s;
    s.y = 0;
    const double dt = p.dt, g = p.gravity / p.mass;
    for (int n = 1; n <= 500; ++n) {
        s = integrate_free_flight(s, EffectiveThrust{}, p);
        const double vy = -n * dt * g;
        const double dy = -dt * dt * g * n * (n + 1) / 2.0;
        EXPECT_LE(std::abs(s.vy - vy), 1e-12 * std::abs(vy));
        EXPECT_LE(std::abs(s.y - dy), 1e-12 * std::abs(dy));
        EXPECT_EQ(s.x, 0.0);
        EXPECT_EQ(s.vx, 0.0);
    }
}

TEST(Dynamics, QuarterStepReference) {
    PhysicsParams p, fine = p;
    fine.dt = p.dt / 4;
    LanderState coarse_s;
    coarse_s.y = 1.0;
    LanderState fine_s = coarse_s;
    for (int t = 0; t < 50; ++t) {
        const EffectiveThrust u{0.49 + 0.02 * std::sin(t / 5.0), 0.05 * std::sin(t / 4.0)};
        coarse_s = integrate_free_flight(coarse_s, u, p);
        for (int k = 0; k < 4; ++k) {
            fine_s = integrate_free_flight(fine_s, u, fine);
        }
    }
    EXPECT_LT(std::abs(coarse_s.x - fine_s.x), 1e-3);
    EXPECT_LT(std::abs(coarse_s.y - fine_s.y), 1e-3);
    EXPECT_LT(std::abs(coarse_s.angle - fine_s.angle), 1e-3);
}

// First-order method: refining dt to dt/4 shifts position by about (3 dt / 8) times the velocity change.
TEST(Dynamics, QuarterStepGapIsFirstOrder) {
    PhysicsParams p, fine = p;
    fine.dt = p.dt / 4;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> act(0.4, 0.6), side(-0.2, 0.2);
    LanderState start;
    start.y = 1.0;
    start.angle = 0.1;
    LanderState coarse_s = start, fine_s = start;
    for (int t = 0; t < 50; ++t) {
        const EffectiveThrust u{act(rng), side(rng)};
        coarse_s = integrate_free_flight(coarse_s, u, p);
        for (int k = 0; k < 4; ++k) {
            fine_s = integrate_free_flight(fine_s, u, fine);
        }
    }
    const double k = 0.375 * p.dt;
    EXPECT_NEAR(coarse_s.x - fine_s.x, k * (coarse_s.vx - start.vx), 1e-5);
    EXPECT_NEAR(coarse_s.y - fine_s.y, k * (coarse_s.vy - start.vy), 1e-5);
}

TEST(Dynamics, JacobiansMatchCentralDifferences) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> um(0, 1), us(-1, 1);
    const PhysicsParams p;
    const double h = 1e-6;
    double worst_cont = 0, worst_step = 0;
    for (int n = 0; n < 100; ++n) {
        const LanderState s = random_state(rng);
        const EffectiveThrust u{um(rng), us(rng)};
        Eigen::Matrix<double, 6, 8> fd_c, fd_s, an_c, an_s;
        const auto jc = dynamics_jacobians(s, u, p);
        const auto js = step_jacobians(s, u, p);
        an_c << jc.A, jc.B;
        an_s << js.A, js.B;
        for (int i = 0; i < 8; ++i) {
            Vec6 xp = s.continuous(), xm = xp;
            EffectiveThrust up = u, um_ = u;
            if (i < 6) {
                xp[i] += h;
                xm[i] -= h;
            } else if (i == 6) {
                up.main += h;
                um_.main -= h;
            } else {
                up.side += h;
                um_.side -= h;
            }
            const auto sp = LanderState::from_continuous(xp), sm = LanderState::from_continuous(xm);
            fd_c.col(i) = (dynamics(sp, up, p) - dynamics(sm, um_, p)) / (2 * h);
            fd_s.col(i) = (integrate_free_flight(sp, up, p).continuous() - integrate_free_flight(sm, um_, p).continuous()) /
                          (2 * h);
        }
        worst_cont = std::max(worst_cont, matrix_rel_err(an_c, fd_c));
        worst_step = std::max(worst_step, matrix_rel_err(an_s, fd_s));
    }
    EXPECT_LT(worst_cont, 1e-6);
    EXPECT_LT(worst_step, 1e-6);
}

TEST(Reward, HandEvaluatedCases) {
    const RewardParams r;
    LanderState s;
    s.y = 1.0;
    EXPECT_NEAR(reward(s, s, Action(1.0, 0.0), TerminalEvent::None, r), -0.30, 1e-15);
    EXPECT_NEAR(reward(s, s, Action(-1.0, -1.0), TerminalEvent::None, r), -0.03, 1e-15);
    EXPECT_NEAR(reward(s, s, Action(-1.0, 0.0), TerminalEvent::Landed, r), 100.0, 1e-15);
    EXPECT_NEAR(reward(s, s, Action(-1.0, 0.0), TerminalEvent::Crashed, r), -100.0, 1e-15);

    // Moving from (0.3, 0.4) at rest to the pad: distance term improves by 100 * 0.5.
    LanderState a, b;
    a.x = 0.3;
    a.y = 0.4;
    EXPECT_NEAR(reward(a, b, Action(-1.0, 0.0), TerminalEvent::None, r), 50.0, 1e-12);
    // Speed and angle terms.
    LanderState c;
    c.vx = 0.6;
    c.vy = -0.8;
    c.angle = -0.25;
    EXPECT_NEAR(reward(b, c, Action(-1.0, 0.0), TerminalEvent::None, r), -100.0 - 25.0, 1e-12);
    // Two legs down add 2 * 10.
    LanderState d = b;
    d.leg_left = d.leg_right = 1;
    EXPECT_NEAR(reward(b, d, Action(-1.0, 0.0), TerminalEvent::None, r), 20.0, 1e-12);
    EXPECT_TRUE(is_solved_return(200.0));
    EXPECT_FALSE(is_solved_return(199.999));
}

TEST(Env, ResetValidation) {
    LanderEnv env;
    LanderState bad;
    bad.y = -0.1;
    EXPECT_THROW(env.reset(bad), Error);
    bad.y = std::nan("");
    EXPECT_THROW(env.reset(bad), Error);
    bad.y = 1.0;
    bad.x = 5.0;
    try {
        env.reset(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidInitialState);
    }
}

TEST(Env, StepAfterTerminalThrows) {
    EnvConfig cfg;
    cfg.max_steps = 3;
    LanderEnv env(cfg);
    LanderState s;
    s.y = 2.0;
    env.reset(s);
    StepResult r;
    for (int i = 0; i < 3; ++i) {
        r = env.step(Action(-1, 0));
    }
    EXPECT_EQ(r.event, TerminalEvent::Timeout);
    try {
        env.step(Action(-1, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::StepOnTerminalState);
    }
}

TEST(Env, HardImpactCrashes) {
    LanderEnv env;
    LanderState s;
    s.y = 1.0;
    env.reset(s);
    while (!env.terminal()) {
        env.step(Action(-1, 0));
    }
    EXPECT_EQ(env.event(), TerminalEvent::Crashed);
}

TEST(Env, LeavingTheSideIsOutOfBounds) {
    LanderEnv env;
    LanderState s;
    s.x = 0.99;
    s.y = 1.0;
    s.vx = 2.0;
    env.reset(s);
    const auto r = env.step(Action(-1, 0));
    EXPECT_EQ(r.event, TerminalEvent::OutOfBounds);
    EXPECT_LT(r.reward, -90);
}

TEST(Env, GentleTouchdownLands) {
    LanderEnv env;
    LanderState s;
    s.y = 0.002;
    env.reset(s);
    StepResult r;
    int guard = 0;
    while (!env.terminal() && guard++ < 200) {
        r = env.step(Action(-1, 0));
    }
    EXPECT_EQ(env.event(), TerminalEvent::Landed);
    EXPECT_EQ(r.state.leg_left, 1);
    EXPECT_EQ(r.state.leg_right, 1);
}

TEST(Env, ActionAndThrustStepsAgreeExactly) {
    LanderEnv a, b;
    LanderState s;
    s.y = 1.2;
    s.vx = 0.1;
    a.reset(s);
    b.reset(s);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int t = 0; t < 30; ++t) {
        const Action act(u(rng), u(rng));
        const auto ra = a.step(act);
        const auto rb = b.step(gate_action(act));
        EXPECT_EQ(ra.state, rb.state);
        EXPECT_EQ(ra.reward, rb.reward);
    }
}

TEST(Env, AirborneStepIsFreeFlight) {
    LanderEnv env;
    LanderState s;
    s.y = 1.3;
    s.angle = 0.2;
    env.reset(s);
    const EffectiveThrust u{0.7, -0.4};
    const auto r = env.step(u);
    EXPECT_EQ(r.state, integrate_free_flight(s, u, PhysicsParams{}));
}
