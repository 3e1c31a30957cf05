#include <modeswitch/analysis.hpp>
#include <modeswitch/planner.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace modeswitch;

namespace {

std::shared_ptr<const PolicyNet> mish_policy(std::uint64_t seed = 1, int h = 16) {
    return std::make_shared<const PolicyNet>(PolicyNet::random(h, Activation{}, seed));
}

PlanProblem base_problem(std::shared_ptr<const PolicyNet> policy, int horizon) {
    PlanProblem p;
    p.x0.x = 0.1;
    p.x0.y = 1.3;
    p.x0.vx = -0.2;
    p.x0.vy = -0.1;
    p.x0.angle = 0.05;
    p.horizon = horizon;
    p.policy = std::move(policy);
    p.goal = LatentVector::Zero(p.policy->hidden());
    p.safety_floor = -1e9;
    p.x_bound = 1e9;
    return p;
}

ThrustSequence random_thrusts(int T, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> m(0, 1), s(-1, 1);
    ThrustSequence u(static_cast<std::size_t>(T));
    for (auto& a : u) {
        a.main = m(rng);
        a.side = s(rng);
    }
    return u;
}

} // namespace

TEST(Planner, PackUnpackRoundTrip) {
    const auto u = random_thrusts(7, 3);
    const auto v = unpack(pack(u));
    ASSERT_EQ(v.size(), u.size());
    for (std::size_t t = 0; t < u.size(); ++t) {
        EXPECT_EQ(u[t], v[t]);
    }
}

TEST(Planner, ModelRolloutMatchesSimulatorWhileAirborne) {
    const auto u = random_thrusts(40, 5);
    LanderState x0;
    x0.y = 1.4;
    x0.vy = 0.3;
    const auto xs = rollout_model(x0, u, PhysicsParams{});
    LanderEnv env;
    env.reset(x0);
    for (std::size_t t = 0; t < u.size(); ++t) {
        const auto r = env.step(u[t]);
        if (r.state.y <= 0 || r.event != TerminalEvent::None) {
            break;
        }
        EXPECT_EQ(r.state, xs[t + 1]) << "step " << t;
    }
}

TEST(Planner, ObjectiveMatchesCompositionChain) {
    auto policy = mish_policy();
    PlanProblem p = base_problem(policy, 12);
    p.goal = policy->latent(Vec8::Constant(0.2));
    const auto u = random_thrusts(12, 9);
    LanderState s = p.x0;
    for (const auto& a : u) {
        s = integrate_free_flight(s, a, p.physics);
    }
    const LatentVector z = policy->latent(observe(s, p.observation));
    EXPECT_NEAR(objective(u, p), (z - p.goal).squaredNorm(), 1e-14);
}

TEST(Planner, MishGradientMatchesFiniteDifferences) {
    const auto r = gradient_check_random(mish_policy(2, 32), EnvConfig{}, 100, 17, 40);
    EXPECT_EQ(r.samples, 100);
    EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Planner, LeakyGradientAwayFromKinks) {
    auto policy = std::make_shared<const PolicyNet>(PolicyNet::random(32, Activation{Activation::Kind::LeakyReLU, 0.01}, 4));
    const auto r = gradient_check_random(policy, EnvConfig{}, 60, 23, 40);
    EXPECT_GT(r.samples, 0);
    EXPECT_LT(r.max_relative_error, 1e-3);
}

TEST(Planner, HorizonZeroEvaluatesInitialState) {
    auto policy = mish_policy();
    PlanProblem p = base_problem(policy, 0);
    p.goal = policy->latent(observe(p.x0)) + LatentVector::Constant(policy->hidden(), 0.1);
    const auto r = plan(p, SolverConfig{});
    EXPECT_TRUE(r.thrusts.empty());
    EXPECT_NEAR(r.terminal_objective, 0.01 * policy->hidden(), 1e-12);
    EXPECT_EQ(r.status, PlanStatus::Converged);
}

TEST(Planner, PlantedGoalIsRecovered) {
    auto policy = mish_policy(6, 32);
    PlanProblem p = base_problem(policy, 15);
    const auto known = random_thrusts(15, 31);
    const auto xs = rollout_model(p.x0, known, p.physics);
    p.goal = policy->latent(observe(xs.back(), p.observation));
    SolverConfig cfg;
    cfg.restarts = 4;
    const auto r = plan(p, cfg);
    EXPECT_LT(r.terminal_objective, 1e-4);
    for (const auto& u : r.thrusts) {
        EXPECT_GE(u.main, 0.0);
        EXPECT_LE(u.main, 1.0);
        EXPECT_GE(u.side, -1.0);
        EXPECT_LE(u.side, 1.0);
    }
}

TEST(Planner, SingleStepMatchesGridSearch) {
    auto policy = mish_policy(8, 16);
    PlanProblem p = base_problem(policy, 1);
    p.goal = policy->latent(observe(integrate_free_flight(p.x0, EffectiveThrust{0.37, -0.52}, p.physics)));
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 400; ++i) {
        for (int j = 0; j <= 400; ++j) {
            const ThrustSequence u{EffectiveThrust{i / 400.0, -1.0 + j / 200.0}};
            best = std::min(best, objective(u, p));
        }
    }
    SolverConfig cfg;
    cfg.restarts = 1;
    const auto r = plan(p, cfg);
    EXPECT_LE(r.terminal_objective, best + 1e-9);
    EXPECT_LT(r.iterations, 50);
    EXPECT_NEAR(r.thrusts[0].main, 0.37, 1e-3);
    EXPECT_NEAR(r.thrusts[0].side, -0.52, 1e-3);
}

TEST(Planner, IsDeterministic) {
    auto policy = mish_policy(3, 16);
    PlanProblem p = base_problem(policy, 10);
    p.goal = policy->latent(Vec8::Constant(-0.3));
    SolverConfig cfg;
    cfg.restarts = 3;
    cfg.seed = 42;
    const auto a = plan(p, cfg), b = plan(p, cfg);
    EXPECT_EQ(pack(a.thrusts), pack(b.thrusts));
    EXPECT_EQ(a.terminal_objective, b.terminal_objective);
    EXPECT_EQ(a.objective_trace, b.objective_trace);
}

TEST(Planner, ValidatesProblem) {
    auto policy = mish_policy();
    PlanProblem p = base_problem(policy, 5);
    p.goal = LatentVector::Zero(3);
    try {
        plan(p, SolverConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DimensionMismatch);
    }
    p = base_problem(policy, -1);
    EXPECT_THROW(plan(p, SolverConfig{}), Error);
}

TEST(Planner, PredictedStatesReplayInSimulator) {
    auto policy = mish_policy(12, 16);
    PlanProblem p = base_problem(policy, 20);
    p.safety_floor = 0.0;
    p.x_bound = 1.0;
    p.goal = policy->latent(Vec8::Constant(0.1));
    const auto r = plan(p, SolverConfig{});
    ASSERT_EQ(r.predicted_states.size(), 21u);
    LanderEnv env;
    env.reset(p.x0);
    for (std::size_t t = 0; t < r.thrusts.size() && !env.terminal(); ++t) {
        const auto s = env.step(r.thrusts[t]).state;
        if (s.y > 0) {
            EXPECT_LT((s.continuous() - r.predicted_states[t + 1].continuous()).norm(), 1e-9);
        }
    }
}
