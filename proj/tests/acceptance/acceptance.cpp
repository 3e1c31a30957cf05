// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.
#include <modeswitch/cli.hpp>
#include <modeswitch/modeswitch.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

#include <unistd.h>

using namespace modeswitch;
namespace fs = std::filesystem;

namespace {

constexpr double kFreeFallTol = 1e-12;
constexpr double kDynamicsJacTol = 1e-6;
constexpr double kLatentJacTol = 1e-6;
constexpr double kObjectiveGradTol = 1e-4;
constexpr double kLeakyTol = 1e-3;
constexpr double kKinkMargin = 1e-4;
constexpr double kFdStep = 1e-6;
constexpr double kKnnAgreement = 0.90;
constexpr double kLossFraction = 0.10;
constexpr double kPlantedObjective = 1e-4;
constexpr int kPlantedRequired = 9;
constexpr double kApproachRatio = 0.5;
constexpr int kApproachRequired = 8;
constexpr double kSolvedReturn = 200.0;
constexpr double kTrainedMean = 100.0;

const fs::path kData = MODESWITCH_DATA_DIR;

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
    failures += pass ? 0 : 1;
}

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

double max_rel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-12);
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

std::shared_ptr<const PolicyNet> shipped_policy() {
    static const auto p = std::make_shared<const PolicyNet>(io::load_policy(kData / "policy.json"));
    return p;
}

void free_fall() {
    Timer t;
    const PhysicsParams p;
    const double g = p.gravity / p.mass;
    LanderState s;
    double worst = 0;
    for (int n = 1; n <= 500; ++n) {
        s = integrate_free_flight(s, EffectiveThrust{}, p);
        const double vy = -n * p.dt * g;
        const double dy = -p.dt * p.dt * g * n * (n + 1) / 2.0;
        worst = std::max({worst, std::abs(s.vy - vy) / std::abs(vy), std::abs(s.y - dy) / std::abs(dy)});
    }
    const double secs = t.seconds();
    report("free fall closed form", worst <= kFreeFallTol && secs < 1.0,
           "max relative error " + num(worst) + " over 500 steps in " + num(secs) + " s");
}

Eigen::MatrixXd fd_dynamics(const LanderState& s, const EffectiveThrust& u, const PhysicsParams& p) {
    Eigen::MatrixXd out(6, 8);
    for (int i = 0; i < 8; ++i) {
        Vec6 xp = s.continuous(), xm = xp;
        EffectiveThrust up = u, um = u;
        if (i < 6) {
            xp[i] += kFdStep;
            xm[i] -= kFdStep;
        } else if (i == 6) {
            up.main += kFdStep;
            um.main -= kFdStep;
        } else {
            up.side += kFdStep;
            um.side -= kFdStep;
        }
        out.col(i) = (dynamics(LanderState::from_continuous(xp), up, p) -
                      dynamics(LanderState::from_continuous(xm), um, p)) / (2 * kFdStep);
    }
    return out;
}

Eigen::MatrixXd fd_latent(const PolicyNet& net, const Vec8& o) {
    Eigen::MatrixXd out(net.hidden(), 8);
    for (int i = 0; i < 8; ++i) {
        Vec8 a = o, b = o;
        a[i] += kFdStep;
        b[i] -= kFdStep;
        out.col(i) = (net.latent(a) - net.latent(b)) / (2 * kFdStep);
    }
    return out;
}

void jacobian_suite() {
    Timer t;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u11(-1, 1), u01(0, 1);
    const PhysicsParams p;

    double dyn = 0;
    for (int n = 0; n < 100; ++n) {
        LanderState s;
        s.x = u11(rng);
        s.y = 1 + u11(rng);
        s.vx = 2 * u11(rng);
        s.vy = 2 * u11(rng);
        s.angle = u11(rng);
        s.angular_rate = 2 * u11(rng);
        const EffectiveThrust u{u01(rng), u11(rng)};
        const auto j = dynamics_jacobians(s, u, p);
        Eigen::MatrixXd an(6, 8);
        an << j.A, j.B;
        dyn = std::max(dyn, max_rel(an, fd_dynamics(s, u, p)));
    }

    auto random_obs = [&] {
        Vec8 o;
        for (int i = 0; i < 6; ++i) {
            o[i] = 1.5 * u11(rng);
        }
        o[6] = u01(rng) < 0.3 ? 1.0 : 0.0;
        o[7] = u01(rng) < 0.3 ? 1.0 : 0.0;
        return o;
    };
    const Activation leaky{Activation::Kind::LeakyReLU, 0.01};
    double lat = 0, lat_leaky = 0;
    int leaky_used = 0;
    for (int n = 0; n < 100; ++n) {
        const PolicyNet net = PolicyNet::random(32, Activation{}, 7000 + static_cast<std::uint64_t>(n));
        const Vec8 o = random_obs();
        lat = std::max(lat, max_rel(net.latent_jacobian(o), fd_latent(net, o)));
    }
    for (int n = 0; n < 1000 && leaky_used < 100; ++n) {
        const PolicyNet net = PolicyNet::random(32, leaky, 9000 + static_cast<std::uint64_t>(n));
        const Vec8 o = random_obs();
        if (net.kink_margin(o) < kKinkMargin) {
            continue;
        }
        ++leaky_used;
        lat_leaky = std::max(lat_leaky, max_rel(net.latent_jacobian(o), fd_latent(net, o)));
    }

    const EnvConfig env;
    const auto grad = gradient_check_random(shipped_policy(), env, 100, 31, 40);
    auto leaky_policy = std::make_shared<const PolicyNet>(PolicyNet::random(shipped_policy()->hidden(), leaky, 77));
    const auto grad_leaky = gradient_check_random(leaky_policy, env, 100, 37, 40);

    const double secs = t.seconds();
    const bool pass = dyn < kDynamicsJacTol && lat < kLatentJacTol && grad.samples == 100 &&
                      grad.max_relative_error < kObjectiveGradTol && leaky_used == 100 && lat_leaky < kLeakyTol &&
                      grad_leaky.samples > 0 && grad_leaky.max_relative_error < kLeakyTol && secs < 120.0;
    report("Jacobian suite", pass,
           "dynamics " + num(dyn) + ", latent(Mish) " + num(lat) + ", objective(Mish,T=40) " +
               num(grad.max_relative_error) + ", latent(LeakyReLU) " + num(lat_leaky) + ", objective(LeakyReLU) " +
               num(grad_leaky.max_relative_error) + " over " + std::to_string(grad_leaky.samples) + " samples (" +
               std::to_string(grad_leaky.kink_skipped) + " kink-adjacent skipped), " + num(secs) + " s");
}

void pacmap_structure() {
    Timer t;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n01(0, 1);
    pacmap::Matrix centers(3, 50), x(600, 50);
    std::vector<int> labels(600);
    for (int c = 0; c < 3; ++c) {
        for (int d = 0; d < 50; ++d) {
            centers(c, d) = 3 * n01(rng);
        }
    }
    for (int i = 0; i < 600; ++i) {
        labels[static_cast<std::size_t>(i)] = i % 3;
        for (int d = 0; d < 50; ++d) {
            x(i, d) = centers(i % 3, d) + n01(rng);
        }
    }
    pacmap::Config cfg;
    cfg.seed = 3;
    const auto r = pacmap::fit(x, cfg);
    const double agreement = pacmap::knn_label_agreement(r.coordinates, labels, 10);
    const double ratio = r.loss_history.back() / r.loss_history.front();
    const double secs = t.seconds();
    report("PaCMAP structure preservation", agreement >= kKnnAgreement && ratio < kLossFraction && secs < 120.0,
           "10-NN agreement " + num(agreement) + ", final/initial loss " + num(ratio) + " (gate < " +
               num(kLossFraction) + "), " + num(secs) + " s");
}

void planted_goals() {
    Timer t;
    const EnvConfig env;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> um(0.2, 0.8), us(-0.5, 0.5);
    SolverConfig solver;
    solver.max_iters = 500;
    solver.restarts = 8;
    int ok = 0, problems = 0;
    std::string values;
    for (std::uint64_t k = 0; problems < 10; ++k) {
        PlanProblem p;
        p.policy = shipped_policy();
        p.horizon = 40;
        p.x0 = sample_initial_state(env.initial, 99, k);
        ThrustSequence u(40);
        for (auto& a : u) {
            a = EffectiveThrust{um(rng), us(rng)};
        }
        const auto xs = rollout_model(p.x0, u, p.physics);
        const bool feasible = std::all_of(xs.begin() + 1, xs.end(), [&](const LanderState& s) {
            return s.y > p.safety_floor && std::abs(s.x) < p.x_bound;
        });
        if (!feasible) {
            continue;
        }
        ++problems;
        p.goal = p.policy->latent(observe(xs.back(), p.observation));
        const auto r = plan(p, solver);
        ok += r.terminal_objective < kPlantedObjective ? 1 : 0;
        values += (values.empty() ? "" : " ") + num(r.terminal_objective);
    }
    const double secs = t.seconds();
    report("planner on planted goals", ok >= kPlantedRequired && secs < 300.0,
           std::to_string(ok) + "/10 below " + num(kPlantedObjective) + " [" + values + "], " + num(secs) + " s");
}

void fixture_criteria() {
    Timer t;
    const io::json doc = io::read_json(kData / "fixtures.json");
    const FixtureSet set = io::fixture_set_from_json(doc);
    SwitchOptions options;
    options.solver = io::solver_from_json(doc.value("solver", io::json()), SolverConfig{});
    const Dataset data = collect_rollouts(*shipped_policy(), set.env, set.episodes, set.collect_seed);
    int approach = 0;
    bool up = false, down = false;
    std::string lines;
    for (const auto& f : set.fixtures) {
        const auto r = switch_experiment(shipped_policy(), set.env, data, f.spec, options);
        const double base = r.baseline.cumulative_reward, sw = r.switched.cumulative_reward;
        const double ratio = r.plan_failed() ? std::numeric_limits<double>::infinity()
                                             : r.switched_summary().min_distance / r.baseline_summary().min_distance;
        approach += ratio <= kApproachRatio ? 1 : 0;
        up = up || (f.direction == FlipDirection::FailedToSolved && base < 0 && sw >= kSolvedReturn);
        down = down || (f.direction == FlipDirection::SolvedToFailed && base >= kSolvedReturn && sw < 0);
        std::cout << "  " << to_string(f.direction) << " ep" << f.spec.source.episode << ":step" << f.spec.source.step
                  << " -> ep" << f.spec.goal.episode << ":step" << f.spec.goal.step << " T=" << f.spec.horizon
                  << " baseline " << num(base) << " switched " << num(sw) << " distance ratio " << num(ratio)
                  << std::endl;
    }
    const double secs = t.seconds();
    const int total = static_cast<int>(set.fixtures.size());
    report("latent approach", total >= 10 && approach >= kApproachRequired && secs < 600.0,
           std::to_string(approach) + "/" + std::to_string(total) + " fixtures with switched/baseline minimum distance <= " +
               num(kApproachRatio) + ", " + num(secs) + " s");
    report("outcome flip in both directions", up && down && secs < 900.0,
           std::string("failed->solved ") + (up ? "yes" : "no") + ", solved->failed " + (down ? "yes" : "no"));
}

void trainer() {
    Timer t;
    const EnvConfig env;
    const auto trained = train_baseline(env, TrainConfig{}, 1);
    const auto stats = evaluate_policy(trained.policy, env, 100, 7);
    const Dataset rollouts = collect_rollouts(trained.policy, env, 1000, 42);
    const auto failed = std::count_if(rollouts.episodes.begin(), rollouts.episodes.end(),
                                      [](const EpisodeRecord& e) { return !e.solved(); });
    const double secs = t.seconds();
    const bool matches_shipped = trained.policy.same_parameters(*shipped_policy());
    report("baseline trainer adequacy", stats.mean >= kTrainedMean && failed >= 1 && secs < 1800.0,
           "mean return " + num(stats.mean) + " over 100 episodes, " + std::to_string(failed) +
               " failed of 1000 rollouts, " + num(secs) + " s" +
               (matches_shipped ? ", identical to shipped policy" : ", differs from shipped policy"));
}

bool run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "modeswitch");
    std::vector<const char*> argv;
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    std::ostringstream out, err;
    const int code = cli::cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
    if (code != 0) {
        std::cout << "  " << err.str();
    }
    return code == 0;
}

void determinism() {
    Timer t;
    const fs::path root = fs::temp_directory_path() / ("modeswitch_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const std::string policy = (kData / "policy.json").string();
    bool ran = true;
    for (const char* tag : {"a", "b"}) {
        const fs::path d = root / tag;
        const std::string ds = (d / "data").string();
        ran = ran && run_cli({"collect", "--policy", policy, "--episodes", "40", "--seed", "42", "--out", ds});
        ran = ran && run_cli({"embed", "--dataset", ds, "--max-episodes", "10"});
        ran = ran && run_cli({"plan", "--dataset", ds, "--source", "ep0:step5", "--goal", "ep1:step20", "--out",
                              (d / "plan.json").string()});
        ran = ran && run_cli({"switch", "--dataset", ds, "--source", "ep2:step0", "--goal", "ep3:step20", "--out",
                              (d / "report").string()});
    }
    int files = 0, differing = 0;
    if (ran) {
        for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
            if (!entry.is_regular_file()) {
                continue;
            }
            ++files;
            const fs::path other = root / "b" / fs::relative(entry.path(), root / "a");
            if (!fs::exists(other) || io::read_file(entry.path()) != io::read_file(other)) {
                ++differing;
            }
        }
    }
    fs::remove_all(root);
    report("end-to-end determinism", ran && files > 0 && differing == 0,
           std::to_string(files) + " files from collect/embed/plan/switch compared, " + std::to_string(differing) +
               " differ, " + num(t.seconds()) + " s");
}

} // namespace

int main() {
    try {
        free_fall();
        jacobian_suite();
        pacmap_structure();
        planted_goals();
        fixture_criteria();
        trainer();
        determinism();
    } catch (const std::exception& e) {
        std::cout << "FAIL acceptance aborted: " << e.what() << std::endl;
        return 1;
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
