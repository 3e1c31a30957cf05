#ifndef MODESWITCH_TRAINER_HPP
#define MODESWITCH_TRAINER_HPP

#include "error.hpp"
#include "lander.hpp"
#include "parallel.hpp"
#include "policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

/**
 * @file trainer.hpp
 *
 * @brief Policy evaluation and a seeded evolution-strategy trainer.
 */

namespace modeswitch {

/** Draws initial states uniformly from `EnvConfig::initial`. Deterministic per (seed, index). */
inline LanderState sample_initial_state(const InitialStateRanges& r, std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](const std::array<double, 2>& lim) { return lim[0] + (lim[1] - lim[0]) * unit(rng); };
    LanderState s;
    s.x = draw(r.x);
    s.y = draw(r.y);
    s.vx = draw(r.vx);
    s.vy = draw(r.vy);
    s.angle = draw(r.angle);
    s.angular_rate = draw(r.angular_rate);
    return s;
}

struct EpisodeSummary {
    double cumulative_reward = 0;
    TerminalEvent event = TerminalEvent::None;
    int steps = 0;
};

/** Run `policy` from `initial` until a terminal event. */
inline EpisodeSummary run_episode(const PolicyNet& policy, const EnvConfig& cfg, const LanderState& initial) {
    LanderEnv env(cfg);
    env.reset(initial);
    EpisodeSummary out;
    while (!env.terminal()) {
        const auto r = env.step(policy.forward(env.observation()));
        out.cumulative_reward += r.reward;
        out.event = r.event;
    }
    out.steps = env.steps();
    return out;
}

enum class Outcome { Solved, Crashed, Timeout, OutOfBounds, Failed };

inline std::string_view to_string(Outcome o) {
    switch (o) {
    case Outcome::Solved: return "Solved";
    case Outcome::Crashed: return "Crashed";
    case Outcome::Timeout: return "Timeout";
    case Outcome::OutOfBounds: return "OutOfBounds";
    case Outcome::Failed: return "Failed";
    }
    return "Failed";
}

inline Outcome outcome_from_string(std::string_view s) {
    for (auto o : {Outcome::Solved, Outcome::Crashed, Outcome::Timeout, Outcome::OutOfBounds, Outcome::Failed}) {
        if (to_string(o) == s) {
            return o;
        }
    }
    fail(ErrorKind::SchemaMismatch, "unknown outcome '" + std::string(s) + "'");
}

/**
 * Solved iff the return reaches the solved threshold (inclusive). Otherwise the
 * terminal event names the failure; a landing that scored too little is `Failed`.
 */
inline Outcome label_outcome(double cumulative, TerminalEvent event, const RewardParams& r = {}) {
    if (is_solved_return(cumulative, r)) {
        return Outcome::Solved;
    }
    switch (event) {
    case TerminalEvent::Crashed: return Outcome::Crashed;
    case TerminalEvent::Timeout: return Outcome::Timeout;
    case TerminalEvent::OutOfBounds: return Outcome::OutOfBounds;
    default: return Outcome::Failed;
    }
}

struct EvaluationStats {
    double mean = 0;
    double min = 0;
    double max = 0;
    std::vector<double> returns;
    std::vector<Outcome> outcomes;
    int solved = 0;
    int crashed = 0;
    int timeout = 0;
    int out_of_bounds = 0;
    int failed_other = 0;

    int failures() const { return static_cast<int>(returns.size()) - solved; }
};

/**
 * Evaluate over `n_episodes` initial states drawn with `seed` (episode i uses sampler index i).
 */
inline EvaluationStats evaluate_policy(const PolicyNet& policy, const EnvConfig& cfg, int n_episodes,
                                       std::uint64_t seed, int threads = default_thread_count()) {
    if (n_episodes < 1) {
        fail(ErrorKind::InvalidArgument, "n_episodes must be >= 1");
    }
    std::vector<EpisodeSummary> runs(static_cast<std::size_t>(n_episodes));
    parallel_for(
        runs.size(),
        [&](std::size_t i) { runs[i] = run_episode(policy, cfg, sample_initial_state(cfg.initial, seed, i)); },
        threads);

    EvaluationStats stats;
    stats.min = runs.front().cumulative_reward;
    stats.max = runs.front().cumulative_reward;
    double total = 0;
    for (const auto& r : runs) {
        stats.returns.push_back(r.cumulative_reward);
        const Outcome o = label_outcome(r.cumulative_reward, r.event, cfg.reward);
        stats.outcomes.push_back(o);
        total += r.cumulative_reward;
        stats.min = std::min(stats.min, r.cumulative_reward);
        stats.max = std::max(stats.max, r.cumulative_reward);
        switch (o) {
        case Outcome::Solved: ++stats.solved; break;
        case Outcome::Crashed: ++stats.crashed; break;
        case Outcome::Timeout: ++stats.timeout; break;
        case Outcome::OutOfBounds: ++stats.out_of_bounds; break;
        case Outcome::Failed: ++stats.failed_other; break;
        }
    }
    stats.mean = total / n_episodes;
    return stats;
}

/**
 * Evolution-strategy settings. Each generation samples `population / 2` antithetic
 * Gaussian perturbations, scores every candidate on the same batch of initial states,
 * and moves the mean along the rank-weighted perturbation average with Adam.
 */
struct TrainConfig {
    int hidden = 64;
    Activation activation{};
    int population = 48;
    int episodes_per_candidate = 6;
    int generations = 400;
    double sigma = 0.05;
    double learning_rate = 0.02;
    double weight_decay = 0.002;
    int eval_interval = 10;
    int eval_episodes = 32;
    int patience = 120;
    /** Stop once the validation mean reaches this return. */
    double target_return = 240;
    int max_episode_steps = 600;
    int threads = default_thread_count();
};

struct TrainResult {
    PolicyNet policy;
    double best_validation_return = 0;
    int generations_run = 0;
    std::vector<double> validation_history;
};

/**
 * Train a policy by evolution strategies. Deterministic given `seed` and configs.
 *
 * Throws TrainingDiverged if the validation return never improves on its initial value
 * within the first patience window, or becomes non-finite.
 */
inline TrainResult train_baseline(const EnvConfig& env_cfg, const TrainConfig& cfg, std::uint64_t seed,
                                  const std::function<void(int, double)>& progress = {}) {
    if (cfg.population < 2 || cfg.population % 2 != 0) {
        fail(ErrorKind::InvalidArgument, "population must be an even number >= 2");
    }
    EnvConfig train_env = env_cfg;
    train_env.max_steps = std::min(env_cfg.max_steps, cfg.max_episode_steps);

    const PolicyNet init = PolicyNet::random(cfg.hidden, cfg.activation, seed);
    Eigen::VectorXd theta = init.flatten();
    const Eigen::Index dim = theta.size();
    Eigen::VectorXd adam_m = Eigen::VectorXd::Zero(dim), adam_v = Eigen::VectorXd::Zero(dim);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    const std::uint64_t validation_seed = seed ^ 0x9e3779b97f4a7c15ull;
    auto validate = [&](const Eigen::VectorXd& params) {
        return evaluate_policy(init.with_parameters(params), train_env, cfg.eval_episodes, validation_seed,
                               cfg.threads)
            .mean;
    };

    TrainResult result{init, validate(theta), 0, {}};
    result.validation_history.push_back(result.best_validation_return);
    const double initial_return = result.best_validation_return;
    int last_improvement = 0;

    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int pairs = cfg.population / 2;
    std::vector<Eigen::VectorXd> noise(static_cast<std::size_t>(pairs), Eigen::VectorXd(dim));
    std::vector<double> scores(static_cast<std::size_t>(cfg.population));

    for (int gen = 1; gen <= cfg.generations; ++gen) {
        for (auto& n : noise) {
            for (Eigen::Index k = 0; k < dim; ++k) {
                n[k] = normal(rng);
            }
        }
        const std::uint64_t batch_seed = seed * 1000003ull + static_cast<std::uint64_t>(gen);
        std::vector<LanderState> starts;
        for (int e = 0; e < cfg.episodes_per_candidate; ++e) {
            starts.push_back(sample_initial_state(train_env.initial, batch_seed, static_cast<std::uint64_t>(e)));
        }

        parallel_for(
            scores.size(),
            [&](std::size_t c) {
                const double sign = c % 2 == 0 ? 1.0 : -1.0;
                const PolicyNet cand = init.with_parameters(theta + sign * cfg.sigma * noise[c / 2]);
                double total = 0;
                for (const auto& s : starts) {
                    total += run_episode(cand, train_env, s).cumulative_reward;
                }
                scores[c] = total / static_cast<double>(starts.size());
            },
            cfg.threads);

        // Centered ranks in [-0.5, 0.5].
        std::vector<std::size_t> order(scores.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
        std::vector<double> shaped(scores.size());
        for (std::size_t r = 0; r < order.size(); ++r) {
            shaped[order[r]] = static_cast<double>(r) / static_cast<double>(order.size() - 1) - 0.5;
        }

        Eigen::VectorXd grad = Eigen::VectorXd::Zero(dim);
        for (int p = 0; p < pairs; ++p) {
            grad += (shaped[2 * p] - shaped[2 * p + 1]) * noise[p];
        }
        grad /= (cfg.population * cfg.sigma);
        // Ascent direction; decay pulls weights towards zero.
        const Eigen::VectorXd step_dir = -grad + cfg.weight_decay * theta;
        adam_m = beta1 * adam_m + (1 - beta1) * step_dir;
        adam_v = beta2 * adam_v + (1 - beta2) * step_dir.cwiseProduct(step_dir);
        const double m_hat = 1.0 / (1 - std::pow(beta1, gen));
        const double v_hat = 1.0 / (1 - std::pow(beta2, gen));
        theta -= cfg.learning_rate * (adam_m * m_hat).cwiseQuotient(((adam_v * v_hat).cwiseSqrt().array() + eps).matrix());
        result.generations_run = gen;

        if (gen % cfg.eval_interval == 0 || gen == cfg.generations) {
            const double val = validate(theta);
            result.validation_history.push_back(val);
            if (!std::isfinite(val)) {
                fail(ErrorKind::TrainingDiverged, "validation return became non-finite");
            }
            if (progress) {
                progress(gen, val);
            }
            if (val > result.best_validation_return) {
                result.best_validation_return = val;
                result.policy = init.with_parameters(theta);
                last_improvement = gen;
            }
            if (val >= cfg.target_return) {
                break;
            }
            if (gen - last_improvement >= cfg.patience) {
                if (result.best_validation_return <= initial_return) {
                    fail(ErrorKind::TrainingDiverged, "no improvement within the patience window");
                }
                break;
            }
        }
    }

    result.policy.meta() = {{"trainer", "evolution-strategy"},
                            {"seed", seed},
                            {"generations", result.generations_run},
                            {"best_validation_return", result.best_validation_return}};
    return result;
}

} // namespace modeswitch

#endif
