#ifndef MODESWITCH_EPISODE_HPP
#define MODESWITCH_EPISODE_HPP

#include "error.hpp"
#include "lander.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "trainer.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

/**
 * @file episode.hpp
 *
 * @brief Logged episodes and rollout collection.
 */

namespace modeswitch {

/**
 * One logged step. `state` is the state before `action` was applied; `reward` and
 * `event` are the result of applying it.
 */
struct EpisodeStep {
    int step = 0;
    LanderState state;
    Vec8 observation = Vec8::Zero();
    LatentVector latent;
    Action action;
    /** Thrust actually applied (the gated action, or the planned thrust). */
    EffectiveThrust thrust;
    double reward = 0;
    TerminalEvent event = TerminalEvent::None;
};

struct EpisodeRecord {
    int id = 0;
    std::uint64_t seed = 0;
    LanderState initial;
    std::vector<EpisodeStep> steps;
    double cumulative_reward = 0;
    TerminalEvent terminal_event = TerminalEvent::None;
    Outcome outcome = Outcome::Failed;

    int latent_dim() const { return steps.empty() ? 0 : static_cast<int>(steps.front().latent.size()); }
    bool solved() const { return outcome == Outcome::Solved; }
};

/**
 * Simulate from `initial`. The first `prefix.size()` steps apply the thrusts in `prefix`
 * (stopping early if the episode ends); after that the policy acts on each observation.
 * Latents are logged for every step regardless of who acted.
 */
inline EpisodeRecord run_logged_episode(const PolicyNet& policy, const EnvConfig& cfg, const LanderState& initial,
                                        const std::vector<EffectiveThrust>& prefix = {}, int id = 0,
                                        std::uint64_t seed = 0) {
    LanderEnv env(cfg);
    env.reset(initial);
    EpisodeRecord rec;
    rec.id = id;
    rec.seed = seed;
    rec.initial = env.state();
    while (!env.terminal()) {
        EpisodeStep row;
        row.step = env.steps();
        row.state = env.state();
        row.observation = env.observation();
        row.latent = policy.latent(row.observation);
        const auto t = static_cast<std::size_t>(row.step);
        if (t < prefix.size()) {
            row.thrust = prefix[t];
            row.action = action_from_thrust(row.thrust);
        } else {
            row.action = policy.forward(row.observation);
            row.thrust = gate_action(row.action);
        }
        const auto r = env.step(row.thrust);
        row.reward = r.reward;
        row.event = r.event;
        rec.cumulative_reward += r.reward;
        rec.steps.push_back(std::move(row));
    }
    rec.terminal_event = env.event();
    rec.outcome = label_outcome(rec.cumulative_reward, rec.terminal_event, cfg.reward);
    return rec;
}

struct Dataset {
    std::vector<EpisodeRecord> episodes;

    const EpisodeRecord& episode(int id) const {
        for (const auto& e : episodes) {
            if (e.id == id) {
                return e;
            }
        }
        fail(ErrorKind::NotFound, "episode " + std::to_string(id) + " not in dataset");
    }

    const EpisodeStep& step(int episode_id, int step) const {
        const auto& e = episode(episode_id);
        if (step < 0 || step >= static_cast<int>(e.steps.size())) {
            fail(ErrorKind::NotFound, "episode " + std::to_string(episode_id) + " has no step " + std::to_string(step));
        }
        return e.steps[static_cast<std::size_t>(step)];
    }

    std::size_t total_steps() const {
        std::size_t n = 0;
        for (const auto& e : episodes) {
            n += e.steps.size();
        }
        return n;
    }
};

/**
 * Collect `n` episodes with initial states drawn from `cfg.initial` (episode i uses
 * sampler index i under `seed`). Deterministic given the seed.
 */
inline Dataset collect_rollouts(const PolicyNet& policy, const EnvConfig& cfg, int n, std::uint64_t seed,
                                int threads = default_thread_count()) {
    if (n < 1) {
        fail(ErrorKind::InvalidArgument, "n must be >= 1");
    }
    Dataset data;
    data.episodes.resize(static_cast<std::size_t>(n));
    parallel_for(
        data.episodes.size(),
        [&](std::size_t i) {
            data.episodes[i] = run_logged_episode(policy, cfg, sample_initial_state(cfg.initial, seed, i), {},
                                                  static_cast<int>(i), seed);
        },
        threads);
    return data;
}

/** Recompute outcome labels from each episode's cumulative reward and terminal event. */
inline Dataset label_outcomes(Dataset data, const RewardParams& r = {}) {
    for (auto& e : data.episodes) {
        e.outcome = label_outcome(e.cumulative_reward, e.terminal_event, r);
    }
    return data;
}

} // namespace modeswitch

#endif
