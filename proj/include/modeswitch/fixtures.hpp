#ifndef MODESWITCH_FIXTURES_HPP
#define MODESWITCH_FIXTURES_HPP

#include "analysis.hpp"
#include "episode.hpp"
#include "io.hpp"
#include "report.hpp"
#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

/**
 * @file fixtures.hpp
 *
 * @brief Seeded search for intervention fixtures that flip episode outcomes.
 */

namespace modeswitch {

enum class FlipDirection { FailedToSolved, SolvedToFailed };

inline std::string_view to_string(FlipDirection d) {
    return d == FlipDirection::FailedToSolved ? "failed_to_solved" : "solved_to_failed";
}

inline FlipDirection flip_direction_from_string(std::string_view s) {
    if (s == "failed_to_solved") {
        return FlipDirection::FailedToSolved;
    }
    if (s == "solved_to_failed") {
        return FlipDirection::SolvedToFailed;
    }
    fail(ErrorKind::SchemaMismatch, "unknown flip direction '" + std::string(s) + "'");
}

/**
 * Failed to solved: baseline return below 0 and switched return at least the solved
 * threshold. Solved to failed: baseline solved and switched return below 0.
 */
inline bool is_directed_flip(FlipDirection d, const ExperimentReport& r, const RewardParams& reward = {}) {
    if (r.plan_failed()) {
        return false;
    }
    const double base = r.baseline.cumulative_reward, sw = r.switched.cumulative_reward;
    if (d == FlipDirection::FailedToSolved) {
        return base < 0 && is_solved_return(sw, reward);
    }
    return is_solved_return(base, reward) && sw < 0;
}

struct Fixture {
    InterventionSpec spec;
    FlipDirection direction = FlipDirection::FailedToSolved;
    /** Values observed when the fixture was generated. */
    double baseline_return = 0;
    double switched_return = 0;
    double terminal_objective = 0;
};

struct FixtureSearchConfig {
    int episodes = 1000;
    std::uint64_t collect_seed = 42;
    int per_direction = 5;
    /** At most this many source episodes are searched per direction (in id order). */
    int max_sources = 120;
    /** Steps of the source episode tried as intervention points. */
    std::vector<int> source_steps{0, 5, 10};
    /** Goal steps are searched in [c + min_goal_offset, c + max_goal_offset] of the candidate episode. */
    int min_goal_offset = 10;
    int max_goal_offset = 40;
    /** Goal states must be at least this high (well before touchdown). */
    double min_goal_height = 0.3;
    /** Horizons tried: timing-matched (g - c) plus these offsets, plus `long_horizon`. */
    std::vector<int> horizon_offsets{0, 10, 20};
    int long_horizon = 60;
    SolverConfig solver{};
    /** If a collection has no failed (or no solved) episode, initial ranges grow by this factor. */
    double dispersion_growth = 1.5;
    int max_widenings = 3;
    int threads = default_thread_count();
};

struct FixtureSet {
    std::uint64_t collect_seed = 42;
    int episodes = 1000;
    EnvConfig env;
    std::vector<Fixture> fixtures;
};

/**
 * Goal step in `goal_episode` after `candidate_step`: among in-flight steps in the offset
 * window, the one whose latent is farthest (by minimum distance) from every latent of the
 * source episode from `source_step` on. Returns -1 if the window is empty.
 */
inline int choose_goal_step(const EpisodeRecord& source, int source_step, const EpisodeRecord& goal_episode,
                            int candidate_step, const FixtureSearchConfig& cfg) {
    int best = -1;
    double best_value = -1;
    const int last = std::min<int>(candidate_step + cfg.max_goal_offset, static_cast<int>(goal_episode.steps.size()) - 1);
    for (int g = candidate_step + cfg.min_goal_offset; g <= last; ++g) {
        const auto& row = goal_episode.steps[static_cast<std::size_t>(g)];
        if (row.state.y < cfg.min_goal_height) {
            break;
        }
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t k = static_cast<std::size_t>(source_step); k < source.steps.size(); ++k) {
            nearest = std::min(nearest, latent_distance(source.steps[k].latent, row.latent));
        }
        if (nearest > best_value) {
            best_value = nearest;
            best = g;
        }
    }
    return best;
}

/**
 * Among the candidate horizons, the experiment whose plan is path-feasible with the lowest
 * terminal objective (first on ties). Empty if no horizon gave a feasible plan.
 */
inline std::optional<ExperimentReport> best_horizon_experiment(std::shared_ptr<const PolicyNet> policy,
                                                               const EnvConfig& env, const Dataset& data,
                                                               InterventionSpec spec, int timing_horizon,
                                                               const FixtureSearchConfig& cfg) {
    std::vector<int> horizons;
    for (int off : cfg.horizon_offsets) {
        horizons.push_back(timing_horizon + off);
    }
    horizons.push_back(cfg.long_horizon);
    std::optional<ExperimentReport> best;
    std::vector<int> seen;
    SwitchOptions options;
    options.solver = cfg.solver;
    for (int h : horizons) {
        if (h < 1 || std::find(seen.begin(), seen.end(), h) != seen.end()) {
            continue;
        }
        seen.push_back(h);
        spec.horizon = h;
        auto r = switch_experiment(policy, env, data, spec, options);
        if (!r.plan || !r.plan->path_feasible) {
            continue;
        }
        if (!best || r.plan->terminal_objective < best->plan->terminal_objective) {
            best = std::move(r);
        }
    }
    return best;
}

/**
 * Collect rollouts, widening the initial-state ranges while the dataset lacks either
 * outcome class. Returns the dataset and updates `env`.
 */
inline Dataset collect_for_fixtures(const PolicyNet& policy, EnvConfig& env, const FixtureSearchConfig& cfg) {
    for (int round = 0;; ++round) {
        Dataset data = collect_rollouts(policy, env, cfg.episodes, cfg.collect_seed, cfg.threads);
        const auto solved = std::count_if(data.episodes.begin(), data.episodes.end(),
                                          [](const EpisodeRecord& e) { return e.solved(); });
        const bool both = solved > 0 && solved < static_cast<long>(data.episodes.size());
        if (both || round >= cfg.max_widenings) {
            return data;
        }
        auto widen = [&](std::array<double, 2>& r) {
            const double mid = 0.5 * (r[0] + r[1]), half = 0.5 * (r[1] - r[0]) * cfg.dispersion_growth;
            r = {mid - half, mid + half};
        };
        widen(env.initial.x);
        widen(env.initial.vx);
        widen(env.initial.vy);
        widen(env.initial.angle);
        widen(env.initial.angular_rate);
    }
}

/**
 * Search `data` for flip fixtures. For each source episode of the right outcome (in id
 * order) and each source step, the nearest step of an opposite-outcome episode is found
 * in latent space, a goal step is chosen after it, and the best horizon is planned. Each
 * source episode contributes at most one fixture (its lowest terminal objective); the
 * fixtures of a direction are ranked by terminal objective and the first `per_direction` kept.
 */
inline std::vector<Fixture> search_fixtures(std::shared_ptr<const PolicyNet> policy, const EnvConfig& env,
                                            const Dataset& data, FlipDirection direction,
                                            const FixtureSearchConfig& cfg,
                                            const std::function<void(const Fixture&)>& found = {}) {
    const bool want_failed_source = direction == FlipDirection::FailedToSolved;
    const OutcomeFilter target = want_failed_source ? solved_only() : failed_only();
    std::vector<Fixture> out;
    int searched = 0;
    for (const auto& e : data.episodes) {
        if (e.solved() == want_failed_source) {
            continue;
        }
        if (searched++ >= cfg.max_sources) {
            break;
        }
        std::optional<Fixture> best;
        for (int s : cfg.source_steps) {
            if (s >= static_cast<int>(e.steps.size())) {
                continue;
            }
            const auto cands = nearest_cross_episode(data, StepRef{e.id, s}, target, 1);
            const StepRef c = cands.front().ref;
            const int g = choose_goal_step(e, s, data.episode(c.episode), c.step, cfg);
            if (g < 0) {
                continue;
            }
            InterventionSpec spec;
            spec.source = StepRef{e.id, s};
            spec.goal = StepRef{c.episode, g};
            spec.label = std::string(to_string(direction));
            auto r = best_horizon_experiment(policy, env, data, spec, g - c.step, cfg);
            if (!r || !is_directed_flip(direction, *r, env.reward)) {
                continue;
            }
            if (!best || r->plan->terminal_objective < best->terminal_objective) {
                best = Fixture{r->spec, direction, r->baseline.cumulative_reward, r->switched.cumulative_reward,
                               r->plan->terminal_objective};
            }
        }
        if (best) {
            if (found) {
                found(*best);
            }
            out.push_back(*best);
        }
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Fixture& a, const Fixture& b) { return a.terminal_objective < b.terminal_objective; });
    if (static_cast<int>(out.size()) > cfg.per_direction) {
        out.resize(static_cast<std::size_t>(cfg.per_direction));
    }
    return out;
}

inline FixtureSet generate_fixtures(std::shared_ptr<const PolicyNet> policy, EnvConfig env,
                                    const FixtureSearchConfig& cfg,
                                    const std::function<void(const Fixture&)>& found = {}) {
    FixtureSet set;
    const Dataset data = collect_for_fixtures(*policy, env, cfg);
    set.collect_seed = cfg.collect_seed;
    set.episodes = cfg.episodes;
    set.env = env;
    for (auto d : {FlipDirection::FailedToSolved, FlipDirection::SolvedToFailed}) {
        auto part = search_fixtures(policy, env, data, d, cfg, found);
        set.fixtures.insert(set.fixtures.end(), part.begin(), part.end());
    }
    return set;
}

namespace io {

inline json fixture_set_to_json(const FixtureSet& set, const SolverConfig& solver = {}) {
    json list = json::array();
    for (const auto& f : set.fixtures) {
        list.push_back({{"direction", to_string(f.direction)},
                        {"intervention", intervention_to_json(f.spec)},
                        {"generated",
                         {{"baseline_return", f.baseline_return},
                          {"switched_return", f.switched_return},
                          {"terminal_objective", f.terminal_objective}}}});
    }
    return {{"schema_version", kSchemaVersion},
            {"collect", {{"seed", set.collect_seed}, {"episodes", set.episodes}}},
            {"env", format_env_config(set.env)},
            {"solver", solver_to_json(solver)},
            {"fixtures", list}};
}

inline FixtureSet fixture_set_from_json(const json& doc) {
    if (doc.value("schema_version", 0) != kSchemaVersion) {
        fail(ErrorKind::SchemaMismatch, "unsupported fixture file version");
    }
    FixtureSet set;
    set.collect_seed = doc.at("collect").at("seed");
    set.episodes = doc.at("collect").at("episodes");
    set.env = parse_env_config(doc.at("env").get<std::string>());
    for (const auto& f : doc.at("fixtures")) {
        Fixture x;
        x.direction = flip_direction_from_string(f.at("direction").get<std::string>());
        x.spec = intervention_from_json(f.at("intervention"));
        const auto& g = f.at("generated");
        x.baseline_return = g.at("baseline_return");
        x.switched_return = g.at("switched_return");
        x.terminal_objective = g.at("terminal_objective");
        set.fixtures.push_back(x);
    }
    return set;
}

} // namespace io

} // namespace modeswitch

#endif
