#ifndef MODESWITCH_ANALYSIS_HPP
#define MODESWITCH_ANALYSIS_HPP

#include "episode.hpp"
#include "error.hpp"
#include "planner.hpp"
#include "policy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

/**
 * @file analysis.hpp
 *
 * @brief Cross-episode latent matching and mode-switch experiments.
 */

namespace modeswitch {

struct StepRef {
    int episode = 0;
    int step = 0;

    bool operator==(const StepRef&) const = default;
};

struct Candidate {
    StepRef ref;
    double distance = 0;
};

using OutcomeFilter = std::function<bool(Outcome)>;

inline OutcomeFilter solved_only() {
    return [](Outcome o) { return o == Outcome::Solved; };
}

inline OutcomeFilter failed_only() {
    return [](Outcome o) { return o != Outcome::Solved; };
}

inline double latent_distance(const LatentVector& a, const LatentVector& b) {
    if (a.size() != b.size()) {
        fail(ErrorKind::DimensionMismatch, "latent dimensions differ");
    }
    return (a - b).norm();
}

/**
 * The k nearest steps (Euclidean distance in the full latent space) among episodes
 * whose outcome passes `filter`, excluding the query's own episode. Ties are broken
 * by (episode, step). Returns fewer than k if there are fewer candidates.
 */
inline std::vector<Candidate> nearest_cross_episode(const Dataset& data, const StepRef& query,
                                                    const OutcomeFilter& filter, int k) {
    const LatentVector& q = data.step(query.episode, query.step).latent;
    std::vector<Candidate> all;
    for (const auto& e : data.episodes) {
        if (e.id == query.episode || !filter(e.outcome)) {
            continue;
        }
        for (const auto& s : e.steps) {
            all.push_back(Candidate{StepRef{e.id, s.step}, latent_distance(q, s.latent)});
        }
    }
    if (all.empty()) {
        fail(ErrorKind::NoCandidates, "no steps match the outcome filter");
    }
    auto less = [](const Candidate& a, const Candidate& b) {
        if (a.distance != b.distance) {
            return a.distance < b.distance;
        }
        if (a.ref.episode != b.ref.episode) {
            return a.ref.episode < b.ref.episode;
        }
        return a.ref.step < b.ref.step;
    };
    const std::size_t keep = std::min<std::size_t>(all.size(), static_cast<std::size_t>(std::max(k, 0)));
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), less);
    all.resize(keep);
    return all;
}

/** Unsquared latent distance to `goal` at every logged step. */
inline std::vector<double> objective_trace(const EpisodeRecord& episode, const LatentVector& goal) {
    std::vector<double> out;
    out.reserve(episode.steps.size());
    for (const auto& s : episode.steps) {
        if (s.latent.size() != goal.size()) {
            fail(ErrorKind::DimensionMismatch, "goal latent has dimension " + std::to_string(goal.size()) +
                                                   ", episode latents have " + std::to_string(s.latent.size()));
        }
        out.push_back((goal - s.latent).norm());
    }
    return out;
}

/** Step of `episode` whose latent is closest to `goal` (first one on ties). */
inline int nearest_step_to_goal(const EpisodeRecord& episode, const LatentVector& goal) {
    const auto trace = objective_trace(episode, goal);
    if (trace.empty()) {
        fail(ErrorKind::NotFound, "episode has no steps");
    }
    return static_cast<int>(std::min_element(trace.begin(), trace.end()) - trace.begin());
}

struct InterventionSpec {
    StepRef source;
    StepRef goal;
    int horizon = 40;
    /** When false, `source.step` is replaced by the source step nearest to the goal latent. */
    bool manual_source_step = true;
    std::string label;
};

struct RunSummary {
    double cumulative_reward = 0;
    Outcome outcome = Outcome::Failed;
    TerminalEvent terminal_event = TerminalEvent::None;
    int steps = 0;
    double min_distance = 0;
    int argmin_step = 0;
};

struct ExperimentReport {
    InterventionSpec spec;
    LanderState x0;
    LatentVector goal;
    EpisodeRecord baseline;
    EpisodeRecord switched;
    std::vector<double> baseline_trace;
    std::vector<double> switched_trace;
    std::optional<PlanResult> plan;
    std::string plan_error;
    bool flipped = false;
    bool outcomes_differ = true;

    RunSummary summary(const EpisodeRecord& run, const std::vector<double>& trace) const {
        RunSummary s;
        s.cumulative_reward = run.cumulative_reward;
        s.outcome = run.outcome;
        s.terminal_event = run.terminal_event;
        s.steps = static_cast<int>(run.steps.size());
        if (!trace.empty()) {
            const auto it = std::min_element(trace.begin(), trace.end());
            s.min_distance = *it;
            s.argmin_step = static_cast<int>(it - trace.begin());
        }
        return s;
    }
    RunSummary baseline_summary() const { return summary(baseline, baseline_trace); }
    RunSummary switched_summary() const { return summary(switched, switched_trace); }
    bool plan_failed() const { return !plan.has_value(); }
};

inline bool is_flip(const EpisodeRecord& baseline, const EpisodeRecord& switched) {
    const bool sign_change = std::signbit(baseline.cumulative_reward) != std::signbit(switched.cumulative_reward);
    return sign_change || baseline.solved() != switched.solved();
}

/** Resolve the intervention state and goal latent for `spec` against `data`. */
inline std::pair<StepRef, LatentVector> resolve_intervention(const Dataset& data, const InterventionSpec& spec) {
    const LatentVector goal = data.step(spec.goal.episode, spec.goal.step).latent;
    StepRef source = spec.source;
    if (!spec.manual_source_step) {
        source.step = nearest_step_to_goal(data.episode(spec.source.episode), goal);
    }
    data.step(source.episode, source.step);
    return {source, goal};
}

struct SwitchOptions {
    SolverConfig solver;
    /** Keep the planned actions only for the horizon, then hand control back to the policy. */
    bool hand_back = true;
    double safety_floor = 0.0;
};

/**
 * Baseline: run the policy from the intervention state. Switched: apply the planned
 * actions for the horizon, then let the policy continue. If planning fails, the
 * report carries the baseline only, with `plan_error` set.
 */
inline ExperimentReport switch_experiment(std::shared_ptr<const PolicyNet> policy, const EnvConfig& cfg,
                                          const Dataset& data, const InterventionSpec& spec,
                                          const SwitchOptions& options = {}) {
    if (spec.horizon < 0) {
        fail(ErrorKind::InvalidArgument, "horizon must be >= 0");
    }
    ExperimentReport report;
    report.spec = spec;
    const auto [source, goal] = resolve_intervention(data, spec);
    report.spec.source = source;
    report.goal = goal;
    if (goal.size() != policy->hidden()) {
        fail(ErrorKind::DimensionMismatch, "goal latent dimension does not match policy");
    }
    report.x0 = data.step(source.episode, source.step).state;
    report.outcomes_differ = data.episode(source.episode).outcome != data.episode(spec.goal.episode).outcome;

    report.baseline = run_logged_episode(*policy, cfg, report.x0, {}, source.episode);
    report.baseline_trace = objective_trace(report.baseline, goal);

    PlanProblem problem;
    problem.x0 = report.x0;
    problem.goal = goal;
    problem.horizon = spec.horizon;
    problem.policy = policy;
    problem.physics = cfg.physics;
    problem.observation = cfg.observation;
    problem.safety_floor = options.safety_floor;
    problem.x_bound = cfg.x_bound;
    try {
        report.plan = plan(problem, options.solver);
    } catch (const Error& e) {
        report.plan_error = e.what();
        report.switched = report.baseline;
        report.switched_trace = report.baseline_trace;
        return report;
    }

    std::vector<EffectiveThrust> thrusts = report.plan->thrusts;
    if (!options.hand_back) {
        // Keep the last planned thrust for the rest of the episode.
        const EffectiveThrust last = thrusts.empty() ? EffectiveThrust{} : thrusts.back();
        thrusts.resize(static_cast<std::size_t>(cfg.max_steps), last);
    }
    report.switched = run_logged_episode(*policy, cfg, report.x0, thrusts, source.episode);
    report.switched_trace = objective_trace(report.switched, goal);
    report.flipped = is_flip(report.baseline, report.switched);
    return report;
}

/**
 * Random planning problem: the intervention state is drawn from the initial-state ranges
 * and the goal is the latent of an independently drawn state. Deterministic per (seed, index).
 */
inline PlanProblem random_plan_problem(std::shared_ptr<const PolicyNet> policy, const EnvConfig& cfg, int horizon,
                                       std::uint64_t seed, std::uint64_t index) {
    PlanProblem p;
    p.x0 = sample_initial_state(cfg.initial, seed, 2 * index);
    p.goal = policy->latent(observe(sample_initial_state(cfg.initial, seed, 2 * index + 1), cfg.observation));
    p.horizon = horizon;
    p.policy = std::move(policy);
    p.physics = cfg.physics;
    p.observation = cfg.observation;
    p.x_bound = cfg.x_bound;
    return p;
}

/** Gradient check over `samples` random problems, one random thrust sequence each. */
inline GradientCheckReport gradient_check_random(std::shared_ptr<const PolicyNet> policy, const EnvConfig& cfg,
                                                 int samples, std::uint64_t seed, int horizon = 40) {
    GradientCheckReport total;
    for (int i = 0; i < samples; ++i) {
        const auto problem = random_plan_problem(policy, cfg, horizon, seed, static_cast<std::uint64_t>(i));
        const auto r = gradient_check(problem, 1, seed + static_cast<std::uint64_t>(i));
        total.kink_skipped += r.kink_skipped;
        total.relative_errors.insert(total.relative_errors.end(), r.relative_errors.begin(), r.relative_errors.end());
    }
    total.samples = static_cast<int>(total.relative_errors.size());
    if (total.samples > 0) {
        std::vector<double> sorted = total.relative_errors;
        std::sort(sorted.begin(), sorted.end());
        total.max_relative_error = sorted.back();
        total.median_relative_error = sorted[sorted.size() / 2];
    }
    return total;
}

} // namespace modeswitch

#endif
