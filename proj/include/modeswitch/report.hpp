#ifndef MODESWITCH_REPORT_HPP
#define MODESWITCH_REPORT_HPP

#include "analysis.hpp"
#include "io.hpp"
#include "pacmap.hpp"

#include <optional>
#include <string>

/**
 * @file report.hpp
 *
 * @brief Experiment report directories.
 *
 * Files: `summary.json`, `baseline_steps.csv`, `switched_steps.csv`,
 * `objective_trace.csv`, `planned_actions.csv` (only when planning succeeded) and
 * `embedding_overlay.csv` (only when a projector is supplied).
 */

namespace modeswitch::io {

inline json step_ref_json(const StepRef& r) { return {{"episode", r.episode}, {"step", r.step}}; }

inline StepRef step_ref_from_json(const json& j) { return StepRef{j.at("episode").get<int>(), j.at("step").get<int>()}; }

inline json intervention_to_json(const InterventionSpec& s) {
    return {{"source", step_ref_json(s.source)},
            {"goal", step_ref_json(s.goal)},
            {"horizon", s.horizon},
            {"manual_source_step", s.manual_source_step},
            {"label", s.label}};
}

inline InterventionSpec intervention_from_json(const json& j) {
    if (!j.is_object() || !j.contains("source") || !j.contains("goal")) {
        fail(ErrorKind::SchemaMismatch, "intervention needs 'source' and 'goal'");
    }
    InterventionSpec s;
    s.source = step_ref_from_json(j.at("source"));
    s.goal = step_ref_from_json(j.at("goal"));
    s.horizon = j.value("horizon", 40);
    s.manual_source_step = j.value("manual_source_step", true);
    s.label = j.value("label", std::string{});
    return s;
}

/**
 * Planning problem from a request document: intervention state from `x0` or a `source`
 * step of `data`; goal from `goal_latent` or a `goal` step; `horizon` (default 40).
 */
inline PlanProblem plan_problem_from_json(const json& body, const Dataset* data,
                                          std::shared_ptr<const PolicyNet> policy, const EnvConfig& env,
                                          double safety_floor = 0.0) {
    if (!body.is_object()) {
        fail(ErrorKind::SchemaMismatch, "problem must be a JSON object");
    }
    auto need_data = [&](const char* what) -> const Dataset& {
        if (!data) {
            fail(ErrorKind::InvalidArgument, std::string(what) + " given as a step reference but no dataset loaded");
        }
        return *data;
    };
    PlanProblem p;
    if (body.contains("x0")) {
        p.x0 = state_from_json(body.at("x0"));
    } else if (body.contains("source")) {
        const StepRef s = step_ref_from_json(body.at("source"));
        p.x0 = need_data("source").step(s.episode, s.step).state;
    } else {
        fail(ErrorKind::InvalidArgument, "problem needs 'source' or 'x0'");
    }
    if (body.contains("goal_latent")) {
        p.goal = vector_from_json(body.at("goal_latent"), "goal_latent");
    } else if (body.contains("goal")) {
        const StepRef g = step_ref_from_json(body.at("goal"));
        p.goal = need_data("goal").step(g.episode, g.step).latent;
    } else {
        fail(ErrorKind::InvalidArgument, "problem needs 'goal' or 'goal_latent'");
    }
    p.horizon = body.value("horizon", 40);
    if (p.horizon < 0) {
        fail(ErrorKind::InvalidArgument, "horizon must be >= 0");
    }
    p.policy = std::move(policy);
    p.physics = env.physics;
    p.observation = env.observation;
    p.safety_floor = body.value("safety_floor", safety_floor);
    p.x_bound = env.x_bound;
    p.validate();
    return p;
}

inline json run_summary_json(const RunSummary& s) {
    return {{"cumulative_reward", s.cumulative_reward},
            {"outcome", to_string(s.outcome)},
            {"terminal_event", to_string(s.terminal_event)},
            {"steps", s.steps},
            {"min_distance", s.min_distance},
            {"argmin_step", s.argmin_step}};
}

inline json report_summary_json(const ExperimentReport& r) {
    json doc = {{"schema_version", kSchemaVersion},
                {"spec", intervention_to_json(r.spec)},
                {"x0", state_to_json(r.x0)},
                {"goal_latent", vector_to_json(r.goal)},
                {"baseline", episode_summary_json(r.baseline)},
                {"switched", episode_summary_json(r.switched)},
                {"baseline_summary", run_summary_json(r.baseline_summary())},
                {"switched_summary", run_summary_json(r.switched_summary())},
                {"flipped", r.flipped},
                {"outcomes_differ", r.outcomes_differ},
                {"plan_failed", r.plan_failed()},
                {"plan_error", r.plan_error}};
    doc["plan"] = r.plan ? plan_result_to_json(*r.plan) : json(nullptr);
    return doc;
}

inline std::string format_objective_trace(const ExperimentReport& r) {
    std::string out = "step,baseline,switched\n";
    const std::size_t n = std::max(r.baseline_trace.size(), r.switched_trace.size());
    for (std::size_t t = 0; t < n; ++t) {
        out += std::to_string(t) + ",";
        out += t < r.baseline_trace.size() ? fmt(r.baseline_trace[t]) : "";
        out += ",";
        out += t < r.switched_trace.size() ? fmt(r.switched_trace[t]) : "";
        out += "\n";
    }
    return out;
}

inline std::string format_planned_actions(const PlanResult& p) {
    std::string out = "t,thrust_main,thrust_side,u_main,u_side,x,y,vx,vy,angle,angular_rate\n";
    for (std::size_t t = 0; t < p.thrusts.size(); ++t) {
        const auto& u = p.thrusts[t];
        const auto& a = p.actions[t];
        const auto& s = p.predicted_states[t + 1];
        out += std::to_string(t) + "," + fmt(u.main) + "," + fmt(u.side) + "," + fmt(a.main) + "," + fmt(a.side);
        for (double v : {s.x, s.y, s.vx, s.vy, s.angle, s.angular_rate}) {
            out += "," + fmt(v);
        }
        out += "\n";
    }
    return out;
}

/** Switched-run latents placed in an existing embedding, one row per switched step. */
inline std::string format_overlay(const ExperimentReport& r, const pacmap::CachedProjector& projector) {
    std::string out = "step,y1,y2\n";
    for (const auto& s : r.switched.steps) {
        const Eigen::RowVector2d y = projector.project_point(s.latent.transpose());
        out += std::to_string(s.step) + "," + fmt(y[0]) + "," + fmt(y[1]) + "\n";
    }
    return out;
}

inline void export_report(const ExperimentReport& r, const fs::path& dir,
                          const pacmap::CachedProjector* projector = nullptr) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        fail(ErrorKind::IoFailure, "cannot create " + dir.string());
    }
    write_json(dir / "summary.json", report_summary_json(r));
    write_file(dir / "baseline_steps.csv", format_episode_steps(r.baseline));
    write_file(dir / "switched_steps.csv", format_episode_steps(r.switched));
    write_file(dir / "objective_trace.csv", format_objective_trace(r));
    if (r.plan) {
        write_file(dir / "planned_actions.csv", format_planned_actions(*r.plan));
    } else {
        fs::remove(dir / "planned_actions.csv", ec);
    }
    if (projector) {
        write_file(dir / "embedding_overlay.csv", format_overlay(r, *projector));
    }
}

inline ExperimentReport import_report(const fs::path& dir) {
    const json doc = read_json(dir / "summary.json");
    if (doc.value("schema_version", 0) != kSchemaVersion) {
        fail(ErrorKind::SchemaMismatch, "unsupported report version");
    }
    ExperimentReport r;
    r.spec = intervention_from_json(doc.at("spec"));
    r.x0 = state_from_json(doc.at("x0"));
    r.goal = vector_from_json(doc.at("goal_latent"), "goal_latent");
    apply_episode_summary(r.baseline, doc.at("baseline"));
    apply_episode_summary(r.switched, doc.at("switched"));
    r.baseline.steps = parse_episode_steps(read_file(dir / "baseline_steps.csv"));
    r.switched.steps = parse_episode_steps(read_file(dir / "switched_steps.csv"));
    r.baseline_trace = objective_trace(r.baseline, r.goal);
    r.switched_trace = objective_trace(r.switched, r.goal);
    r.flipped = doc.at("flipped");
    r.outcomes_differ = doc.at("outcomes_differ");
    r.plan_error = doc.value("plan_error", std::string{});
    if (!doc.at("plan").is_null()) {
        r.plan = plan_result_from_json(doc.at("plan"));
    }
    return r;
}

} // namespace modeswitch::io

#endif
