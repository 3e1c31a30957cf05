#ifndef MODESWITCH_CLI_HPP
#define MODESWITCH_CLI_HPP

#include "analysis.hpp"
#include "episode.hpp"
#include "fixtures.hpp"
#include "io.hpp"
#include "pacmap.hpp"
#include "planner.hpp"
#include "report.hpp"
#include "service.hpp"
#include "trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

/**
 * @file cli.hpp
 *
 * @brief Command-line front end. Each subcommand wraps one library operation.
 *
 * Exit codes: 0 success, 1 operation error, 2 usage error.
 * `MODESWITCH_DATASET` supplies the default dataset directory.
 */

namespace modeswitch::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/** Parses `ep12:step40` or `12:40`. */
inline StepRef parse_step_ref(const std::string& text) {
    static const std::regex re(R"(^\s*(?:ep)?(-?\d+)\s*:\s*(?:step)?(\d+)\s*$)");
    std::smatch m;
    if (!std::regex_match(text, m, re)) {
        fail(ErrorKind::UsageError, "expected a step reference like ep12:step40, got '" + text + "'");
    }
    return StepRef{std::stoi(m[1]), std::stoi(m[2])};
}

/** Parses `3,5,10-12` into episode ids. */
inline std::vector<int> parse_id_list(const std::string& text) {
    std::vector<int> out;
    for (const auto& part : io::split(text, ',')) {
        const std::string p = io::trim(part);
        if (p.empty()) {
            continue;
        }
        const auto dash = p.find('-', 1);
        if (dash == std::string::npos) {
            out.push_back(io::parse_int(p, "episode id"));
        } else {
            const int a = io::parse_int(p.substr(0, dash), "episode id");
            const int b = io::parse_int(p.substr(dash + 1), "episode id");
            for (int i = a; i <= b; ++i) {
                out.push_back(i);
            }
        }
    }
    return out;
}

inline Activation parse_activation(const std::string& name, double alpha) {
    if (name == "mish") {
        return Activation{Activation::Kind::Mish, alpha};
    }
    if (name == "leaky_relu") {
        return Activation{Activation::Kind::LeakyReLU, alpha};
    }
    fail(ErrorKind::UsageError, "unknown activation '" + name + "'");
}

inline EnvConfig env_or_default(const std::string& path) {
    return path.empty() ? EnvConfig{} : io::load_env_config(path);
}

/** Dataset env: explicit file, else the dataset's env.cfg, else defaults. */
inline EnvConfig dataset_env(const fs::path& dir, const std::string& explicit_path) {
    if (!explicit_path.empty()) {
        return io::load_env_config(explicit_path);
    }
    return fs::exists(dir / "env.cfg") ? io::load_env_config(dir / "env.cfg") : EnvConfig{};
}

inline std::string dataset_default() {
    const char* v = std::getenv("MODESWITCH_DATASET");
    return v ? v : "";
}

inline fs::path require_dataset(const std::string& dir) {
    if (dir.empty()) {
        fail(ErrorKind::UsageError, "no dataset directory: pass --dataset or set MODESWITCH_DATASET");
    }
    return dir;
}

inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
    CLI::App app{"Latent mode-switching experiments for a 2D lander"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "modeswitch 1.0");

    int threads = default_thread_count();
    app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    const std::string env_dataset = dataset_default();

    // train
    auto* train = app.add_subcommand("train", "Train a baseline policy by evolution strategies");
    std::string train_out, train_env, activation = "mish";
    std::uint64_t train_seed = 1;
    double alpha = 0.01;
    TrainConfig tcfg;
    train->add_option("--out", train_out, "Policy JSON to write")->required();
    train->add_option("--seed", train_seed, "Training seed");
    train->add_option("--env", train_env, "Environment config file");
    train->add_option("--hidden", tcfg.hidden, "Hidden width")->check(CLI::PositiveNumber);
    train->add_option("--activation", activation, "mish or leaky_relu")
        ->check(CLI::IsMember({"mish", "leaky_relu"}));
    train->add_option("--alpha", alpha, "LeakyReLU slope");
    train->add_option("--generations", tcfg.generations, "Generation limit");
    train->add_option("--population", tcfg.population, "Perturbations per generation (even)");
    train->add_option("--target", tcfg.target_return, "Stop once validation reaches this return");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a policy on seeded initial states");
    std::string eval_policy, eval_env, eval_out;
    int eval_episodes = 100;
    std::uint64_t eval_seed = 7;
    eval->add_option("--policy", eval_policy, "Policy JSON")->required();
    eval->add_option("--episodes", eval_episodes, "Episode count")->check(CLI::PositiveNumber);
    eval->add_option("--seed", eval_seed, "Initial-state seed");
    eval->add_option("--env", eval_env, "Environment config file");
    eval->add_option("--out", eval_out, "Also write the statistics to this JSON file");

    // collect
    auto* collect = app.add_subcommand("collect", "Roll out a policy and log every step");
    std::string collect_policy, collect_env, collect_out = env_dataset;
    int collect_episodes = 1000;
    std::uint64_t collect_seed = 42;
    collect->add_option("--policy", collect_policy, "Policy JSON")->required();
    collect->add_option("--episodes", collect_episodes, "Episode count")->check(CLI::PositiveNumber);
    collect->add_option("--seed", collect_seed, "Initial-state seed");
    collect->add_option("--env", collect_env, "Environment config file");
    collect->add_option("--out", collect_out, "Dataset directory to write");

    // embed
    auto* embed = app.add_subcommand("embed", "Embed latents in 2D");
    std::string embed_dataset = env_dataset, embed_input, embed_out, embed_loss, embed_episodes;
    int embed_max_episodes = 100;
    pacmap::Config pcfg;
    embed->add_option("--dataset", embed_dataset, "Dataset directory");
    embed->add_option("--input", embed_input, "CSV matrix to embed instead of dataset latents");
    embed->add_option("--episodes", embed_episodes, "Episode ids, e.g. 0-99,250");
    embed->add_option("--max-episodes", embed_max_episodes, "Use the first N episodes when --episodes is absent");
    embed->add_option("--seed", pcfg.seed, "Embedding seed");
    embed->add_option("--iters", pcfg.iters, "Optimization iterations")->check(CLI::PositiveNumber);
    embed->add_option("--neighbors", pcfg.n_neighbors, "Nearest-neighbor pairs per point")->check(CLI::PositiveNumber);
    embed->add_option("--out", embed_out, "Coordinates CSV (default: <dataset>/embedding.csv)");
    embed->add_option("--loss-out", embed_loss, "Loss history CSV (default: next to --out)");

    // plan
    auto* plan_cmd = app.add_subcommand("plan", "Plan thrusts that steer the latent to a goal");
    std::string plan_dataset = env_dataset, plan_problem, plan_source, plan_goal, plan_out, plan_policy, plan_env;
    int plan_horizon = 40;
    SolverConfig plan_solver;
    plan_cmd->add_option("--dataset", plan_dataset, "Dataset directory");
    plan_cmd->add_option("--problem", plan_problem, "Problem JSON (x0 or source, goal or goal_latent, horizon)");
    plan_cmd->add_option("--source", plan_source, "Intervention step, e.g. ep12:step40");
    plan_cmd->add_option("--goal", plan_goal, "Goal step, e.g. ep7:step55");
    plan_cmd->add_option("--horizon", plan_horizon, "Planning horizon in steps");
    plan_cmd->add_option("--policy", plan_policy, "Policy JSON (default: <dataset>/policy.json)");
    plan_cmd->add_option("--env", plan_env, "Environment config file");
    plan_cmd->add_option("--seed", plan_solver.seed, "Restart seed");
    plan_cmd->add_option("--restarts", plan_solver.restarts, "Random restarts");
    plan_cmd->add_option("--max-iters", plan_solver.max_iters, "Iterations per restart");
    plan_cmd->add_option("--out", plan_out, "Plan JSON to write (default: stdout)");

    // switch
    auto* sw = app.add_subcommand("switch", "Run a baseline and a switched rollout from one intervention");
    std::string sw_dataset = env_dataset, sw_source, sw_goal, sw_out = "report", sw_policy, sw_env;
    int sw_horizon = 40;
    bool sw_auto_source = false, sw_no_hand_back = false;
    SwitchOptions sw_options;
    sw->add_option("--dataset", sw_dataset, "Dataset directory");
    sw->add_option("--source", sw_source, "Intervention step, e.g. ep12:step40")->required();
    sw->add_option("--goal", sw_goal, "Goal step, e.g. ep7:step55")->required();
    sw->add_option("--horizon", sw_horizon, "Planning horizon in steps");
    sw->add_option("--out", sw_out, "Report directory");
    sw->add_option("--policy", sw_policy, "Policy JSON (default: <dataset>/policy.json)");
    sw->add_option("--env", sw_env, "Environment config file");
    sw->add_option("--seed", sw_options.solver.seed, "Restart seed");
    sw->add_option("--restarts", sw_options.solver.restarts, "Random restarts");
    sw->add_flag("--auto-source", sw_auto_source, "Intervene at the source step nearest the goal");
    sw->add_flag("--no-hand-back", sw_no_hand_back, "Keep applying the last planned thrust after the horizon");

    // report
    auto* rep = app.add_subcommand("report", "Summarize an experiment report directory");
    std::string rep_dir;
    bool rep_json = false;
    rep->add_option("dir", rep_dir, "Report directory")->required();
    rep->add_flag("--json", rep_json, "Print summary.json instead of text");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the HTTP API over a dataset");
    std::string serve_dataset = env_dataset, serve_host = "127.0.0.1", serve_results = "jobs";
    int serve_port = 8080, serve_workers = 1;
    serve->add_option("--dataset", serve_dataset, "Dataset directory");
    serve->add_option("--host", serve_host, "Bind address");
    serve->add_option("--port", serve_port, "Port")->check(CLI::Range(1, 65535));
    serve->add_option("--results", serve_results, "Job result directory");
    serve->add_option("--workers", serve_workers, "Job worker threads")->check(CLI::PositiveNumber);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Compare adjoint and finite-difference planner gradients");
    std::string gc_policy, gc_env;
    int gc_samples = 100, gc_horizon = 40;
    std::uint64_t gc_seed = 0;
    double gc_tol = 1e-4;
    gc->add_option("--policy", gc_policy, "Policy JSON")->required();
    gc->add_option("--samples", gc_samples, "Random problems")->check(CLI::PositiveNumber);
    gc->add_option("--horizon", gc_horizon, "Horizon")->check(CLI::PositiveNumber);
    gc->add_option("--seed", gc_seed, "Sampling seed");
    gc->add_option("--env", gc_env, "Environment config file");
    gc->add_option("--tol", gc_tol, "Maximum relative error for success");

    // fixtures
    auto* fx = app.add_subcommand("fixtures", "Search a seeded collection for outcome-flip interventions");
    std::string fx_policy, fx_env, fx_out;
    FixtureSearchConfig fcfg;
    fx->add_option("--policy", fx_policy, "Policy JSON")->required();
    fx->add_option("--env", fx_env, "Environment config file");
    fx->add_option("--out", fx_out, "Fixture JSON to write")->required();
    fx->add_option("--seed", fcfg.collect_seed, "Collection seed");
    fx->add_option("--episodes", fcfg.episodes, "Episodes to collect")->check(CLI::PositiveNumber);
    fx->add_option("--per-direction", fcfg.per_direction, "Fixtures kept per direction");
    fx->add_option("--max-sources", fcfg.max_sources, "Source episodes searched per direction");

    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            out << app.help();
            return kExitOk;
        } catch (const CLI::CallForVersion& e) {
            out << "modeswitch 1.0\n";
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            err << "error: " << e.what() << "\n";
            const CLI::App* sub = nullptr;
            for (const auto* s : app.get_subcommands()) {
                sub = s;
            }
            err << (sub ? sub->help() : app.help());
            return kExitUsage;
        }

        if (*train) {
            tcfg.activation = parse_activation(activation, alpha);
            tcfg.threads = threads;
            const auto r = train_baseline(env_or_default(train_env), tcfg, train_seed, [&](int gen, double ret) {
                out << "generation " << gen << " validation " << io::fmt(ret) << "\n";
            });
            io::save_policy(r.policy, train_out);
            out << "best validation return " << io::fmt(r.best_validation_return) << " after " << r.generations_run
                << " generations\n";
        } else if (*eval) {
            const auto policy = io::load_policy(eval_policy);
            const auto s = evaluate_policy(policy, env_or_default(eval_env), eval_episodes, eval_seed, threads);
            const io::json doc = {{"schema_version", io::kSchemaVersion},
                                  {"episodes", eval_episodes},
                                  {"seed", eval_seed},
                                  {"mean", s.mean},
                                  {"min", s.min},
                                  {"max", s.max},
                                  {"solved", s.solved},
                                  {"crashed", s.crashed},
                                  {"timeout", s.timeout},
                                  {"out_of_bounds", s.out_of_bounds},
                                  {"failed_other", s.failed_other}};
            if (!eval_out.empty()) {
                io::write_json(eval_out, doc);
            }
            out << doc.dump(2) << "\n";
        } else if (*collect) {
            const fs::path dir = require_dataset(collect_out);
            const auto policy = io::load_policy(collect_policy);
            const EnvConfig env = env_or_default(collect_env);
            const Dataset data = collect_rollouts(policy, env, collect_episodes, collect_seed, threads);
            io::save_dataset(data, dir, &policy, &env);
            int solved = 0;
            for (const auto& e : data.episodes) {
                solved += e.solved() ? 1 : 0;
            }
            out << "collected " << data.episodes.size() << " episodes (" << solved << " solved, "
                << data.episodes.size() - static_cast<std::size_t>(solved) << " failed) into " << dir.string() << "\n";
        } else if (*embed) {
            pcfg.threads = threads;
            pacmap::Matrix x;
            std::vector<io::PointRef> refs;
            fs::path coords_path = embed_out;
            if (!embed_input.empty()) {
                x = io::load_matrix(embed_input);
                for (Eigen::Index i = 0; i < x.rows(); ++i) {
                    refs.push_back(io::PointRef{-1, static_cast<int>(i), ""});
                }
                if (coords_path.empty()) {
                    fail(ErrorKind::UsageError, "--out is required with --input");
                }
            } else {
                const fs::path dir = require_dataset(embed_dataset);
                const Dataset data = io::load_dataset(dir);
                std::vector<int> ids = parse_id_list(embed_episodes);
                if (ids.empty()) {
                    for (const auto& e : data.episodes) {
                        if (static_cast<int>(ids.size()) >= embed_max_episodes) {
                            break;
                        }
                        ids.push_back(e.id);
                    }
                }
                x = io::latent_matrix(data, ids, &refs);
                if (coords_path.empty()) {
                    coords_path = dir / "embedding.csv";
                }
            }
            const auto r = pacmap::fit(x, pcfg);
            io::write_file(coords_path, io::format_coordinates(r.coordinates, refs));
            const fs::path loss_path =
                embed_loss.empty() ? coords_path.parent_path() / (coords_path.stem().string() + "_loss.csv")
                                   : fs::path(embed_loss);
            io::write_file(loss_path, io::format_loss_history(r.loss_history));
            out << "embedded " << x.rows() << " points, final loss " << io::fmt(r.loss_history.back()) << " -> "
                << coords_path.string() << "\n";
        } else if (*plan_cmd) {
            std::optional<Dataset> data;
            fs::path dir;
            if (!plan_dataset.empty()) {
                dir = plan_dataset;
                data = io::load_dataset(dir);
            }
            const std::string policy_path =
                !plan_policy.empty() ? plan_policy : (dir.empty() ? "" : (dir / "policy.json").string());
            if (policy_path.empty()) {
                fail(ErrorKind::UsageError, "no policy: pass --policy or --dataset");
            }
            auto policy = std::make_shared<const PolicyNet>(io::load_policy(policy_path));
            const EnvConfig env = dir.empty() ? env_or_default(plan_env) : dataset_env(dir, plan_env);
            io::json body;
            if (!plan_problem.empty()) {
                body = io::read_json(plan_problem);
            } else {
                if (plan_source.empty() || plan_goal.empty()) {
                    fail(ErrorKind::UsageError, "pass --problem, or both --source and --goal");
                }
                body = {{"source", io::step_ref_json(parse_step_ref(plan_source))},
                        {"goal", io::step_ref_json(parse_step_ref(plan_goal))},
                        {"horizon", plan_horizon}};
            }
            const PlanProblem problem = io::plan_problem_from_json(body, data ? &*data : nullptr, policy, env);
            const SolverConfig solver = io::solver_from_json(body.value("solver", io::json()), plan_solver);
            io::json doc = io::plan_result_to_json(plan(problem, solver));
            doc["x0"] = io::state_to_json(problem.x0);
            doc["horizon"] = problem.horizon;
            if (plan_out.empty()) {
                out << doc.dump(2) << "\n";
            } else {
                io::write_json(plan_out, doc);
                out << "terminal objective " << io::fmt(doc.at("terminal_objective").get<double>()) << " -> "
                    << plan_out << "\n";
            }
        } else if (*sw) {
            const fs::path dir = require_dataset(sw_dataset);
            const Dataset data = io::load_dataset(dir);
            auto policy = std::make_shared<const PolicyNet>(
                io::load_policy(sw_policy.empty() ? dir / "policy.json" : fs::path(sw_policy)));
            const EnvConfig env = dataset_env(dir, sw_env);
            InterventionSpec spec;
            spec.source = parse_step_ref(sw_source);
            spec.goal = parse_step_ref(sw_goal);
            spec.horizon = sw_horizon;
            spec.manual_source_step = !sw_auto_source;
            sw_options.hand_back = !sw_no_hand_back;
            const auto report = switch_experiment(policy, env, data, spec, sw_options);
            std::shared_ptr<const pacmap::CachedProjector> projector;
            if (fs::exists(dir / "embedding.csv")) {
                projector = load_service_dataset(dir)->projector;
            }
            io::export_report(report, sw_out, projector.get());
            const auto b = report.baseline_summary(), s = report.switched_summary();
            out << "baseline " << to_string(b.outcome) << " return " << io::fmt(b.cumulative_reward)
                << " min distance " << io::fmt(b.min_distance) << "\n";
            if (report.plan_failed()) {
                out << "plan failed: " << report.plan_error << "\n";
            } else {
                out << "switched " << to_string(s.outcome) << " return " << io::fmt(s.cumulative_reward)
                    << " min distance " << io::fmt(s.min_distance) << "\n";
                out << (report.flipped ? "outcome flipped" : "outcome unchanged") << "\n";
            }
            out << "report -> " << sw_out << "\n";
        } else if (*rep) {
            if (rep_json) {
                out << io::read_json(fs::path(rep_dir) / "summary.json").dump(2) << "\n";
            } else {
                const auto r = io::import_report(rep_dir);
                const auto b = r.baseline_summary(), s = r.switched_summary();
                out << "source ep" << r.spec.source.episode << ":step" << r.spec.source.step << " goal ep"
                    << r.spec.goal.episode << ":step" << r.spec.goal.step << " horizon " << r.spec.horizon << "\n";
                out << "baseline " << to_string(b.outcome) << " return " << io::fmt(b.cumulative_reward) << " steps "
                    << b.steps << " min distance " << io::fmt(b.min_distance) << " at " << b.argmin_step << "\n";
                if (r.plan_failed()) {
                    out << "plan failed: " << r.plan_error << "\n";
                } else {
                    out << "plan " << to_string(r.plan->status) << " terminal objective "
                        << io::fmt(r.plan->terminal_objective) << "\n";
                    out << "switched " << to_string(s.outcome) << " return " << io::fmt(s.cumulative_reward)
                        << " steps " << s.steps << " min distance " << io::fmt(s.min_distance) << " at "
                        << s.argmin_step << "\n";
                    out << (r.flipped ? "outcome flipped" : "outcome unchanged") << "\n";
                }
            }
        } else if (*serve) {
            ServiceConfig scfg;
            scfg.dataset_dir = require_dataset(serve_dataset);
            scfg.results_dir = serve_results;
            scfg.workers = serve_workers;
            Service service(scfg);
            out << "serving " << scfg.dataset_dir.string() << " on http://" << serve_host << ":" << serve_port
                << std::endl;
            if (!service.listen(serve_host, serve_port)) {
                fail(ErrorKind::IoFailure, "cannot listen on " + serve_host + ":" + std::to_string(serve_port));
            }
        } else if (*gc) {
            auto policy = std::make_shared<const PolicyNet>(io::load_policy(gc_policy));
            const auto r = gradient_check_random(policy, env_or_default(gc_env), gc_samples, gc_seed, gc_horizon);
            out << "samples " << r.samples << " kink-skipped components " << r.kink_skipped << "\n";
            out << "max relative error " << io::fmt(r.max_relative_error) << "\n";
            out << "median relative error " << io::fmt(r.median_relative_error) << "\n";
            if (!(r.max_relative_error <= gc_tol)) {
                err << "error: max relative error above " << io::fmt(gc_tol) << "\n";
                return kExitFailure;
            }
        } else if (*fx) {
            fcfg.threads = threads;
            auto policy = std::make_shared<const PolicyNet>(io::load_policy(fx_policy));
            const auto set = generate_fixtures(policy, env_or_default(fx_env), fcfg, [&](const Fixture& f) {
                out << "found " << to_string(f.direction) << " ep" << f.spec.source.episode << ":step"
                    << f.spec.source.step << " objective " << io::fmt(f.terminal_objective) << std::endl;
            });
            io::write_json(fx_out, io::fixture_set_to_json(set, fcfg.solver));
            out << set.fixtures.size() << " fixtures -> " << fx_out << "\n";
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.kind() == ErrorKind::UsageError ? kExitUsage : kExitFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}

} // namespace modeswitch::cli

#endif
