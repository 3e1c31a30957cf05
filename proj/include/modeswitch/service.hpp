#ifndef MODESWITCH_SERVICE_HPP
#define MODESWITCH_SERVICE_HPP

#include "analysis.hpp"
#include "io.hpp"
#include "jobs.hpp"
#include "pacmap.hpp"
#include "report.hpp"

#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

/**
 * @file service.hpp
 *
 * @brief HTTP API over a dataset directory.
 *
 *   GET  /embedding        2D coordinates with episode, step and outcome labels
 *   GET  /episodes         episode index
 *   GET  /episodes/{id}    step table of one episode
 *   POST /plan             intervention -> job handle
 *   POST /experiment       intervention -> job handle
 *   GET  /jobs/{id}        job status, with the result once done
 *   POST /reload           re-read the dataset directory
 *
 * Error responses are JSON `{"error": {"kind", "message"}}`: 400 for malformed or
 * inconsistent requests, 404 for unknown ids, 409 while the dataset is reloading and
 * 500 otherwise.
 */

namespace modeswitch {

struct ServiceConfig {
    std::filesystem::path dataset_dir;
    std::filesystem::path results_dir = "jobs";
    int workers = 1;
    std::string cors_origin = "*";
    SwitchOptions switch_options{};
};

/** Everything the service reads from a dataset directory. Immutable once loaded. */
struct LoadedDataset {
    Dataset data;
    std::vector<io::IndexRow> index;
    std::shared_ptr<const PolicyNet> policy;
    EnvConfig env;
    std::optional<pacmap::Coords> embedding;
    std::vector<io::PointRef> embedding_refs;
    std::shared_ptr<const pacmap::CachedProjector> projector;
};

/**
 * Reads `index.csv`, the episode logs, `policy.json`, `env.cfg` (optional) and
 * `embedding.csv` (optional, as written by the embed command).
 */
inline std::shared_ptr<const LoadedDataset> load_service_dataset(const std::filesystem::path& dir) {
    auto out = std::make_shared<LoadedDataset>();
    out->data = io::load_dataset(dir);
    out->index = io::load_index(dir);
    out->policy = std::make_shared<const PolicyNet>(io::load_policy(dir / "policy.json"));
    if (std::filesystem::exists(dir / "env.cfg")) {
        out->env = io::load_env_config(dir / "env.cfg");
    }
    if (std::filesystem::exists(dir / "embedding.csv")) {
        out->embedding = io::parse_coordinates(io::read_file(dir / "embedding.csv"), &out->embedding_refs);
        pacmap::Matrix latents(static_cast<Eigen::Index>(out->embedding_refs.size()), out->policy->hidden());
        for (std::size_t i = 0; i < out->embedding_refs.size(); ++i) {
            const auto& r = out->embedding_refs[i];
            latents.row(static_cast<Eigen::Index>(i)) = out->data.step(r.episode, r.step).latent.transpose();
        }
        out->projector = std::make_shared<const pacmap::CachedProjector>(std::move(latents), *out->embedding);
    }
    return out;
}

class Service {
public:
    explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)), jobs_(cfg_.results_dir, cfg_.workers) {
        state_ = load_service_dataset(cfg_.dataset_dir);
        routes();
    }

    httplib::Server& server() { return server_; }

    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    /** Bind to a free port and serve on the calling thread. */
    int bind_any(const std::string& host) { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void stop() { server_.stop(); }

    JobQueue& jobs() { return jobs_; }

    /** Replace the loaded dataset. Requests made meanwhile are answered with 409. */
    void reload() {
        std::lock_guard<std::mutex> guard(reload_mutex_);
        reloading_ = true;
        try {
            auto fresh = load_service_dataset(cfg_.dataset_dir);
            std::atomic_store(&state_, std::shared_ptr<const LoadedDataset>(std::move(fresh)));
        } catch (...) {
            reloading_ = false;
            throw;
        }
        reloading_ = false;
    }

    bool reloading() const { return reloading_; }

private:
    using json = io::json;

    static void send(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
        send(res, status,
             {{"schema_version", io::kSchemaVersion}, {"error", {{"kind", kind}, {"message", message}}}});
    }

    static int status_for(ErrorKind k) {
        switch (k) {
        case ErrorKind::NotFound: return 404;
        case ErrorKind::DimensionMismatch:
        case ErrorKind::InvalidArgument:
        case ErrorKind::SchemaMismatch:
        case ErrorKind::ShapeMismatch:
        case ErrorKind::InvalidInitialState:
        case ErrorKind::UsageError: return 400;
        default: return 500;
        }
    }

    /** Run `fn` against the current dataset, mapping errors to status codes. */
    template <typename Fn>
    void guarded(httplib::Response& res, Fn&& fn) {
        if (reloading_) {
            send_error(res, 409, "Reloading", "dataset is reloading");
            return;
        }
        const auto state = std::atomic_load(&state_);
        try {
            fn(*state);
        } catch (const Error& e) {
            send_error(res, status_for(e.kind()), to_string(e.kind()), e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, "SchemaMismatch", e.what());
        }
    }

    static json parse_body(const httplib::Request& req) {
        try {
            return json::parse(req.body);
        } catch (const json::parse_error& e) {
            fail(ErrorKind::SchemaMismatch, std::string("request body is not JSON: ") + e.what());
        }
    }

    void routes() {
        server_.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                                     {"Access-Control-Allow-Headers", "Content-Type"},
                                     {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string message = "unknown error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                message = e.what();
            } catch (...) {
            }
            send_error(res, 500, "Internal", message);
        });

        server_.Get("/embedding", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&](const LoadedDataset& ds) {
                if (!ds.embedding) {
                    fail(ErrorKind::NotFound, "dataset has no embedding.csv; run the embed command");
                }
                json points = json::array();
                for (Eigen::Index i = 0; i < ds.embedding->rows(); ++i) {
                    const auto& r = ds.embedding_refs[static_cast<std::size_t>(i)];
                    points.push_back({{"point", i},
                                      {"episode", r.episode},
                                      {"step", r.step},
                                      {"y1", (*ds.embedding)(i, 0)},
                                      {"y2", (*ds.embedding)(i, 1)},
                                      {"outcome", r.outcome}});
                }
                send(res, 200, {{"schema_version", io::kSchemaVersion}, {"points", points}});
            });
        });

        server_.Get("/episodes", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&](const LoadedDataset& ds) {
                json list = json::array();
                for (const auto& e : ds.data.episodes) {
                    list.push_back(io::episode_summary_json(e));
                }
                send(res, 200, {{"schema_version", io::kSchemaVersion}, {"episodes", list}});
            });
        });

        server_.Get(R"(/episodes/(-?\d+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&](const LoadedDataset& ds) {
                send(res, 200, io::episode_to_json(ds.data.episode(std::stoi(req.matches[1]))));
            });
        });
        server_.Get(R"(/episodes/([^/]+))", [](const httplib::Request& req, httplib::Response& res) {
            send_error(res, 404, "NotFound", "no episode '" + std::string(req.matches[1]) + "'");
        });

        server_.Post("/plan", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&](const LoadedDataset& ds) {
                const json body = parse_body(req);
                const PlanProblem problem = io::plan_problem_from_json(body, &ds.data, ds.policy, ds.env,
                                                                     cfg_.switch_options.safety_floor);
                const SolverConfig solver = io::solver_from_json(body.value("solver", json()), cfg_.switch_options.solver);
                const std::string id =
                    jobs_.submit(JobKind::Plan, [problem, solver](const std::string&, const JobQueue::Progress&) {
                        json doc = io::plan_result_to_json(plan(problem, solver));
                        doc["x0"] = io::state_to_json(problem.x0);
                        doc["horizon"] = problem.horizon;
                        return doc;
                    });
                send(res, 202, job_to_json(*jobs_.get(id)));
            });
        });

        server_.Post("/experiment", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&](const LoadedDataset& ds) {
                const json body = parse_body(req);
                const InterventionSpec spec = io::intervention_from_json(body);
                // Validate now so bad requests fail with 4xx rather than as a failed job.
                const auto [source, goal] = resolve_intervention(ds.data, spec);
                if (goal.size() != ds.policy->hidden()) {
                    fail(ErrorKind::DimensionMismatch, "goal latent dimension does not match policy");
                }
                if (spec.horizon < 0) {
                    fail(ErrorKind::InvalidArgument, "horizon must be >= 0");
                }
                SwitchOptions options = cfg_.switch_options;
                options.solver = io::solver_from_json(body.value("solver", json()), options.solver);
                auto state = std::atomic_load(&state_);
                const auto results = jobs_.results_dir();
                const std::string id = jobs_.submit(
                    JobKind::Experiment,
                    [state, spec, options, results](const std::string& job, const JobQueue::Progress& progress) {
                        const auto report = switch_experiment(state->policy, state->env, state->data, spec, options);
                        progress(0.9);
                        const auto dir = results / (job + "_report");
                        io::export_report(report, dir, state->projector.get());
                        json doc = io::report_summary_json(report);
                        doc["report_dir"] = dir.string();
                        return doc;
                    });
                send(res, 202, job_to_json(*jobs_.get(id)));
            });
        });

        server_.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto handle = jobs_.get(req.matches[1]);
            if (!handle) {
                send_error(res, 404, "NotFound", "no job '" + std::string(req.matches[1]) + "'");
                return;
            }
            json doc = job_to_json(*handle);
            if (handle->status == JobStatus::Done) {
                doc["result"] = io::read_json(handle->result_location);
            }
            send(res, handle->status == JobStatus::Failed ? 500 : 200, doc);
        });

        server_.Post("/reload", [this](const httplib::Request&, httplib::Response& res) {
            if (reloading_) {
                send_error(res, 409, "Reloading", "dataset is reloading");
                return;
            }
            try {
                reload();
            } catch (const Error& e) {
                send_error(res, 500, to_string(e.kind()), e.what());
                return;
            }
            send(res, 200, {{"schema_version", io::kSchemaVersion}, {"reloaded", true}});
        });
    }

    ServiceConfig cfg_;
    JobQueue jobs_;
    httplib::Server server_;
    std::shared_ptr<const LoadedDataset> state_;
    std::mutex reload_mutex_;
    std::atomic<bool> reloading_{false};
};

} // namespace modeswitch

#endif
