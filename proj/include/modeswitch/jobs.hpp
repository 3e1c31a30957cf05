#ifndef MODESWITCH_JOBS_HPP
#define MODESWITCH_JOBS_HPP

#include "error.hpp"
#include "io.hpp"

#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

/**
 * @file jobs.hpp
 *
 * @brief Background job table with a fixed worker pool.
 */

namespace modeswitch {

enum class JobKind { Plan, Embed, Collect, Experiment };
enum class JobStatus { Queued, Running, Done, Failed };

inline std::string_view to_string(JobKind k) {
    switch (k) {
    case JobKind::Plan: return "Plan";
    case JobKind::Embed: return "Embed";
    case JobKind::Collect: return "Collect";
    case JobKind::Experiment: return "Experiment";
    }
    return "Plan";
}

inline std::string_view to_string(JobStatus s) {
    switch (s) {
    case JobStatus::Queued: return "Queued";
    case JobStatus::Running: return "Running";
    case JobStatus::Done: return "Done";
    case JobStatus::Failed: return "Failed";
    }
    return "Queued";
}

struct JobHandle {
    std::string id;
    JobKind kind = JobKind::Plan;
    JobStatus status = JobStatus::Queued;
    double progress = 0;
    /** Result file; set only once the job is Done. */
    std::string result_location;
    std::string error_kind;
    std::string error;
};

inline io::json job_to_json(const JobHandle& j) {
    io::json doc = {{"schema_version", io::kSchemaVersion},
                    {"id", j.id},
                    {"kind", to_string(j.kind)},
                    {"status", to_string(j.status)},
                    {"progress", j.progress}};
    doc["result_location"] = j.result_location.empty() ? io::json(nullptr) : io::json(j.result_location);
    if (j.status == JobStatus::Failed) {
        doc["error"] = {{"kind", j.error_kind}, {"message", j.error}};
    }
    return doc;
}

/**
 * Jobs move Queued -> Running -> Done or Failed, never backwards. Each job's result
 * document is written to `<results_dir>/<id>.json` before the job is marked Done.
 */
class JobQueue {
public:
    using Progress = std::function<void(double)>;
    using Work = std::function<io::json(const std::string& id, const Progress&)>;

    explicit JobQueue(std::filesystem::path results_dir, int workers = 1) : results_dir_(std::move(results_dir)) {
        std::filesystem::create_directories(results_dir_);
        for (int i = 0; i < std::max(1, workers); ++i) {
            pool_.emplace_back([this] { run(); });
        }
    }

    JobQueue(const JobQueue&) = delete;
    JobQueue& operator=(const JobQueue&) = delete;

    ~JobQueue() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stopping_ = true;
        }
        wake_.notify_all();
        for (auto& t : pool_) {
            t.join();
        }
    }

    std::string submit(JobKind kind, Work work) {
        std::string id;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            char buf[32];
            std::snprintf(buf, sizeof buf, "job-%06d", ++counter_);
            id = buf;
            JobHandle h;
            h.id = id;
            h.kind = kind;
            jobs_[id] = h;
            queue_.emplace_back(id, std::move(work));
        }
        wake_.notify_one();
        return id;
    }

    std::optional<JobHandle> get(const std::string& id) const {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    /** Block until the job has finished; returns its final handle. */
    JobHandle wait(const std::string& id) const {
        std::unique_lock<std::mutex> lock(mutex_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) {
            fail(ErrorKind::NotFound, "unknown job " + id);
        }
        done_.wait(lock, [&] {
            const auto s = jobs_.at(id).status;
            return s == JobStatus::Done || s == JobStatus::Failed;
        });
        return jobs_.at(id);
    }

    const std::filesystem::path& results_dir() const { return results_dir_; }

private:
    void set_status(const std::string& id, JobStatus next) {
        auto& h = jobs_.at(id);
        if (static_cast<int>(next) <= static_cast<int>(h.status)) {
            fail(ErrorKind::InvalidArgument, "job status may only move forward");
        }
        h.status = next;
    }

    void run() {
        for (;;) {
            std::pair<std::string, Work> item;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                wake_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
                if (queue_.empty()) {
                    return;
                }
                item = std::move(queue_.front());
                queue_.pop_front();
                set_status(item.first, JobStatus::Running);
            }
            const std::string& id = item.first;
            auto progress = [&](double f) {
                std::lock_guard<std::mutex> lock(mutex_);
                jobs_.at(id).progress = std::clamp(f, 0.0, 1.0);
            };
            try {
                const io::json result = item.second(id, progress);
                const auto path = results_dir_ / (id + ".json");
                io::write_json(path, result);
                std::lock_guard<std::mutex> lock(mutex_);
                auto& h = jobs_.at(id);
                h.progress = 1.0;
                h.result_location = path.string();
                set_status(id, JobStatus::Done);
            } catch (const Error& e) {
                finish_failed(id, std::string(to_string(e.kind())), e.what());
            } catch (const std::exception& e) {
                finish_failed(id, "Internal", e.what());
            }
            done_.notify_all();
        }
    }

    void finish_failed(const std::string& id, const std::string& kind, const std::string& message) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& h = jobs_.at(id);
        h.error_kind = kind;
        h.error = message;
        set_status(id, JobStatus::Failed);
    }

    std::filesystem::path results_dir_;
    mutable std::mutex mutex_;
    std::condition_variable wake_;
    mutable std::condition_variable done_;
    std::map<std::string, JobHandle> jobs_;
    std::deque<std::pair<std::string, Work>> queue_;
    std::vector<std::thread> pool_;
    int counter_ = 0;
    bool stopping_ = false;
};

} // namespace modeswitch

#endif
