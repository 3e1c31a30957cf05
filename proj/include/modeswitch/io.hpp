#ifndef MODESWITCH_IO_HPP
#define MODESWITCH_IO_HPP

#include "episode.hpp"
#include "error.hpp"
#include "lander.hpp"
#include "pacmap.hpp"
#include "planner.hpp"
#include "policy.hpp"
#include "trainer.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file io.hpp
 *
 * @brief Text file formats: key-value configs, policy documents, episode logs,
 * dataset directories, matrices, embeddings and plan documents.
 *
 * Every floating-point value is written with 17 significant digits so files round-trip
 * exactly, and every writer is deterministic so equal inputs give equal bytes.
 */

namespace modeswitch::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
        fail(ErrorKind::SchemaMismatch, "cannot parse " + what + " from '" + s + "'");
    }
    return v;
}

inline int parse_int(const std::string& s, const std::string& what) {
    const double v = parse_double(s, what);
    if (v != static_cast<int>(v)) {
        fail(ErrorKind::SchemaMismatch, what + " is not an integer: '" + s + "'");
    }
    return static_cast<int>(v);
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::IoFailure, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/** Write to a sibling temporary file, then rename over `path`. Readers never see partial files. */
inline void write_file(const fs::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path(), ec);
    }
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            fail(ErrorKind::IoFailure, "cannot write " + tmp.string());
        }
        out << content;
        if (!out) {
            fail(ErrorKind::IoFailure, "write failed for " + tmp.string());
        }
    }
    fs::rename(tmp, path, ec);
    if (ec) {
        fail(ErrorKind::IoFailure, "cannot rename " + tmp.string() + ": " + ec.message());
    }
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        fail(ErrorKind::SchemaMismatch, path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

inline std::vector<std::string> split(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, delim)) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == delim) {
        out.emplace_back();
    }
    return out;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

/** Rows of a CSV text with a header line; each row keyed by column name. */
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return static_cast<int>(i);
            }
        }
        fail(ErrorKind::SchemaMismatch, "missing column '" + name + "'");
    }
};

inline Table parse_csv(const std::string& text) {
    Table t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        auto cells = split(line, ',');
        if (first) {
            t.header = std::move(cells);
            first = false;
            continue;
        }
        if (cells.size() != t.header.size()) {
            fail(ErrorKind::SchemaMismatch, "row has " + std::to_string(cells.size()) + " cells, header has " +
                                                std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (first) {
        fail(ErrorKind::SchemaMismatch, "empty table");
    }
    return t;
}

// ---------------------------------------------------------------------------
// Key-value configuration

namespace detail {

inline std::map<std::string, double*> env_keys(EnvConfig& c) {
    auto& p = c.physics;
    auto& r = c.reward;
    auto& k = c.contact;
    auto& o = c.observation;
    return {
        {"physics.mass", &p.mass},
        {"physics.inertia", &p.inertia},
        {"physics.gravity", &p.gravity},
        {"physics.main_thrust", &p.main_thrust},
        {"physics.side_thrust", &p.side_thrust},
        {"physics.torque_constant", &p.torque_constant},
        {"physics.dt", &p.dt},
        {"reward.distance_weight", &r.distance_weight},
        {"reward.speed_weight", &r.speed_weight},
        {"reward.angle_weight", &r.angle_weight},
        {"reward.leg_weight", &r.leg_weight},
        {"reward.main_cost", &r.main_cost},
        {"reward.side_cost", &r.side_cost},
        {"reward.land_bonus", &r.land_bonus},
        {"reward.crash_penalty", &r.crash_penalty},
        {"reward.out_of_bounds_penalty", &r.out_of_bounds_penalty},
        {"reward.solved_threshold", &r.solved_threshold},
        {"contact.leg_contact_height", &k.leg_contact_height},
        {"contact.stiffness", &k.stiffness},
        {"contact.damping", &k.damping},
        {"contact.friction", &k.friction},
        {"contact.angular_stiffness", &k.angular_stiffness},
        {"contact.angular_damping", &k.angular_damping},
        {"contact.compression_limit", &k.compression_limit},
        {"contact.max_contact_angle", &k.max_contact_angle},
        {"contact.rest_speed", &k.rest_speed},
        {"observation.position", &o.position},
        {"observation.velocity", &o.velocity},
        {"observation.angular_rate", &o.angular_rate},
        {"world.x_bound", &c.x_bound},
        {"world.y_ceiling", &c.y_ceiling},
    };
}

inline std::map<std::string, std::array<double, 2>*> range_keys(InitialStateRanges& r) {
    return {{"initial.x", &r.x},         {"initial.y", &r.y},         {"initial.vx", &r.vx},
            {"initial.vy", &r.vy},       {"initial.angle", &r.angle}, {"initial.angular_rate", &r.angular_rate}};
}

inline std::map<std::string, double*> state_keys(LanderState& s) {
    return {{"state.x", &s.x},   {"state.y", &s.y},         {"state.vx", &s.vx},
            {"state.vy", &s.vy}, {"state.angle", &s.angle}, {"state.angular_rate", &s.angular_rate}};
}

/** `key = value` lines; `#` starts a comment. */
inline std::vector<std::pair<std::string, std::string>> key_values(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorKind::SchemaMismatch, "line " + std::to_string(lineno) + ": expected key = value");
        }
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

} // namespace detail

/**
 * Environment configuration from key-value text. Keys not present keep their defaults.
 * Ranges are written `lo, hi`. Unknown keys are rejected.
 */
inline EnvConfig parse_env_config(const std::string& text, EnvConfig base = {}) {
    auto scalars = detail::env_keys(base);
    auto ranges = detail::range_keys(base.initial);
    for (const auto& [key, value] : detail::key_values(text)) {
        if (auto it = scalars.find(key); it != scalars.end()) {
            *it->second = parse_double(value, key);
        } else if (auto r = ranges.find(key); r != ranges.end()) {
            const auto parts = split(value, ',');
            if (parts.size() != 2) {
                fail(ErrorKind::SchemaMismatch, key + " must be 'lo, hi'");
            }
            (*r->second)[0] = parse_double(trim(parts[0]), key);
            (*r->second)[1] = parse_double(trim(parts[1]), key);
        } else if (key == "contact.rest_steps") {
            base.contact.rest_steps = parse_int(value, key);
        } else if (key == "world.max_steps") {
            base.max_steps = parse_int(value, key);
        } else {
            fail(ErrorKind::SchemaMismatch, "unknown config key '" + key + "'");
        }
    }
    base.physics.validate();
    return base;
}

inline std::string format_env_config(EnvConfig c) {
    std::string out;
    for (const auto& [key, ptr] : detail::env_keys(c)) {
        out += key + " = " + fmt(*ptr) + "\n";
    }
    for (const auto& [key, ptr] : detail::range_keys(c.initial)) {
        out += key + " = " + fmt((*ptr)[0]) + ", " + fmt((*ptr)[1]) + "\n";
    }
    out += "contact.rest_steps = " + std::to_string(c.contact.rest_steps) + "\n";
    out += "world.max_steps = " + std::to_string(c.max_steps) + "\n";
    return out;
}

inline EnvConfig load_env_config(const fs::path& path) { return parse_env_config(read_file(path)); }

/** Initial state from `state.<field> = value` lines; unspecified fields are 0. */
inline LanderState parse_initial_state(const std::string& text) {
    LanderState s;
    auto keys = detail::state_keys(s);
    for (const auto& [key, value] : detail::key_values(text)) {
        auto it = keys.find(key);
        if (it == keys.end()) {
            fail(ErrorKind::SchemaMismatch, "unknown state key '" + key + "'");
        }
        *it->second = parse_double(value, key);
    }
    return s;
}

// ---------------------------------------------------------------------------
// JSON helpers for domain types

inline json state_to_json(const LanderState& s) {
    return {{"x", s.x},         {"y", s.y},
            {"vx", s.vx},       {"vy", s.vy},
            {"angle", s.angle}, {"angular_rate", s.angular_rate},
            {"leg_left", s.leg_left}, {"leg_right", s.leg_right}};
}

inline double number_field(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number()) {
        fail(ErrorKind::SchemaMismatch, std::string("missing numeric field '") + key + "'");
    }
    return j.at(key).get<double>();
}

inline LanderState state_from_json(const json& j) {
    if (!j.is_object()) {
        fail(ErrorKind::SchemaMismatch, "state must be an object");
    }
    LanderState s;
    s.x = number_field(j, "x");
    s.y = number_field(j, "y");
    s.vx = number_field(j, "vx");
    s.vy = number_field(j, "vy");
    s.angle = number_field(j, "angle");
    s.angular_rate = number_field(j, "angular_rate");
    s.leg_left = j.value("leg_left", 0);
    s.leg_right = j.value("leg_right", 0);
    return s;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        a.push_back(v[i]);
    }
    return a;
}

inline Eigen::VectorXd vector_from_json(const json& a, const std::string& what) {
    if (!a.is_array()) {
        fail(ErrorKind::SchemaMismatch, what + " must be an array");
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) {
            fail(ErrorKind::SchemaMismatch, what + " must contain numbers");
        }
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

// ---------------------------------------------------------------------------
// Policy documents

inline json policy_to_json(const PolicyNet& p) {
    p.validate();
    auto flat = [](const Eigen::MatrixXd& m) {
        json a = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                a.push_back(m(i, j));
            }
        }
        return a;
    };
    return {{"version", kSchemaVersion},
            {"arch", {PolicyNet::input_dim, p.hidden(), p.hidden(), PolicyNet::output_dim}},
            {"activation", {{"name", p.activation().name()}, {"alpha", p.activation().alpha}}},
            {"weights", {flat(p.w1()), flat(p.w2()), flat(p.w3())}},
            {"biases", {vector_to_json(p.b1()), vector_to_json(p.b2()), vector_to_json(p.b3())}},
            {"meta", p.meta().is_null() ? json::object() : p.meta()}};
}

/**
 * Parse a policy document. Missing fields or an unknown version give SchemaMismatch,
 * layer sizes that disagree with `arch` give ShapeMismatch, and null, string or
 * non-finite entries give NonFiniteParameter.
 */
inline PolicyNet policy_from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("version")) {
        fail(ErrorKind::SchemaMismatch, "policy document has no version");
    }
    if (doc.at("version") != kSchemaVersion) {
        fail(ErrorKind::SchemaMismatch, "unsupported policy version " + doc.at("version").dump());
    }
    for (const char* key : {"arch", "activation", "weights", "biases"}) {
        if (!doc.contains(key)) {
            fail(ErrorKind::SchemaMismatch, std::string("policy document has no '") + key + "'");
        }
    }
    const json& arch = doc.at("arch");
    if (!arch.is_array() || arch.size() != 4 || !std::all_of(arch.begin(), arch.end(), [](const json& v) {
            return v.is_number_integer();
        })) {
        fail(ErrorKind::SchemaMismatch, "arch must be four integer layer sizes");
    }
    const int in = arch[0], h1 = arch[1], h2 = arch[2], out = arch[3];
    if (in != PolicyNet::input_dim || out != PolicyNet::output_dim || h1 != h2 || h1 < 1) {
        fail(ErrorKind::ShapeMismatch, "arch " + arch.dump() + " is not [8, H, H, 2]");
    }
    const json& act = doc.at("activation");
    if (!act.is_object() || !act.contains("name") || !act.at("name").is_string()) {
        fail(ErrorKind::SchemaMismatch, "activation must have a name");
    }
    Activation activation;
    const std::string name = act.at("name");
    if (name == "Mish") {
        activation.kind = Activation::Kind::Mish;
    } else if (name == "LeakyReLU") {
        activation.kind = Activation::Kind::LeakyReLU;
    } else {
        fail(ErrorKind::SchemaMismatch, "unknown activation '" + name + "'");
    }
    if (act.contains("alpha")) {
        if (!act.at("alpha").is_number()) {
            fail(ErrorKind::NonFiniteParameter, "activation alpha is not a number");
        }
        activation.alpha = act.at("alpha").get<double>();
    }

    const json& w = doc.at("weights");
    const json& b = doc.at("biases");
    if (!w.is_array() || !b.is_array() || w.size() != 3 || b.size() != 3) {
        fail(ErrorKind::SchemaMismatch, "weights and biases must each hold three layers");
    }
    auto numbers = [](const json& a, std::size_t expected, const std::string& what) {
        if (!a.is_array()) {
            fail(ErrorKind::SchemaMismatch, what + " must be an array");
        }
        if (a.size() != expected) {
            fail(ErrorKind::ShapeMismatch, what + " has " + std::to_string(a.size()) + " entries, expected " +
                                               std::to_string(expected));
        }
        std::vector<double> v;
        v.reserve(expected);
        for (const auto& x : a) {
            if (!x.is_number() || !std::isfinite(x.get<double>())) {
                fail(ErrorKind::NonFiniteParameter, what + " contains a non-finite entry");
            }
            v.push_back(x.get<double>());
        }
        return v;
    };
    auto matrix = [&](const json& a, int rows, int cols, const std::string& what) {
        const auto v = numbers(a, static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), what);
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                m(i, j) = v[static_cast<std::size_t>(i) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(j)];
            }
        }
        return m;
    };
    auto vec = [&](const json& a, int n, const std::string& what) {
        const auto v = numbers(a, static_cast<std::size_t>(n), what);
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), n));
    };
    PolicyNet p(matrix(w[0], h1, in, "weights[0]"), vec(b[0], h1, "biases[0]"), matrix(w[1], h2, h1, "weights[1]"),
                vec(b[1], h2, "biases[1]"), matrix(w[2], out, h2, "weights[2]"), vec(b[2], out, "biases[2]"),
                activation);
    if (doc.contains("meta")) {
        p.meta() = doc.at("meta");
    }
    return p;
}

inline void save_policy(const PolicyNet& p, const fs::path& path) { write_json(path, policy_to_json(p)); }

inline PolicyNet load_policy(const fs::path& path) { return policy_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// Episode logs

inline std::string episode_header(int latent_dim) {
    std::string h = "step,x,y,vx,vy,angle,angular_rate";
    for (int i = 0; i < kObservationDim; ++i) {
        h += ",o" + std::to_string(i);
    }
    h += ",u_main,u_side,reward,event,thrust_main,thrust_side";
    for (int i = 0; i < latent_dim; ++i) {
        h += ",z" + std::to_string(i);
    }
    return h + "\n";
}

/** One line per step: index, state, observation, action, reward, event, applied thrust, latent. */
inline std::string format_episode_steps(const EpisodeRecord& e) {
    std::string out = episode_header(e.latent_dim());
    for (const auto& s : e.steps) {
        out += std::to_string(s.step);
        for (double v : {s.state.x, s.state.y, s.state.vx, s.state.vy, s.state.angle, s.state.angular_rate}) {
            out += "," + fmt(v);
        }
        for (int i = 0; i < kObservationDim; ++i) {
            out += "," + fmt(s.observation[i]);
        }
        out += "," + fmt(s.action.main) + "," + fmt(s.action.side) + "," + fmt(s.reward) + ",";
        out += std::string(to_string(s.event));
        out += "," + fmt(s.thrust.main) + "," + fmt(s.thrust.side);
        for (Eigen::Index i = 0; i < s.latent.size(); ++i) {
            out += "," + fmt(s.latent[i]);
        }
        out += "\n";
    }
    return out;
}

inline std::vector<EpisodeStep> parse_episode_steps(const std::string& text) {
    const Table t = parse_csv(text);
    const int step_col = t.column("step");
    const int state_col = t.column("x");
    const int obs_col = t.column("o0");
    const int act_col = t.column("u_main");
    const int reward_col = t.column("reward");
    const int event_col = t.column("event");
    const int thrust_col = t.column("thrust_main");
    int latent_dim = 0;
    while (latent_dim < static_cast<int>(t.header.size()) &&
           std::find(t.header.begin(), t.header.end(), "z" + std::to_string(latent_dim)) != t.header.end()) {
        ++latent_dim;
    }
    const int z_col = latent_dim > 0 ? t.column("z0") : 0;
    std::vector<EpisodeStep> steps;
    for (const auto& row : t.rows) {
        auto num = [&](int col) { return parse_double(row[static_cast<std::size_t>(col)], t.header[col]); };
        EpisodeStep s;
        s.step = parse_int(row[static_cast<std::size_t>(step_col)], "step");
        Vec8 o;
        for (int i = 0; i < kObservationDim; ++i) {
            o[i] = num(obs_col + i);
        }
        s.observation = o;
        s.state = LanderState{num(state_col),     num(state_col + 1), num(state_col + 2),
                              num(state_col + 3), num(state_col + 4), num(state_col + 5),
                              static_cast<int>(o[6]), static_cast<int>(o[7])};
        s.action.main = num(act_col);
        s.action.side = num(act_col + 1);
        s.reward = num(reward_col);
        s.event = terminal_event_from_string(row[static_cast<std::size_t>(event_col)]);
        s.thrust = EffectiveThrust{num(thrust_col), num(thrust_col + 1)};
        s.latent.resize(latent_dim);
        for (int i = 0; i < latent_dim; ++i) {
            s.latent[i] = num(z_col + i);
        }
        steps.push_back(std::move(s));
    }
    return steps;
}

inline json episode_summary_json(const EpisodeRecord& e) {
    return {{"id", e.id},
            {"seed", e.seed},
            {"initial", state_to_json(e.initial)},
            {"steps", e.steps.size()},
            {"cumulative_reward", e.cumulative_reward},
            {"terminal_event", to_string(e.terminal_event)},
            {"outcome", to_string(e.outcome)}};
}

inline void apply_episode_summary(EpisodeRecord& e, const json& j) {
    e.id = j.at("id");
    e.seed = j.at("seed");
    e.initial = state_from_json(j.at("initial"));
    e.cumulative_reward = number_field(j, "cumulative_reward");
    e.terminal_event = terminal_event_from_string(j.at("terminal_event").get<std::string>());
    e.outcome = outcome_from_string(j.at("outcome").get<std::string>());
}

/** Step table as JSON (service payload). */
inline json episode_to_json(const EpisodeRecord& e) {
    json doc = episode_summary_json(e);
    json rows = json::array();
    for (const auto& s : e.steps) {
        rows.push_back({{"step", s.step},
                        {"state", state_to_json(s.state)},
                        {"observation", vector_to_json(s.observation)},
                        {"action", {s.action.main, s.action.side}},
                        {"thrust", {s.thrust.main, s.thrust.side}},
                        {"reward", s.reward},
                        {"event", to_string(s.event)},
                        {"latent", vector_to_json(s.latent)}});
    }
    doc["schema_version"] = kSchemaVersion;
    doc["rows"] = std::move(rows);
    return doc;
}

// ---------------------------------------------------------------------------
// Dataset directories

inline std::string episode_file_name(int id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "episode_%05d.csv", id);
    return buf;
}

struct DatasetManifest {
    int episodes = 0;
    std::uint64_t seed = 0;
    int latent_dim = 0;
    json extra = json::object();
};

/**
 * Layout: `index.csv` (one row per episode), `episodes/episode_NNNNN.csv`,
 * `manifest.json`, and optionally `policy.json` and `env.cfg`.
 */
inline void save_dataset(const Dataset& data, const fs::path& dir, const PolicyNet* policy = nullptr,
                         const EnvConfig* env = nullptr, const json& extra = json::object()) {
    std::error_code ec;
    fs::create_directories(dir / "episodes", ec);
    if (ec) {
        fail(ErrorKind::IoFailure, "cannot create " + (dir / "episodes").string());
    }
    std::string index = "id,seed,outcome,cumulative_reward,terminal_event,steps,x,y,vx,vy,angle,angular_rate\n";
    int latent_dim = 0;
    for (const auto& e : data.episodes) {
        latent_dim = std::max(latent_dim, e.latent_dim());
        index += std::to_string(e.id) + "," + std::to_string(e.seed) + "," + std::string(to_string(e.outcome)) + "," +
                 fmt(e.cumulative_reward) + "," + std::string(to_string(e.terminal_event)) + "," +
                 std::to_string(e.steps.size());
        for (double v : {e.initial.x, e.initial.y, e.initial.vx, e.initial.vy, e.initial.angle, e.initial.angular_rate}) {
            index += "," + fmt(v);
        }
        index += "\n";
        write_file(dir / "episodes" / episode_file_name(e.id), format_episode_steps(e));
    }
    write_file(dir / "index.csv", index);
    if (policy) {
        save_policy(*policy, dir / "policy.json");
    }
    if (env) {
        write_file(dir / "env.cfg", format_env_config(*env));
    }
    json manifest = {{"version", kSchemaVersion},
                     {"episodes", data.episodes.size()},
                     {"latent_dim", latent_dim},
                     {"total_steps", data.total_steps()},
                     {"extra", extra}};
    if (!data.episodes.empty()) {
        manifest["seed"] = data.episodes.front().seed;
    }
    write_json(dir / "manifest.json", manifest);
}

struct IndexRow {
    int id = 0;
    std::uint64_t seed = 0;
    Outcome outcome = Outcome::Failed;
    double cumulative_reward = 0;
    TerminalEvent terminal_event = TerminalEvent::None;
    int steps = 0;
    LanderState initial;
};

inline std::vector<IndexRow> load_index(const fs::path& dir) {
    const Table t = parse_csv(read_file(dir / "index.csv"));
    std::vector<IndexRow> out;
    const int x = t.column("x");
    for (const auto& row : t.rows) {
        auto cell = [&](const char* name) { return row[static_cast<std::size_t>(t.column(name))]; };
        IndexRow r;
        r.id = parse_int(cell("id"), "id");
        r.seed = std::stoull(cell("seed"));
        r.outcome = outcome_from_string(cell("outcome"));
        r.cumulative_reward = parse_double(cell("cumulative_reward"), "cumulative_reward");
        r.terminal_event = terminal_event_from_string(cell("terminal_event"));
        r.steps = parse_int(cell("steps"), "steps");
        auto num = [&](int k) { return parse_double(row[static_cast<std::size_t>(x + k)], t.header[x + k]); };
        r.initial = LanderState{num(0), num(1), num(2), num(3), num(4), num(5), 0, 0};
        out.push_back(r);
    }
    return out;
}

inline EpisodeRecord load_episode(const fs::path& dir, const IndexRow& row) {
    EpisodeRecord e;
    e.id = row.id;
    e.seed = row.seed;
    e.initial = row.initial;
    e.cumulative_reward = row.cumulative_reward;
    e.terminal_event = row.terminal_event;
    e.outcome = row.outcome;
    e.steps = parse_episode_steps(read_file(dir / "episodes" / episode_file_name(row.id)));
    if (static_cast<int>(e.steps.size()) != row.steps) {
        fail(ErrorKind::SchemaMismatch, "episode " + std::to_string(row.id) + " has " +
                                            std::to_string(e.steps.size()) + " steps, index says " +
                                            std::to_string(row.steps));
    }
    if (!e.steps.empty()) {
        e.initial.leg_left = e.steps.front().state.leg_left;
        e.initial.leg_right = e.steps.front().state.leg_right;
    }
    return e;
}

inline Dataset load_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "index.csv")) {
        fail(ErrorKind::NotFound, "no dataset at " + dir.string());
    }
    Dataset data;
    for (const auto& row : load_index(dir)) {
        data.episodes.push_back(load_episode(dir, row));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Matrices and embeddings

/** Numeric matrix, one row per line, cells separated by commas, tabs or spaces. */
inline pacmap::Matrix parse_matrix(const std::string& text) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        for (char& c : line) {
            if (c == ',' || c == '\t' || c == ';') {
                c = ' ';
            }
        }
        if (trim(line).empty() || trim(line)[0] == '#') {
            continue;
        }
        std::istringstream cells(line);
        std::vector<double> row;
        std::string cell;
        while (cells >> cell) {
            row.push_back(parse_double(cell, "matrix entry"));
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            fail(ErrorKind::ShapeMismatch, "ragged matrix row " + std::to_string(rows.size() + 1));
        }
        rows.push_back(std::move(row));
    }
    pacmap::Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

inline pacmap::Matrix load_matrix(const fs::path& path) { return parse_matrix(read_file(path)); }

/** One embedded point and where it came from. */
struct PointRef {
    int episode = -1;
    int step = -1;
    std::string outcome;
};

/** Latents of the given episodes (all when empty), row order = episode order then step. */
inline pacmap::Matrix latent_matrix(const Dataset& data, const std::vector<int>& episodes,
                                    std::vector<PointRef>* refs = nullptr) {
    std::vector<const EpisodeRecord*> chosen;
    if (episodes.empty()) {
        for (const auto& e : data.episodes) {
            chosen.push_back(&e);
        }
    } else {
        for (int id : episodes) {
            chosen.push_back(&data.episode(id));
        }
    }
    std::size_t n = 0;
    int dim = 0;
    for (const auto* e : chosen) {
        n += e->steps.size();
        dim = std::max(dim, e->latent_dim());
    }
    pacmap::Matrix m(static_cast<Eigen::Index>(n), dim);
    Eigen::Index r = 0;
    for (const auto* e : chosen) {
        for (const auto& s : e->steps) {
            m.row(r++) = s.latent.transpose();
            if (refs) {
                refs->push_back(PointRef{e->id, s.step, std::string(to_string(e->outcome))});
            }
        }
    }
    return m;
}

inline std::string format_coordinates(const pacmap::Coords& y, const std::vector<PointRef>& refs) {
    std::string out = "point,episode,step,y1,y2,outcome\n";
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const PointRef r = static_cast<std::size_t>(i) < refs.size() ? refs[static_cast<std::size_t>(i)] : PointRef{};
        out += std::to_string(i) + "," + std::to_string(r.episode) + "," + std::to_string(r.step) + "," +
               fmt(y(i, 0)) + "," + fmt(y(i, 1)) + "," + r.outcome + "\n";
    }
    return out;
}

inline pacmap::Coords parse_coordinates(const std::string& text, std::vector<PointRef>* refs = nullptr) {
    const Table t = parse_csv(text);
    pacmap::Coords y(static_cast<Eigen::Index>(t.rows.size()), 2);
    const int c_ep = t.column("episode"), c_step = t.column("step"), c1 = t.column("y1"), c2 = t.column("y2"),
              c_out = t.column("outcome");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        y(static_cast<Eigen::Index>(i), 0) = parse_double(row[static_cast<std::size_t>(c1)], "y1");
        y(static_cast<Eigen::Index>(i), 1) = parse_double(row[static_cast<std::size_t>(c2)], "y2");
        if (refs) {
            refs->push_back(PointRef{parse_int(row[static_cast<std::size_t>(c_ep)], "episode"),
                                     parse_int(row[static_cast<std::size_t>(c_step)], "step"),
                                     row[static_cast<std::size_t>(c_out)]});
        }
    }
    return y;
}

inline std::string format_loss_history(const std::vector<double>& loss) {
    std::string out = "iteration,loss\n";
    for (std::size_t i = 0; i < loss.size(); ++i) {
        out += std::to_string(i) + "," + fmt(loss[i]) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Plan documents

inline json solver_to_json(const SolverConfig& c) {
    return {{"max_iters", c.max_iters}, {"tol", c.tol},       {"restarts", c.restarts},
            {"seed", c.seed},           {"memory", c.memory}, {"perturbation", c.perturbation}};
}

inline SolverConfig solver_from_json(const json& j, SolverConfig c = {}) {
    if (j.is_null()) {
        return c;
    }
    c.max_iters = j.value("max_iters", c.max_iters);
    c.tol = j.value("tol", c.tol);
    c.restarts = j.value("restarts", c.restarts);
    c.seed = j.value("seed", c.seed);
    c.memory = j.value("memory", c.memory);
    c.perturbation = j.value("perturbation", c.perturbation);
    return c;
}

inline json plan_result_to_json(const PlanResult& r) {
    json thrusts = json::array(), actions = json::array(), states = json::array();
    for (const auto& u : r.thrusts) {
        thrusts.push_back({u.main, u.side});
    }
    for (const auto& a : r.actions) {
        actions.push_back({a.main, a.side});
    }
    for (const auto& s : r.predicted_states) {
        states.push_back(vector_to_json(s.continuous()));
    }
    return {{"schema_version", kSchemaVersion},
            {"status", to_string(r.status)},
            {"terminal_objective", r.terminal_objective},
            {"projected_gradient_norm", r.projected_gradient_norm},
            {"restarts_used", r.restarts_used},
            {"best_restart", r.best_restart},
            {"iterations", r.iterations},
            {"path_feasible", r.path_feasible},
            {"thrusts", thrusts},
            {"actions", actions},
            {"predicted_states", states},
            {"objective_trace", r.objective_trace}};
}

inline PlanResult plan_result_from_json(const json& j) {
    PlanResult r;
    r.status = plan_status_from_string(j.at("status").get<std::string>());
    r.terminal_objective = number_field(j, "terminal_objective");
    r.projected_gradient_norm = number_field(j, "projected_gradient_norm");
    r.restarts_used = j.at("restarts_used");
    r.best_restart = j.at("best_restart");
    r.iterations = j.at("iterations");
    r.path_feasible = j.at("path_feasible");
    for (const auto& u : j.at("thrusts")) {
        r.thrusts.push_back(EffectiveThrust{u.at(0).get<double>(), u.at(1).get<double>()});
    }
    for (const auto& a : j.at("actions")) {
        Action act;
        act.main = a.at(0).get<double>();
        act.side = a.at(1).get<double>();
        r.actions.push_back(act);
    }
    for (const auto& s : j.at("predicted_states")) {
        const Eigen::VectorXd v = vector_from_json(s, "predicted state");
        if (v.size() != kStateDim) {
            fail(ErrorKind::ShapeMismatch, "predicted state must have 6 entries");
        }
        r.predicted_states.push_back(LanderState::from_continuous(v));
    }
    r.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    return r;
}

} // namespace modeswitch::io

#endif
