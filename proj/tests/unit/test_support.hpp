#ifndef MODESWITCH_TEST_SUPPORT_HPP
#define MODESWITCH_TEST_SUPPORT_HPP

#include <modeswitch/episode.hpp>
#include <modeswitch/io.hpp>

#include <filesystem>
#include <memory>
#include <random>
#include <string>

namespace modeswitch::testing {

inline std::filesystem::path data_dir() { return MODESWITCH_DATA_DIR; }

inline std::shared_ptr<const PolicyNet> shipped_policy() {
    static const auto p = std::make_shared<const PolicyNet>(io::load_policy(data_dir() / "policy.json"));
    return p;
}

/** 200 episodes of the shipped policy; contains both outcome classes. */
inline const Dataset& small_dataset() {
    static const Dataset d = collect_rollouts(*shipped_policy(), EnvConfig{}, 200, 42, 1);
    return d;
}

/** Fresh empty directory under the system temp dir. */
inline std::filesystem::path scratch_dir(const std::string& name) {
    std::random_device rd;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("modeswitch_" + name + "_" + std::to_string(rd()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace modeswitch::testing

#endif
