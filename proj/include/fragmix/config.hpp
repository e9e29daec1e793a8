#pragma once

// Plain-text run configuration: one key=value per line, '#' starts a comment.
// Every key has a default; unknown keys and malformed values are errors.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fragmix/dataset.hpp"
#include "fragmix/workflows.hpp"

namespace fragmix::config {

struct KeyInfo {
    const char* key;
    const char* default_value;
    const char* help;
};

// All recognized keys with their defaults, in documentation order.
const std::vector<KeyInfo>& known_keys();

class RunConfig {
public:
    RunConfig();  // all defaults
    static RunConfig parse(const std::string& text, const std::string& source = "config");
    static RunConfig load(const std::filesystem::path& path);

    // The text it was parsed from, byte for byte.
    const std::string& text() const noexcept { return text_; }

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    std::string get_string(const std::string& key) const { return get(key); }
    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Applies FRAGMIX_SEED when set in the environment.
    void apply_environment();

    // Typed views. Throw ConfigError on contradictions (odd width with
    // positional encoding, window < 1, ...).
    pipeline::ExperimentConfig experiment() const;
    pipeline::DatasetOptions dataset_options() const;
    double lag_ns() const { return get_double("lag_ns"); }

private:
    std::map<std::string, std::string> values_;
    std::string text_;
};

}  // namespace fragmix::config
