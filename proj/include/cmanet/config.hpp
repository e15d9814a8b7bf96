#pragma once

// Sectioned key-value configuration files:
//
//   [scene]
//   bs = 0 0 25
//   bs = 200 0 25
//   ue_min = 0 0 0
//   ue_max = 200 200 30
//
// Keys may repeat within a section (list entries, e.g. base stations).
// '#' starts a comment.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace cmanet::sim {
struct Scene;
}

namespace cmanet::cfg {

struct Entry {
    std::string section;
    std::string key;
    std::string value;
};

class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;
    /// All values for a repeated key, in file order.
    std::vector<std::string> get_all(const std::string& section,
                                     const std::string& key) const;

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key,
                      double fallback) const;
    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::int64_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key,
                  bool fallback) const;
    Eigen::Vector3d get_vec3(const std::string& section, const std::string& key,
                             const Eigen::Vector3d& fallback) const;

    /// Overwrites (or appends) a single-valued key; used for CLI overrides.
    void set(const std::string& section, const std::string& key,
             const std::string& value);

    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
};

/// Builds a simulation scene from the [scene], [array], [ofdm] and [paths]
/// sections. Throws on missing base stations or invalid values.
sim::Scene scene_from_config(const Config& config);

}  // namespace cmanet::cfg
