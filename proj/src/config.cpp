#include "cmanet/config.hpp"

#include "cmanet/channel.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cmanet::cfg {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
}

Config Config::parse_string(const std::string& text) {
    Config config;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error("config: malformed section header at line " +
                                         std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: expected key = value at line " +
                                     std::to_string(lineno));
        config.entries_.push_back(
            {section, trim(line.substr(0, eq)), trim(line.substr(eq + 1))});
    }
    return config;
}

bool Config::has(const std::string& section, const std::string& key) const {
    for (const auto& e : entries_)
        if (e.section == section && e.key == key) return true;
    return false;
}

std::vector<std::string> Config::get_all(const std::string& section,
                                         const std::string& key) const {
    std::vector<std::string> values;
    for (const auto& e : entries_)
        if (e.section == section && e.key == key) values.push_back(e.value);
    return values;
}

std::string Config::get_string(const std::string& section,
                               const std::string& key,
                               const std::string& fallback) const {
    std::string result = fallback;
    for (const auto& e : entries_)
        if (e.section == section && e.key == key) result = e.value;
    return result;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string raw = get_string(section, key, "");
    try {
        return std::stod(raw);
    } catch (const std::exception&) {
        throw std::runtime_error("config: [" + section + "] " + key +
                                 " is not a number: " + raw);
    }
}

std::int64_t Config::get_int(const std::string& section, const std::string& key,
                             std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string raw = get_string(section, key, "");
    try {
        return std::stoll(raw);
    } catch (const std::exception&) {
        throw std::runtime_error("config: [" + section + "] " + key +
                                 " is not an integer: " + raw);
    }
}

bool Config::get_bool(const std::string& section, const std::string& key,
                      bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string raw = get_string(section, key, "");
    if (raw == "true" || raw == "1" || raw == "yes") return true;
    if (raw == "false" || raw == "0" || raw == "no") return false;
    throw std::runtime_error("config: [" + section + "] " + key +
                             " is not a boolean: " + raw);
}

Eigen::Vector3d Config::get_vec3(const std::string& section,
                                 const std::string& key,
                                 const Eigen::Vector3d& fallback) const {
    if (!has(section, key)) return fallback;
    std::istringstream in(get_string(section, key, ""));
    Eigen::Vector3d v;
    if (!(in >> v.x() >> v.y() >> v.z()))
        throw std::runtime_error("config: [" + section + "] " + key +
                                 " needs three numbers");
    return v;
}

void Config::set(const std::string& section, const std::string& key,
                 const std::string& value) {
    for (auto& e : entries_) {
        if (e.section == section && e.key == key) {
            e.value = value;
            return;
        }
    }
    entries_.push_back({section, key, value});
}

sim::Scene scene_from_config(const Config& config) {
    sim::Scene scene;
    scene.bs_list.clear();
    for (const std::string& raw : config.get_all("scene", "bs")) {
        std::istringstream in(raw);
        sim::BaseStation bs;
        if (!(in >> bs.position.x() >> bs.position.y() >> bs.position.z()))
            throw std::runtime_error("config: [scene] bs needs three numbers: " + raw);
        in >> bs.yaw_rad;   // optional fourth value
        scene.bs_list.push_back(bs);
    }
    if (scene.bs_list.empty())
        throw std::runtime_error("config: [scene] needs at least one bs entry");

    scene.ue_min = config.get_vec3("scene", "ue_min", scene.ue_min);
    scene.ue_max = config.get_vec3("scene", "ue_max", scene.ue_max);
    scene.seed = static_cast<std::uint64_t>(
        config.get_int("scene", "seed", static_cast<std::int64_t>(scene.seed)));

    scene.array.rows = static_cast<int>(config.get_int("array", "rows", 2));
    scene.array.cols = static_cast<int>(config.get_int("array", "cols", 4));
    scene.array.spacing_wavelengths =
        config.get_double("array", "spacing", 0.5);

    scene.carrier_hz = config.get_double("ofdm", "carrier_hz", 3.5e9);
    scene.n_subcarriers =
        static_cast<int>(config.get_int("ofdm", "subcarriers", 288));
    // Spacing defaults to bandwidth / N when only a bandwidth is given.
    const double bandwidth = config.get_double("ofdm", "bandwidth_hz", 20e6);
    scene.subcarrier_spacing_hz = config.get_double(
        "ofdm", "spacing_hz", bandwidth / scene.n_subcarriers);

    scene.path_count = static_cast<int>(config.get_int("paths", "count", 5));
    scene.los_enabled = config.get_bool("paths", "los", true);
    scene.scatterer_margin_m =
        config.get_double("paths", "scatterer_margin_m", 50.0);

    scene.validate();
    return scene;
}

}  // namespace cmanet::cfg
