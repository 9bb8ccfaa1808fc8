#ifndef M3VB_CONFIG_HPP
#define M3VB_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Flat-sectioned key-value experiment configuration:
//   [section]
//   key = value            # comment
// Values are scalars or comma-separated lists. '#' starts a comment.

namespace m3vb {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Config {
  public:
    using Section = std::map<std::string, std::string>;

    static Config parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_text(buf.str(), path);
    }

    static Config parse_text(const std::string& text, const std::string& origin = "<text>") {
        Config cfg;
        std::istringstream in(text);
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                cfg.sections_[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.sections_[section][key] = value;
        }
        return cfg;
    }

    bool has(const std::string& section, const std::string& key) const {
        const auto s = sections_.find(section);
        return s != sections_.end() && s->second.count(key) > 0;
    }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
        return has(section, key) ? sections_.at(section).at(key) : fallback;
    }

    std::string require_string(const std::string& section, const std::string& key) const {
        if (!has(section, key))
            throw ConfigError("missing required key [" + section + "] " + key);
        return sections_.at(section).at(key);
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        return has(section, key) ? to_double(sections_.at(section).at(key), section, key) : fallback;
    }

    long long get_int(const std::string& section, const std::string& key, long long fallback) const {
        return has(section, key) ? to_int(sections_.at(section).at(key), section, key) : fallback;
    }

    std::uint64_t get_u64(const std::string& section, const std::string& key,
                          std::uint64_t fallback) const {
        if (!has(section, key)) return fallback;
        const auto& v = sections_.at(section).at(key);
        try {
            return std::stoull(v);
        } catch (const std::exception&) {
            throw ConfigError("[" + section + "] " + key + ": not an unsigned integer: '" + v + "'");
        }
    }

    bool get_bool(const std::string& section, const std::string& key, bool fallback) const {
        if (!has(section, key)) return fallback;
        const auto& v = sections_.at(section).at(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("[" + section + "] " + key + ": not a boolean: '" + v + "'");
    }

    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    std::vector<double> fallback = {}) const {
        if (!has(section, key)) return fallback;
        std::vector<double> out;
        for (const auto& tok : split_list(sections_.at(section).at(key)))
            out.push_back(to_double(tok, section, key));
        return out;
    }

    std::vector<long long> get_ints(const std::string& section, const std::string& key,
                                    std::vector<long long> fallback = {}) const {
        if (!has(section, key)) return fallback;
        std::vector<long long> out;
        for (const auto& tok : split_list(sections_.at(section).at(key)))
            out.push_back(to_int(tok, section, key));
        return out;
    }

    std::vector<std::string> get_strings(const std::string& section, const std::string& key,
                                         std::vector<std::string> fallback = {}) const {
        if (!has(section, key)) return fallback;
        return split_list(sections_.at(section).at(key));
    }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    static std::vector<std::string> split_list(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream in(s);
        while (std::getline(in, cur, ',')) {
            cur = trim(cur);
            if (!cur.empty()) out.push_back(cur);
        }
        return out;
    }

    static double to_double(const std::string& v, const std::string& sec, const std::string& key) {
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("[" + sec + "] " + key + ": not a number: '" + v + "'");
        }
    }

    static long long to_int(const std::string& v, const std::string& sec, const std::string& key) {
        try {
            std::size_t used = 0;
            const long long x = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return x;
        } catch (const std::exception&) {
            throw ConfigError("[" + sec + "] " + key + ": not an integer: '" + v + "'");
        }
    }

    std::map<std::string, Section> sections_;
};

}  // namespace m3vb

#endif  // M3VB_CONFIG_HPP
