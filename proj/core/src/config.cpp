#include "anncache/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "anncache/errors.hpp"

namespace anncache {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::pair<std::string, std::string> split_assignment(std::string_view line) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("config: expected key=value, got '" + std::string(line) + "'");
    }
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("config: empty key in '" + std::string(line) + "'");
    return {std::move(key), std::move(value)};
}

}  // namespace

ConfigMap parse_config_text(std::istream& in) {
    ConfigMap out;
    std::string line;
    while (std::getline(in, line)) {
        std::string_view sv = trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        auto [key, value] = split_assignment(sv);
        if (!out.emplace(key, value).second) {
            throw ConfigError("config: duplicate key '" + key + "'");
        }
    }
    return out;
}

ConfigMap load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    return parse_config_text(in);
}

void apply_override(ConfigMap& config, std::string_view assignment) {
    auto [key, value] = split_assignment(trim(assignment));
    config[key] = value;
}

ConfigView::ConfigView(const ConfigMap& map) : map_(map) {}

const std::string* ConfigView::find(std::string_view key) {
    consumed_[std::string(key)] = true;
    auto it = map_.find(key);
    return it == map_.end() ? nullptr : &it->second;
}

bool ConfigView::has(std::string_view key) const {
    return map_.find(key) != map_.end();
}

std::string ConfigView::get_str(std::string_view key, std::string_view fallback) {
    const std::string* v = find(key);
    return v != nullptr ? *v : std::string(fallback);
}

std::uint64_t ConfigView::get_u64(std::string_view key, std::uint64_t fallback) {
    const std::string* v = find(key);
    if (v == nullptr) return fallback;
    std::uint64_t out = 0;
    const char* first = v->data();
    const char* last = first + v->size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc{} || ptr != last) {
        throw ConfigError("config: '" + std::string(key) + "' wants a non-negative integer, got '" +
                          *v + "'");
    }
    return out;
}

double ConfigView::get_f64(std::string_view key, double fallback) {
    const std::string* v = find(key);
    if (v == nullptr) return fallback;
    // from_chars for doubles is incomplete on some standard libraries, so
    // parse through istringstream with a full-consumption check.
    std::istringstream ss(*v);
    double out = 0.0;
    ss >> out;
    if (ss.fail() || !ss.eof()) {
        throw ConfigError("config: '" + std::string(key) + "' wants a number, got '" + *v +
                          "'");
    }
    return out;
}

void ConfigView::require_all_consumed() const {
    for (const auto& [key, value] : map_) {
        auto it = consumed_.find(key);
        if (it == consumed_.end() || !it->second) {
            throw ConfigError("config: unrecognized key '" + key + "'");
        }
    }
}

}  // namespace anncache
