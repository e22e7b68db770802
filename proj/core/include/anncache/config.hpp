#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>

namespace anncache {

/// Flat key=value settings, ordered by key.
using ConfigMap = std::map<std::string, std::string, std::less<>>;

/// Parses `key=value` lines. Blank lines and lines starting with '#' are
/// skipped; keys and values are whitespace-trimmed. A repeated key or a line
/// without '=' is a ConfigError.
ConfigMap parse_config_text(std::istream& in);
ConfigMap load_config_file(const std::string& path);

/// Applies one `key=value` override, replacing any existing value.
void apply_override(ConfigMap& config, std::string_view assignment);

/// Typed, consumption-tracked reader over a ConfigMap. Every get_* marks its
/// key as read; require_all_consumed then rejects configs holding keys
/// nothing asked for, naming the first offender.
class ConfigView {
public:
    explicit ConfigView(const ConfigMap& map);

    bool has(std::string_view key) const;
    std::string get_str(std::string_view key, std::string_view fallback);
    std::uint64_t get_u64(std::string_view key, std::uint64_t fallback);
    double get_f64(std::string_view key, double fallback);

    void require_all_consumed() const;

private:
    const std::string* find(std::string_view key);

    const ConfigMap& map_;
    std::map<std::string, bool, std::less<>> consumed_;
};

}  // namespace anncache
