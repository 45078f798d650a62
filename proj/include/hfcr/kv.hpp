#pragma once

#include <map>
#include <stdexcept>
#include <string>

namespace hfcr {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Parses `key = value` lines. Blank lines and lines starting with '#' are skipped.
std::map<std::string, std::string> parse_key_values(const std::string& text);

std::string trim(const std::string& s);
bool parse_bool(const std::string& key, const std::string& v);
long long parse_int(const std::string& key, const std::string& v);
double parse_double(const std::string& key, const std::string& v);

}  // namespace hfcr
