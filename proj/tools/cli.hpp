#pragma once
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace ri::cli {

using Json = nlohmann::ordered_json;

// Usage and schema violations; maps to exit code 2.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

constexpr int exit_ok = 0, exit_usage = 2, exit_failure = 3;

// Parses a JSON or TOML file (by extension) and validates it against the job schema.
Json config_load(const std::string& path);

// Checks every field against the schema; throws ConfigError naming the field.
Json validate_config(const Json& cfg);

std::string sha256_hex(const std::string& bytes);

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ri::cli
