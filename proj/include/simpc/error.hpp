#pragma once

#include <stdexcept>
#include <string>

namespace simpc {

// Error categories map 1:1 onto CLI exit codes (see tools/simpc.cpp):
// config/parameter misuse -> 2, file problems -> 3, non-finite numerics -> 4.
struct ParamError : std::invalid_argument {
    explicit ParamError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Parse failure in a text reader; carries the 1-based line number.
struct ParseError : IoError {
    ParseError(const std::string& msg, size_t line_no)
        : IoError(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
    size_t line;
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of a stateful object (e.g. backward called twice on one tape).
struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace simpc
