#pragma once

#include <stdexcept>
#include <string>

namespace mudicho {

// Bad user input: unknown names, malformed files, violated schema/invariants.
// The CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical breakdown at runtime: ill-conditioning, non-convergence,
// unresolved singular value gaps. The CLI maps these to exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace mudicho
