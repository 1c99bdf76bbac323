#pragma once

#include <stdexcept>
#include <string>

namespace phimesa {

// Bad arguments, malformed files, out-of-contract configuration. CLI exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input too small to produce the requested statistic. CLI exit code 2.
struct InsufficientDataError : ValidationError {
    using ValidationError::ValidationError;
};

// Product alphabet too large to analyse. CLI exit code 2.
struct CapacityError : ValidationError {
    using ValidationError::ValidationError;
};

// Non-finite or otherwise impossible numeric state. CLI exit code 3.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// I/O failure on a required file. CLI exit code 2.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thread cap for every parallel region in the library. Initialised once from
// the PHI_MESA_THREADS environment variable (absent or unparsable means 1).
int max_threads();

// Override the cap in-process (tests and benchmarks). Values < 1 clamp to 1.
void set_max_threads(int n);

// Shortest decimal form that round-trips the exact double value.
std::string format_double(double v);

}  // namespace phimesa
