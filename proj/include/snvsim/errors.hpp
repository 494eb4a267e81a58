// errors.hpp - exception hierarchy shared across the library
#pragma once

#include <stdexcept>
#include <string>

namespace snvsim {

// Base for everything thrown on purpose by this library.  Library
// preconditions (bad arguments to pure functions) use std::invalid_argument
// instead, so callers can tell "your file is wrong" from "your code is wrong".
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or physically invalid configuration (files, parameter structs).
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Parse failure with file/line context baked into the message.
struct ParseError : ConfigError {
    ParseError(const std::string& origin, int line, const std::string& msg)
        : ConfigError(origin + ":" + std::to_string(line) + ": " + msg) {}
};

// The two-rate telegraph reduction needs optical cycling to be much faster
// than charge dynamics; thrown when that separation is absent.
struct TimescaleSeparationViolated : Error {
    explicit TimescaleSeparationViolated(const std::string& msg) : Error(msg) {}
};

// Peak finder could not locate a line above the background noise.
struct PeakNotFound : Error {
    explicit PeakNotFound(const std::string& msg) : Error(msg) {}
};

// Calibration failures map to their own CLI exit code.
struct CalibrationError : Error {
    explicit CalibrationError(const std::string& msg) : Error(msg) {}
};

// Not enough independent targets to pin down the free coefficients.
struct UnderdeterminedCalibration : CalibrationError {
    explicit UnderdeterminedCalibration(const std::string& msg) : CalibrationError(msg) {}
};

// A solved parameter set cannot satisfy every target within tolerance.
struct InconsistentTargets : CalibrationError {
    explicit InconsistentTargets(const std::string& msg) : CalibrationError(msg) {}
};

}  // namespace snvsim
