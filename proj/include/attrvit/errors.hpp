#pragma once

#include <stdexcept>
#include <string>

namespace attrvit {

// Base for everything this library throws on bad input. The CLI maps these
// to exit code 2; anything else is an internal error (exit code 1).
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid model/run configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed file on disk (image, checkpoint, manifest, ...).
struct FormatError : Error {
    using Error::Error;
};

// Violated evaluation-protocol precondition (empty class, degenerate split).
struct ProtocolError : Error {
    using Error::Error;
};

// Violated API precondition (non-scalar loss, zero-norm embedding, ...).
struct ContractError : Error {
    using Error::Error;
};

}  // namespace attrvit
