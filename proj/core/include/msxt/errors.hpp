#pragma once

#include <stdexcept>
#include <string>

namespace msxt {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatch.
struct ShapeError : Error {
    using Error::Error;
};

// A caller violated an operation precondition.
struct ContractError : Error {
    using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Missing, truncated or corrupted files.
struct IoError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required (e.g. training loss).
struct NumericError : Error {
    using Error::Error;
};

}  // namespace msxt
