#pragma once

#include <stdexcept>
#include <string>

namespace spar {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Input with the wrong shape or out-of-range argument.
struct DimensionError : Error {
    using Error::Error;
};

// Non-finite loss/gradient; carries the step index in the message.
struct TrainingDivergence : Error {
    using Error::Error;
};

// Mutation of a frozen bundle or frozen decoder.
struct ContractViolation : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

// Degenerate theory-verification instance (e.g. cover of size 1).
struct DegenerateInstance : Error {
    using Error::Error;
};

}  // namespace spar
