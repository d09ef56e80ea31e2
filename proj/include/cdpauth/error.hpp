#pragma once

#include <stdexcept>
#include <string>

namespace cdpauth {

// Precondition violations on arguments (bad shapes, out-of-range values).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Inputs that are well-formed but carry no usable signal (constant images).
class DegenerateInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent class tables, malformed config files, missing prerequisites.
class InvalidConfiguration : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A metric or calibration was asked for without both populations present.
class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Checkpoint and config disagree (class table, model variant, format version).
class CompatibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cdpauth
