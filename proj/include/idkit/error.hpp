#pragma once

#include <stdexcept>
#include <string>

namespace idkit {

// Point/vector shapes that do not match the space they are used with.
class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed configuration, problem cards or spec files.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// ask/tell misuse and external adapter protocol violations.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numerical computation produced a non-finite value.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace idkit
