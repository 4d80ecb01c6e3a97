#pragma once

#include <stdexcept>
#include <string>

namespace dpdl {

/// Incompatible tensor extents.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A documented input precondition was violated (odd extents, too-small images, ...).
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid network, loss or training configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An operation would exceed a configured resource cap.
class ResourceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse: non-scalar loss, missing gradient, ...
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed or unreadable file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dpdl
