#pragma once

#include <stdexcept>
#include <string>

namespace qlm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unknown catalog names, malformed or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A field or grid could not be constructed (e.g. metric not positive definite).
class ConstructionError : public Error {
public:
    using Error::Error;
};

/// A function was evaluated outside the set where it is defined.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Input files that are missing or cannot be parsed.
class IoError : public Error {
public:
    using Error::Error;
};

#define QLM_THROW_IF(cond, Type, msg)        \
    do {                                     \
        if (cond) {                          \
            throw Type(std::string(msg));    \
        }                                    \
    } while (0)

} // namespace qlm
