#pragma once

#include <stdexcept>
#include <string>

namespace geoflow {

// Base of every error raised by the library. The CLI maps the concrete
// subclass to a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class UsageError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

// Non-finite losses or sampler states.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace geoflow
