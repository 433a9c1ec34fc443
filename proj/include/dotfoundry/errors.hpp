#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dotfoundry {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter or input lies outside the domain of the operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid argument values (empty grids, bad distributions, bad budget rows).
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Pixel/index coordinates outside a frame, or scene geometry outside it.
class BoundsError : public Error {
public:
    using Error::Error;
};

/// Data carries no usable structure (flat trace, empty side peaks, ...).
class DegenerateDataError : public Error {
public:
    using Error::Error;
};

/// Normal matrix of a least-squares problem is singular.
class DegenerateFitError : public Error {
public:
    using Error::Error;
};

/// Requested cavity mode is not reachable (pillars only blue-shift).
class InfeasibleTargetError : public Error {
public:
    using Error::Error;
};

/// Malformed file. `location` is a byte offset or line number, see `unit`.
class ParseError : public Error {
public:
    enum class Unit { Byte, Line };

    ParseError(const std::string& source, std::size_t location, Unit unit, const std::string& what)
        : Error(format(source, location, unit, what)), source_(source), location_(location), unit_(unit) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t location() const noexcept { return location_; }
    Unit unit() const noexcept { return unit_; }

private:
    static std::string format(const std::string& source, std::size_t location, Unit unit,
                              const std::string& what) {
        return source + (unit == Unit::Line ? ":line " : ":offset ") + std::to_string(location) + ": " + what;
    }

    std::string source_;
    std::size_t location_;
    Unit unit_;
};

}  // namespace dotfoundry
