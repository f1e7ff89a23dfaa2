// Exception types shared by every module.
#pragma once

#include <stdexcept>
#include <string>

namespace mvt {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Invalid encoder/training/run configuration.
class ConfigError : public Error {
public:
	using Error::Error;
};

/// Dimension or shape mismatch between arrays, items, or checkpoints.
class ShapeError : public Error {
public:
	using Error::Error;
};

/// Non-finite value or out-of-range quantity in a numeric routine.
class NumericError : public Error {
public:
	using Error::Error;
};

/// Unknown worker or item id.
class ReferenceError : public Error {
public:
	using Error::Error;
};

/// Unreadable, truncated, or version-mismatched file.
class LoadError : public Error {
public:
	using Error::Error;
};

/// Invalid argument to an algorithm (e.g. k > n).
class ArgumentError : public Error {
public:
	using Error::Error;
};

} // namespace mvt
