#pragma once

#include <stdexcept>
#include <string>

namespace mbt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Incompatible tensor or signal shapes.
class ShapeError : public Error {
public:
	using Error::Error;
};

/// Malformed or unsupported on-disk data (WAV, checkpoint, manifest).
class FormatError : public Error {
public:
	using Error::Error;
};

/// File system failures; the message carries the offending path.
class IoError : public Error {
public:
	using Error::Error;
};

/// Invalid user-supplied configuration or arguments.
class ConfigError : public Error {
public:
	using Error::Error;
};

/// A source signal that cannot be used (e.g. zero energy when mixing).
class DegenerateSourceError : public Error {
public:
	using Error::Error;
};

}  // namespace mbt
