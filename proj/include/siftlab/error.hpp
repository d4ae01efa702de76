// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace siftlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or names of two operands disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A loss, gradient or update became NaN/Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Bad arguments, unknown keys, out-of-range rates.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Misuse of the tape: double backward, duplicate hooks, retained views.
class TapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Binary file validation failure. The code identifies which check failed.
class FormatError : public Error {
public:
    enum class Code { BadMagic, BadVersion, BadChecksum, NotMonotonic, IndexOutOfRange, Truncated, BadElementType };

    FormatError(Code code, const std::string& what) : Error(what), code_(code) {}
    Code code() const noexcept { return code_; }

private:
    Code code_;
};

}  // namespace siftlab
