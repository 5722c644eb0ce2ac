#pragma once

#include <stdexcept>
#include <string>

namespace sadvae {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad magic, version or structure in a file.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Payload shorter than its header declares.
class LengthError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, labels out of range and similar content problems.
class DataError : public Error {
public:
    using Error::Error;
};

/// Operand widths that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Caller supplied an out-of-range argument.
class ArgumentError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace sadvae
