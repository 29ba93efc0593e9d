#pragma once

#include <stdexcept>
#include <string>

namespace univ2d {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class OddChannelError : public Error {
public:
    using Error::Error;
};

class LevelMismatchError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class TooSmallError : public Error {
public:
    using Error::Error;
};

class MissingPairError : public Error {
public:
    using Error::Error;
};

class DecodeError : public Error {
public:
    using Error::Error;
};

class NonFiniteLossError : public Error {
public:
    using Error::Error;
};

class ArchiveError : public Error {
public:
    using Error::Error;
};

} // namespace univ2d
