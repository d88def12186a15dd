#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace t3d {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
   public:
    using Error::Error;
};

/// Domain violation or non-finite value produced by an op.
class NumericError : public Error {
   public:
    using Error::Error;
};

/// Out-of-range index (labels, gather indices).
class IndexError : public Error {
   public:
    using Error::Error;
};

/// Violated precondition of an API call.
class ContractError : public Error {
   public:
    using Error::Error;
};

/// Invalid configuration value or missing configuration input.
class ConfigError : public Error {
   public:
    using Error::Error;
};

/// Malformed text input (OFF files, config files). Carries the line number.
class ParseError : public Error {
   public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line), reason_(what) {}
    std::size_t line() const noexcept { return line_; }
    /// The message without the line prefix.
    const std::string& reason() const noexcept { return reason_; }

   private:
    std::size_t line_;
    std::string reason_;
};

/// Degenerate geometry (zero-area meshes, coincident points).
class GeometryError : public Error {
   public:
    using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public Error {
   public:
    FormatError(const std::string& what, std::size_t offset)
        : Error("offset " + std::to_string(offset) + ": " + what), offset_(offset), reason_(what) {}
    std::size_t offset() const noexcept { return offset_; }
    /// The message without the offset prefix.
    const std::string& reason() const noexcept { return reason_; }

   private:
    std::size_t offset_;
    std::string reason_;
};

/// File system failure.
class IoError : public Error {
   public:
    using Error::Error;
};

/// Training diverged (NaN/Inf loss or parameters).
class TrainingError : public Error {
   public:
    using Error::Error;
};

namespace detail {

template <typename Container>
std::string shape_str(const Container& shape) {
    std::ostringstream os;
    os << '[';
    bool first = true;
    for (auto d : shape) {
        if (!first) os << 'x';
        os << d;
        first = false;
    }
    os << ']';
    return os.str();
}

}  // namespace detail
}  // namespace t3d
