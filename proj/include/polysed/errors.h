#pragma once

#include <stdexcept>
#include <string>

namespace polysed {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension mismatch between operands, or a model/config incompatible with its input.
class ShapeError : public Error {
public:
    using Error::Error;
};

// NaN/Inf encountered, or an undefined numeric quantity was requested.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Anything wrong with input data: files, annotations, archives.
class DataError : public Error {
public:
    using Error::Error;
};

class WavError : public DataError {
public:
    enum class Kind { io, malformed, unsupported_format, wrong_sample_rate };

    WavError(Kind kind, const std::string& message) : DataError(message), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class AnnotationError : public DataError {
public:
    enum class Kind { io, parse, ordering, unknown_label };

    AnnotationError(Kind kind, const std::string& message) : DataError(message), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// Binary archive (TFR, checkpoint, prediction) or params file that fails validation.
class FormatError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace polysed
