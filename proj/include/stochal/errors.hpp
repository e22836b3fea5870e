#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>

namespace stochal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numeric parameter is outside its admissible range (b > M, scale <= 0, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Input data violates an invariant (empty pool, non-finite scores, bad simplex rows).
class InputError : public Error {
public:
    using Error::Error;
};

/// A text record could not be parsed. Carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Parsed values are well-formed but inconsistent with the declared schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Optimisation diverged. Carries the epoch in which the loss became non-finite.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::size_t epoch)
        : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

/// Invalid experiment configuration; `field` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

using WarningHandler = std::function<void(const std::string&)>;

inline WarningHandler& warning_handler() {
    static WarningHandler handler = [](const std::string& msg) {
        std::cerr << "stochal warning: " << msg << '\n';
    };
    return handler;
}

/// Replace the process-wide warning sink. Pass an empty function to silence warnings.
inline void set_warning_handler(WarningHandler handler) { warning_handler() = std::move(handler); }

inline void warn(const std::string& msg) {
    if (auto& h = warning_handler()) h(msg);
}

}  // namespace stochal
