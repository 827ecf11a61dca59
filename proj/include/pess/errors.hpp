#pragma once

#include <stdexcept>
#include <string>

namespace pess {

// Invalid caller-supplied value (bad tau, empty text, ...). CLI maps these
// to exit code 2.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed input data (bad JSON, ...). Message carries the line number.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Structurally valid input that violates the record schema. Message names
// the offending field.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration file or inconsistent config values. Exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Embedding provider failure. `config` failures mean the provider was set
// up wrong (missing model path, unknown name); `runtime` failures happen
// while embedding.
class ProviderError : public std::runtime_error {
public:
    enum class Kind { config, runtime };

    ProviderError(Kind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace pess
