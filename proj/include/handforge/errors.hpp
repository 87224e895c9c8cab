#pragma once

#include <stdexcept>
#include <string>

namespace handforge {

// Invalid or inconsistent configuration (bad key, out-of-range value).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File or stream level failure, including malformed on-disk records.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// External model adapter failed (nonzero exit, unusable output).
class AdapterError : public std::runtime_error {
public:
    AdapterError(const std::string& msg, int exit_code)
        : std::runtime_error(msg), exit_code_(exit_code) {}

    int exit_code() const { return exit_code_; }

private:
    int exit_code_;
};

}  // namespace handforge
