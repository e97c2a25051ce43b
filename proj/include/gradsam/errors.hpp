#pragma once

#include <stdexcept>
#include <string>

namespace gradsam {

// Shape or extent mismatch between tensor operands.
struct DimensionError : std::invalid_argument {
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// A call violated an operation's precondition.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Bad configuration: vocab files, model configs, CLI flag combinations.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Persisted artifact failed a hash or structural integrity check.
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// An op produced NaN/Inf or was fed non-finite input.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Optimization diverged; carries the epoch where the loss went non-finite.
struct TrainingError : std::runtime_error {
    TrainingError(const std::string& msg, size_t epoch_index)
        : std::runtime_error(msg + " (epoch " + std::to_string(epoch_index) + ")"),
          epoch(epoch_index) {}
    size_t epoch;
};

}  // namespace gradsam
