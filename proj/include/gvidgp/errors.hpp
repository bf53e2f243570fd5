#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gvidgp {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

class AlphaOutOfRange : public Error {
public:
    using Error::Error;
};

class NonPositivePower : public Error {
public:
    using Error::Error;
};

/// Raised when a caller breaks a documented precondition (empty batch, bad sizes, ...).
class PreconditionViolation : public Error {
public:
    using Error::Error;
};

class NonFiniteGradient : public Error {
public:
    NonFiniteGradient(std::string block, std::size_t index)
        : Error("non-finite gradient in parameter block '" + block + "' at entry " + std::to_string(index)),
          block_(std::move(block)), index_(index) {}

    [[nodiscard]] const std::string& block() const noexcept { return block_; }
    [[nodiscard]] std::size_t index() const noexcept { return index_; }

private:
    std::string block_;
    std::size_t index_;
};

class NonFiniteObjective : public Error {
public:
    NonFiniteObjective(std::size_t iteration, std::vector<std::size_t> batch)
        : Error("non-finite objective at iteration " + std::to_string(iteration) + " (batch of " +
                std::to_string(batch.size()) + " points)"),
          iteration_(iteration), batch_(std::move(batch)) {}

    [[nodiscard]] std::size_t iteration() const noexcept { return iteration_; }
    [[nodiscard]] const std::vector<std::size_t>& batch() const noexcept { return batch_; }

private:
    std::size_t iteration_;
    std::vector<std::size_t> batch_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t row, std::size_t column, std::string content)
        : Error("parse error at row " + std::to_string(row) + ", column " + std::to_string(column) + ": '" +
                content + "'"),
          row_(row), column_(column), content_(std::move(content)) {}

    [[nodiscard]] std::size_t row() const noexcept { return row_; }
    [[nodiscard]] std::size_t column() const noexcept { return column_; }
    [[nodiscard]] const std::string& content() const noexcept { return content_; }

private:
    std::size_t row_;
    std::size_t column_;
    std::string content_;
};

class EmptyFile : public Error {
public:
    using Error::Error;
};

class TooFewRows : public Error {
public:
    using Error::Error;
};

/// Configuration problem; `field()` names the offending key path.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}

    [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

}  // namespace gvidgp
