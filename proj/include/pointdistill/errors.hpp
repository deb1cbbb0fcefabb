#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pdistill {

/// Operand shapes disagree. The message names both shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an op (tau <= 0, empty input, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Malformed or unreadable input file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failure; the message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration key or value.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training hit a non-finite loss. `scene_id` identifies the offending scene.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, std::size_t step, std::string scene_id)
        : std::runtime_error(what), step_(step), scene_id_(std::move(scene_id)) {}

    std::size_t step() const noexcept { return step_; }
    const std::string& scene_id() const noexcept { return scene_id_; }

private:
    std::size_t step_;
    std::string scene_id_;
};

std::string shape_str(std::size_t rows, std::size_t cols);

}  // namespace pdistill
