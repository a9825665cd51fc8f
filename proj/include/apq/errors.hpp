#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace apq {

inline constexpr std::size_t no_index = std::numeric_limits<std::size_t>::max();

/// Invalid arguments or malformed data supplied by the caller.
class InputError : public std::invalid_argument {
public:
    explicit InputError(const std::string& what, std::size_t index = no_index)
        : std::invalid_argument(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// A computation that cannot be completed in floating point
/// (overflow, non-convergence, zero density, degenerate logs).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what, std::size_t index = no_index)
        : std::runtime_error(what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// A matrix that must be inverted is singular or too ill-conditioned.
class SingularMatrixError : public NumericalError {
public:
    SingularMatrixError(const std::string& what, Eigen::VectorXd null_direction, double condition)
        : NumericalError(what), null_direction_(std::move(null_direction)), condition_(condition) {}
    const Eigen::VectorXd& null_direction() const noexcept { return null_direction_; }
    double condition() const noexcept { return condition_; }

private:
    Eigen::VectorXd null_direction_;
    double condition_;
};

}  // namespace apq
