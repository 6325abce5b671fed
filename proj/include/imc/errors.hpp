#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace imc {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// NaN input, negative weight, dimension mismatch and friends.
struct InvalidInputError : Error {
    using Error::Error;
};

/// A row of a log-weight matrix is entirely -inf: every curriculum assigned
/// the sample probability exactly zero. Carries the offending row and,
/// when raised from a training loop, the iteration.
struct DegenerateRowError : Error {
    explicit DegenerateRowError(std::size_t row_index)
        : Error("degenerate row " + std::to_string(row_index) +
                ": all log-weights are -inf"),
          row(row_index) {}
    DegenerateRowError(std::size_t row_index, std::size_t iter)
        : Error("degenerate row " + std::to_string(row_index) + " at iteration " +
                std::to_string(iter) + ": all log-weights are -inf"),
          row(row_index),
          iteration(iter) {}
    std::size_t row;
    std::size_t iteration = 0;
};

/// Normal matrix is singular and no ridge term was requested.
struct RankDeficiencyError : Error {
    RankDeficiencyError()
        : Error("normal equations are rank deficient; use ridge_lambda > 0") {}
};

/// Non-finite loss during gradient fitting. Carries the step index.
struct DivergenceError : Error {
    explicit DivergenceError(std::size_t step_index)
        : Error("non-finite loss at optimizer step " + std::to_string(step_index)),
          step(step_index) {}
    std::size_t step;
};

/// Every mixture component lost all curriculum mass.
struct TrainingCollapseError : Error {
    explicit TrainingCollapseError(std::size_t iter)
        : Error("all components dead at iteration " + std::to_string(iter)),
          iteration(iter) {}
    std::size_t iteration;
};

/// File and parse problems.
struct IoError : Error {
    using Error::Error;
};

}  // namespace imc
