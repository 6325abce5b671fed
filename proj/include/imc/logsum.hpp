#pragma once

#include <span>
#include <vector>

#include "imc/matrix.hpp"

namespace imc {

/// log(sum_i exp(v_i)) by max-shift. -inf entries drop out; an all-(-inf)
/// vector yields -inf. Throws InvalidInputError on NaN.
double log_sum_exp(std::span<const double> values);

struct RowNormalized {
    Matrix normalized;            // m(n,k) - row_lse[n]
    std::vector<double> row_lse;  // log of each row's total mass
};

/// Shift every row so that its entries exponentiate to a distribution.
/// Throws DegenerateRowError (with the row index) if a row is all -inf.
RowNormalized row_log_normalize(const Matrix& m);

/// log-sum-exp over every entry of a matrix.
double matrix_log_sum_exp(const Matrix& m);

namespace ref {
// Textbook serial versions, kept as oracles for the parallel kernels.
double log_sum_exp(std::span<const double> values);
RowNormalized row_log_normalize(const Matrix& m);
double matrix_log_sum_exp(const Matrix& m);
}  // namespace ref

}  // namespace imc
