#include "imc/logsum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "imc/errors.hpp"
#include "imc/parallel.hpp"

namespace imc {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw InvalidInputError("log_sum_exp: empty input");
    double max = kNegInf;
    for (double v : values) {
        if (std::isnan(v)) throw InvalidInputError("log_sum_exp: NaN input");
        max = std::max(max, v);
    }
    if (max == kNegInf) return kNegInf;
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - max);
    return max + std::log(sum);
}

RowNormalized row_log_normalize(const Matrix& m) {
    RowNormalized out{Matrix(m.rows(), m.cols()), std::vector<double>(m.rows())};
    std::vector<std::size_t> degenerate(m.rows(), 0);
    par::for_n(m.rows(), [&](std::size_t n) {
        const double lse = log_sum_exp({m.row(n), m.cols()});
        if (lse == kNegInf) {
            degenerate[n] = 1;
            return;
        }
        out.row_lse[n] = lse;
        for (std::size_t k = 0; k < m.cols(); ++k) out.normalized(n, k) = m(n, k) - lse;
    });
    for (std::size_t n = 0; n < m.rows(); ++n)
        if (degenerate[n]) throw DegenerateRowError(n);
    return out;
}

double matrix_log_sum_exp(const Matrix& m) {
    // lse over all entries == lse over the per-row lse values.
    std::vector<double> row_lse(m.rows());
    par::for_n(m.rows(), [&](std::size_t n) {
        row_lse[n] = log_sum_exp({m.row(n), m.cols()});
    });
    return log_sum_exp(row_lse);
}

namespace ref {

double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw InvalidInputError("log_sum_exp: empty input");
    double max = kNegInf;
    for (double v : values) {
        if (std::isnan(v)) throw InvalidInputError("log_sum_exp: NaN input");
        max = std::max(max, v);
    }
    if (max == kNegInf) return kNegInf;
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - max);
    return max + std::log(sum);
}

RowNormalized row_log_normalize(const Matrix& m) {
    RowNormalized out{Matrix(m.rows(), m.cols()), std::vector<double>(m.rows())};
    for (std::size_t n = 0; n < m.rows(); ++n) {
        const double lse = log_sum_exp({m.row(n), m.cols()});
        if (lse == kNegInf) throw DegenerateRowError(n);
        out.row_lse[n] = lse;
        for (std::size_t k = 0; k < m.cols(); ++k) out.normalized(n, k) = m(n, k) - lse;
    }
    return out;
}

double matrix_log_sum_exp(const Matrix& m) {
    std::vector<double> all(m.data(), m.data() + m.size());
    return log_sum_exp(all);
}

}  // namespace ref

}  // namespace imc
