#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>

#include <Eigen/Dense>

#include "mcis/errors.hpp"

namespace mcis {

/// Block-size policy b = floor(n^nu), or an explicit override.
struct BatchMeansSpec {
    double nu = 0.5;
    std::optional<std::size_t> explicit_b;

    void validate() const {
        if (!(nu > 0.0 && nu < 1.0)) throw InvalidParameter("batch means: nu must lie in (0, 1)");
        if (explicit_b && *explicit_b < 1) throw InvalidParameter("batch means: explicit block size must be >= 1");
    }
};

/// Observations in rows, functional coordinates in columns.
using SeriesMatrix = Eigen::MatrixXd;

inline std::size_t block_size(std::size_t n, const BatchMeansSpec& spec = {}) {
    spec.validate();
    if (n < 4) throw InsufficientData("batch means needs at least 4 observations");
    std::size_t b = spec.explicit_b ? *spec.explicit_b
                                    : static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(n), spec.nu)));
    if (b < 1) b = 1;
    if (n / b < 2) b = n / 2;  // keep at least two blocks
    return b;
}

/// Non-overlapping batch-means estimate of the long-run covariance of the rows of `series`:
///
///   (b / (e - 1)) * sum_m (Zbar_m - Zbarbar)(Zbar_m - Zbarbar)^T
///
/// over e = floor(n / b) blocks. Rows past e*b are dropped, and the grand mean is taken
/// over the retained rows only, so the centred block means sum to zero.
inline Eigen::MatrixXd bm_cov(const SeriesMatrix& series, std::size_t b) {
    const auto n = static_cast<std::size_t>(series.rows());
    const auto p = static_cast<std::size_t>(series.cols());
    if (b < 1) throw InvalidParameter("bm_cov: block size must be >= 1");
    const std::size_t e = n / b;
    if (e < 2) throw InsufficientData("bm_cov: need at least two blocks");

    // Block means are computed column by column with plain loops so that a coordinate's
    // result does not depend on which other coordinates share the matrix.
    Eigen::MatrixXd means(e, p);
    Eigen::VectorXd grand(p);
    for (std::size_t c = 0; c < p; ++c) {
        double total = 0.0;
        for (std::size_t m = 0; m < e; ++m) {
            double s = 0.0;
            for (std::size_t i = m * b; i < (m + 1) * b; ++i) s += series(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
            means(m, c) = s / static_cast<double>(b);
            total += s;
        }
        grand(c) = total / static_cast<double>(e * b);
    }
    for (std::size_t c = 0; c < p; ++c)
        for (std::size_t m = 0; m < e; ++m) means(m, c) -= grand(c);

    Eigen::MatrixXd out(p, p);
    const double scale = static_cast<double>(b) / static_cast<double>(e - 1);
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = r; c < p; ++c) {
            double s = 0.0;
            for (std::size_t m = 0; m < e; ++m) s += means(m, r) * means(m, c);
            out(r, c) = out(c, r) = scale * s;
        }
    }
    return out;
}

inline Eigen::MatrixXd bm_cov(const SeriesMatrix& series, const BatchMeansSpec& spec = {}) {
    return bm_cov(series, block_size(static_cast<std::size_t>(series.rows()), spec));
}

/// Scalar long-run variance.
inline double bm_var(std::span<const double> xs, std::size_t b) {
    Eigen::Map<const Eigen::VectorXd> col(xs.data(), static_cast<Eigen::Index>(xs.size()));
    return bm_cov(SeriesMatrix(col), b)(0, 0);
}

inline double bm_var(std::span<const double> xs, const BatchMeansSpec& spec = {}) {
    return bm_var(xs, block_size(xs.size(), spec));
}

}  // namespace mcis
