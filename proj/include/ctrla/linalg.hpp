/*
 * Copyright 2026 The ctrla Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ctrla/errors.hpp"

namespace ctrla {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimMismatch("dot: length " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimMismatch("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector scaled(std::span<const double> x, double alpha) {
    Vector out(x.begin(), x.end());
    for (double& v : out) v *= alpha;
    return out;
}

inline Vector normalized(std::span<const double> x) {
    const double n = norm(x);
    if (!(n > 0.0)) throw DegenerateData("cannot normalize a zero vector");
    return scaled(x, 1.0 / n);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    return dot(a, b) / (norm(a) * norm(b));
}

struct PowerIterationOptions {
    double tolerance = 1e-10;
    int max_iterations = 1000;
};

struct PowerIterationResult {
    Vector vector;      // unit norm
    double eigenvalue;  // Rayleigh quotient of the returned vector
    int iterations;
    bool converged;
};

/// Dominant eigenvector of the sample covariance (1/n) * sum c_i c_i^T of the
/// already-centered rows, without forming the covariance matrix. Each matvec
/// costs O(rows * dim).
///
/// The start vector is the longest row plus a small fixed tilt so that it is
/// not orthogonal to the dominant eigenvector in practice. Convergence is
/// declared when successive unit iterates differ by less than `tolerance` in
/// Euclidean norm.
inline PowerIterationResult dominant_eigenvector(std::span<const Vector> centered,
                                                 PowerIterationOptions opts = {}) {
    if (centered.empty()) throw EmptyInput("power iteration: no rows");
    const std::size_t dim = centered.front().size();
    const double inv_n = 1.0 / static_cast<double>(centered.size());

    auto apply = [&](const Vector& x) {
        Vector y(dim, 0.0);
        for (const Vector& row : centered) {
            const double w = dot(row, x) * inv_n;
            axpy(w, row, y);
        }
        return y;
    };

    std::size_t longest = 0;
    double longest_norm = -1.0;
    for (std::size_t i = 0; i < centered.size(); ++i) {
        const double n = norm(centered[i]);
        if (n > longest_norm) {
            longest_norm = n;
            longest = i;
        }
    }
    if (!(longest_norm > 0.0)) throw DegenerateData("power iteration: all rows are zero");

    Vector x = scaled(centered[longest], 1.0 / longest_norm);
    for (std::size_t j = 0; j < dim; ++j) {
        x[j] += 1e-3 * static_cast<double>(j + 1) / static_cast<double>(dim);
    }
    x = normalized(x);

    PowerIterationResult result{x, 0.0, 0, false};
    for (int it = 1; it <= opts.max_iterations; ++it) {
        Vector y = apply(x);
        const double ny = norm(y);
        if (!(ny > 0.0)) throw DegenerateData("power iteration: covariance annihilates iterate");
        for (double& v : y) v /= ny;
        double delta = 0.0;
        for (std::size_t j = 0; j < dim; ++j) delta += (y[j] - x[j]) * (y[j] - x[j]);
        x = std::move(y);
        result.iterations = it;
        if (std::sqrt(delta) < opts.tolerance) {
            result.converged = true;
            break;
        }
    }
    result.eigenvalue = dot(x, apply(x));
    result.vector = std::move(x);
    return result;
}

}  // namespace ctrla
