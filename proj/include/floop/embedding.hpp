#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "floop/errors.hpp"

namespace floop {

/// Dense embedding, double precision end to end so persisted values round-trip bit-exactly.
struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }

    double norm() const {
        double s = 0.0;
        for (double v : values) s += v * v;
        return std::sqrt(s);
    }

    bool is_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
    return s;
}

/// sim(a,b) = a.b / (|a||b|), in [-1, 1] up to rounding.
inline double cosine_sim(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim())
        throw DimensionMismatchError("cosine_sim: dims " + std::to_string(a.dim()) + " vs " +
                                     std::to_string(b.dim()));
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw ZeroNormError("cosine_sim: zero-norm vector");
    return dot(a, b) / (na * nb);
}

}  // namespace floop
