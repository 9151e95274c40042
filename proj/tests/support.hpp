#pragma once

#include <cmath>
#include <cstdint>

#include "osd/matrix.hpp"
#include "osd/rng.hpp"

namespace osd::testing {

inline SymMatrix random_symmetric(CounterRng& rng, std::size_t p) {
    Matrix m(p, p);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j) m(i, j) = rng.normal();
    return SymMatrix(m);
}

inline Matrix random_matrix(CounterRng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m(i, j) = sd * rng.normal();
    return m;
}

/// G G^T + ridge * I with G of size p x k.
inline SymMatrix random_gram(CounterRng& rng, std::size_t p, std::size_t k, double ridge = 0.0) {
    const Matrix g = random_matrix(rng, p, k);
    SymMatrix s(g * g.transpose());
    for (std::size_t i = 0; i < p; ++i) s.set(i, i, s(i, i) + ridge);
    return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).max_abs(); }

inline Vector random_positive(CounterRng& rng, std::size_t n, double lo = 0.05, double hi = 1.0) {
    Vector v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace osd::testing
