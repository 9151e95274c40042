#pragma once

// Seeded synthetic populations for the three models. Generator layouts are
// fixed (version 1): changing them changes every downstream number.

#include <cmath>
#include <cstdint>
#include <string>

#include "osd/io.hpp"
#include "osd/rng.hpp"

namespace osd {

inline constexpr int kSynthVersion = 1;

/// Units grouped into cases of ~20 variations. log y depends linearly on two
/// auxiliaries z1 (duration-like, [0, 3]) and z2 (intensity-like, [0, 1])
/// plus a case effect; weights are a case-level weight times a within-case
/// probability.
inline Dataset synth_lognormal(std::size_t N, std::uint64_t seed) {
    CounterRng rng(derive_seed(seed, 0x10));
    Dataset d;
    d.kind = ModelKind::LogNormal;
    d.w.resize(N);
    d.y = Matrix(N, 1);
    d.x = Matrix(N, 2);
    const std::size_t per_case = 20;
    double case_effect = 0.0, case_weight = 1.0;
    for (std::size_t i = 0; i < N; ++i) {
        if (i % per_case == 0) {
            case_effect = rng.normal(0.0, 0.3);
            case_weight = rng.uniform(0.2, 2.0);
        }
        const double z1 = rng.uniform(0.0, 3.0);
        const double z2 = rng.uniform(0.0, 1.0);
        const double logy = 0.5 + 0.6 * z1 - 0.8 * z2 + case_effect + rng.normal(0.0, 0.5);
        d.ids.push_back(std::to_string(i + 1));
        d.w[i] = case_weight * rng.uniform(0.1, 1.0);
        d.y(i, 0) = std::exp(logy);
        d.x(i, 0) = z1;
        d.x(i, 1) = z2;
    }
    return d;
}

/// Quasi-binomial pool with `groups` groups, each with its own intercept and
/// slope: x = [1{g}, 1{g} * t] per group, y = sigmoid(eta + noise) in (0, 1).
inline Dataset synth_logit(std::size_t N, std::uint64_t seed, std::size_t groups = 4) {
    CounterRng rng(derive_seed(seed, 0x20));
    Dataset d;
    d.kind = ModelKind::QbLogit;
    const std::size_t p = 2 * groups;
    d.x = Matrix(N, p);
    d.y = Matrix(N, 1);
    Vector intercept(groups), slope(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        intercept[g] = rng.uniform(-1.0, 1.0);
        slope[g] = rng.uniform(0.5, 2.0);
    }
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t g = rng.below(groups);
        const double t = rng.normal();
        d.x(i, 2 * g) = 1.0;
        d.x(i, 2 * g + 1) = t;
        const double eta = intercept[g] + slope[g] * t + rng.normal(0.0, 0.5);
        d.y(i, 0) = 1.0 / (1.0 + std::exp(-eta));
        d.ids.push_back(std::to_string(i + 1));
    }
    // Guarantee every group column is populated.
    for (std::size_t g = 0; g < groups && g < N; ++g) {
        bool seen = false;
        for (std::size_t i = 0; i < N && !seen; ++i) seen = d.x(i, 2 * g) != 0.0;
        if (!seen) {
            for (std::size_t k = 0; k < p; ++k) d.x(g, k) = 0.0;
            d.x(g, 2 * g) = 1.0;
            d.x(g, 2 * g + 1) = rng.normal();
        }
    }
    return d;
}

/// Three outcomes on very different scales: y1 a speed-like reduction
/// (SD ~ 30), y2 a risk reduction in [0, 1], y3 a binary avoidance
/// indicator. Units belong to `groups` groups with shifted means.
inline Dataset synth_finpop(std::size_t N, std::uint64_t seed, std::size_t groups = 20) {
    CounterRng rng(derive_seed(seed, 0x30));
    Dataset d;
    d.kind = ModelKind::FinPop;
    d.w.resize(N);
    d.y = Matrix(N, 3);
    d.groups.resize(N);
    Vector center(groups);
    for (std::size_t g = 0; g < groups; ++g) center[g] = rng.uniform(0.0, 80.0);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t g = rng.below(groups);
        const double y1 = center[g] + rng.normal(0.0, 20.0);
        const double risk = 1.0 / (1.0 + std::exp(-(y1 - 40.0) / 15.0 + rng.normal(0.0, 0.5)));
        const double avoid = rng.bernoulli(std::clamp(0.1 + 0.8 * risk, 0.0, 1.0)) ? 1.0 : 0.0;
        d.ids.push_back(std::to_string(i + 1));
        d.w[i] = rng.uniform(0.5, 1.5);
        d.y(i, 0) = y1;
        d.y(i, 1) = risk;
        d.y(i, 2) = avoid;
        d.groups[i] = static_cast<int>(g) + 1;
    }
    return d;
}

inline Dataset synth(ModelKind kind, std::size_t N, std::uint64_t seed) {
    switch (kind) {
        case ModelKind::FinPop: return synth_finpop(N, seed);
        case ModelKind::LogNormal: return synth_lognormal(N, seed);
        case ModelKind::QbLogit: return synth_logit(N, seed);
    }
    throw Error(ErrorKind::InvalidInput, "unknown model kind");
}

}  // namespace osd
