#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "osd/config.hpp"
#include "osd/error.hpp"
#include "osd/rng.hpp"

namespace osd {

enum class DesignFamily {
    PoissonWithReplacement,     // S_i ~ Poisson(mu_i)
    PoissonWithoutReplacement,  // S_i ~ Bernoulli(mu_i), mu_i <= 1
    Multinomial,                // (S_1..S_N) ~ Multinomial(n, mu / n)
};

inline std::string_view to_token(DesignFamily f) {
    switch (f) {
        case DesignFamily::PoissonWithReplacement: return "po-wr";
        case DesignFamily::PoissonWithoutReplacement: return "po-wor";
        case DesignFamily::Multinomial: return "multi";
    }
    return "?";
}

inline std::optional<DesignFamily> parse_family(std::string_view token) {
    if (token == "po-wr") return DesignFamily::PoissonWithReplacement;
    if (token == "po-wor") return DesignFamily::PoissonWithoutReplacement;
    if (token == "multi") return DesignFamily::Multinomial;
    return std::nullopt;
}

/// Expected selection counts mu over a finite population, tied to a design
/// family and (expected) sample size n. Only obtainable through
/// `validate_scheme`, so every instance lies in the family's domain.
class SamplingScheme {
public:
    std::span<const double> mu() const noexcept { return mu_; }
    double mu(std::size_t i) const { return mu_[i]; }
    std::size_t size() const noexcept { return mu_.size(); }
    DesignFamily family() const noexcept { return family_; }
    double budget() const noexcept { return budget_; }

    friend bool operator==(const SamplingScheme&, const SamplingScheme&) = default;

private:
    SamplingScheme(std::vector<double> mu, DesignFamily family, double budget)
        : mu_(std::move(mu)), family_(family), budget_(budget) {}

    friend SamplingScheme validate_scheme(std::vector<double> mu, DesignFamily family, double n);

    std::vector<double> mu_;
    DesignFamily family_{};
    double budget_ = 0.0;
};

inline bool is_integral(double x) { return std::isfinite(x) && x == std::floor(x); }

/// Checks mu against the domain M_n of `family`. Never renormalizes.
inline SamplingScheme validate_scheme(std::vector<double> mu, DesignFamily family, double n) {
    if (mu.empty()) throw Error(ErrorKind::InvalidInput, "scheme must contain at least one unit");
    if (!(n > 0.0) || !std::isfinite(n)) throw Error(ErrorKind::InvalidBudget, "budget n must be positive", n);
    if (family == DesignFamily::Multinomial && !is_integral(n))
        throw Error(ErrorKind::InvalidBudget, "multinomial budget must be an integer", n);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        if (!(mu[i] > 0.0) || !std::isfinite(mu[i]))
            throw Error(ErrorKind::OutOfDomain, "mu[" + std::to_string(i) + "] must be positive", mu[i]);
        if (family == DesignFamily::PoissonWithoutReplacement && mu[i] > 1.0)
            throw Error(ErrorKind::OutOfDomain, "mu[" + std::to_string(i) + "] exceeds 1 under PO-WOR", mu[i]);
    }
    const double total = std::accumulate(mu.begin(), mu.end(), 0.0);
    if (std::abs(total - n) > numeric_config().budget_tol * n)
        throw Error(ErrorKind::BudgetMismatch,
                    "sum(mu) = " + std::to_string(total) + " differs from n = " + std::to_string(n), total);
    return SamplingScheme(std::move(mu), family, n);
}

/// mu_i = n / N for every unit.
inline SamplingScheme uniform_scheme(std::size_t N, double n, DesignFamily family) {
    if (N == 0) throw Error(ErrorKind::InvalidInput, "population must be non-empty");
    if (family == DesignFamily::PoissonWithoutReplacement && n > static_cast<double>(N))
        throw Error(ErrorKind::InvalidBudget, "PO-WOR budget exceeds population size", n);
    const double each = n / static_cast<double>(N);
    std::vector<double> mu(N, each);
    if (family == DesignFamily::PoissonWithoutReplacement && n == static_cast<double>(N))
        std::fill(mu.begin(), mu.end(), 1.0);
    return validate_scheme(std::move(mu), family, n);
}

struct DrawResult {
    std::vector<std::int64_t> counts;
    std::int64_t realized_size = 0;
    std::uint64_t seed = 0;

    /// Indices with a positive count, ascending.
    std::vector<std::size_t> selected() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < counts.size(); ++i)
            if (counts[i] > 0) out.push_back(i);
        return out;
    }

    friend bool operator==(const DrawResult&, const DrawResult&) = default;
};

/// Draws selection counts S_i according to the scheme's family. Units are
/// visited in index order on a single stream keyed by `seed`.
inline DrawResult draw(const SamplingScheme& scheme, std::uint64_t seed) {
    CounterRng rng(seed);
    const auto mu = scheme.mu();
    DrawResult out;
    out.seed = seed;
    out.counts.assign(mu.size(), 0);
    switch (scheme.family()) {
        case DesignFamily::PoissonWithReplacement:
            for (std::size_t i = 0; i < mu.size(); ++i) out.counts[i] = rng.poisson(mu[i]);
            break;
        case DesignFamily::PoissonWithoutReplacement:
            for (std::size_t i = 0; i < mu.size(); ++i) out.counts[i] = rng.bernoulli(mu[i]) ? 1 : 0;
            break;
        case DesignFamily::Multinomial: {
            std::vector<double> cumulative(mu.size());
            std::partial_sum(mu.begin(), mu.end(), cumulative.begin());
            const double total = cumulative.back();
            const auto n = static_cast<std::int64_t>(scheme.budget());
            for (std::int64_t r = 0; r < n; ++r) {
                const double u = rng.uniform() * total;
                auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
                if (it == cumulative.end()) --it;
                ++out.counts[static_cast<std::size_t>(it - cumulative.begin())];
            }
            break;
        }
    }
    out.realized_size = std::accumulate(out.counts.begin(), out.counts.end(), std::int64_t{0});
    return out;
}

}  // namespace osd
