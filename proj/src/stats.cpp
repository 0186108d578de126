#include "smartalert/analytics.hpp"

#include "smartalert/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace smartalert {

namespace {

double clamp_p(double p) { return std::clamp(p, 0.0, 1.0); }

// log C(n, k) from log-gamma terms.
double log_choose(double n, double k) { return std::lgamma(n + 1) - std::lgamma(k + 1) - std::lgamma(n - k + 1); }

// Two-sided binomial test by the probability-mass rule.
double binomial_two_sided(std::uint64_t k, std::uint64_t n, double prob) {
    if (prob <= 0.0 || prob >= 1.0) return 1.0;
    auto logp = [&](std::uint64_t x) {
        const double xd = static_cast<double>(x), nd = static_cast<double>(n);
        return log_choose(nd, xd) + xd * std::log(prob) + (nd - xd) * std::log1p(-prob);
    };
    const double observed = logp(k) + std::log1p(1e-12);
    double p = 0.0;
    for (std::uint64_t x = 0; x <= n; ++x) {
        const double lx = logp(x);
        if (lx <= observed) p += std::exp(lx);
    }
    return clamp_p(p);
}

} // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_two_sided(double z) { return clamp_p(std::erfc(std::fabs(z) / std::sqrt(2.0))); }

// ---------------------------------------------------------------------------
// Poisson

PoissonComparison poisson_rate_compare(std::span<const std::int64_t> counts_t, std::span<const std::int64_t> counts_c) {
    if (counts_t.empty() || counts_c.empty()) {
        throw ContractError("poisson comparison needs non-empty groups");
    }
    PoissonComparison r;
    r.n_treatment = counts_t.size();
    r.n_control = counts_c.size();
    for (auto v : counts_t) {
        if (v < 0) throw ContractError("counts must be non-negative");
        r.total_treatment += static_cast<std::uint64_t>(v);
    }
    for (auto v : counts_c) {
        if (v < 0) throw ContractError("counts must be non-negative");
        r.total_control += static_cast<std::uint64_t>(v);
    }
    r.mean_treatment = static_cast<double>(r.total_treatment) / static_cast<double>(r.n_treatment);
    r.mean_control = static_cast<double>(r.total_control) / static_cast<double>(r.n_control);
    r.rate_ratio = r.total_control == 0
                       ? (r.total_treatment == 0 ? std::numeric_limits<double>::quiet_NaN()
                                                 : std::numeric_limits<double>::infinity())
                       : r.mean_treatment / r.mean_control;

    if (r.total_treatment == 0 && r.total_control == 0) {
        r.method = "undefined";
        return r;
    }
    if (r.total_treatment == 0 || r.total_control == 0) {
        // Conditional on the pooled total, the treatment total is binomial
        // with success probability n_t / (n_t + n_c) under the null.
        const std::uint64_t n = r.total_treatment + r.total_control;
        const double share = static_cast<double>(r.n_treatment) / static_cast<double>(r.n_treatment + r.n_control);
        r.p = binomial_two_sided(r.total_treatment, n, share);
        r.method = "exact_conditional";
        return r;
    }
    const double se = std::sqrt(1.0 / static_cast<double>(r.total_treatment) +
                                1.0 / static_cast<double>(r.total_control));
    r.z = std::log(r.rate_ratio) / se;
    r.p = normal_two_sided(*r.z);
    r.method = "wald";
    return r;
}

double relative_reduction(double mean_treatment, double mean_control) {
    if (!(mean_control > 0.0)) throw ContractError("relative reduction needs a positive control mean");
    return 1.0 - mean_treatment / mean_control;
}

// ---------------------------------------------------------------------------
// Mann-Whitney

MannWhitney mann_whitney_u(std::span<const double> xs, std::span<const double> ys) {
    if (xs.empty() || ys.empty()) {
        throw ContractError("Mann-Whitney needs two non-empty samples");
    }
    const std::size_t nx = xs.size(), ny = ys.size(), n = nx + ny;
    struct Item {
        double v;
        bool from_x;
    };
    std::vector<Item> pooled;
    pooled.reserve(n);
    for (double v : xs) pooled.push_back({v, true});
    for (double v : ys) pooled.push_back({v, false});
    std::sort(pooled.begin(), pooled.end(), [](const Item& a, const Item& b) { return a.v < b.v; });

    // Doubled midranks are integers.
    std::vector<std::int64_t> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && pooled[j].v == pooled[i].v) ++j;
        const auto t = static_cast<std::int64_t>(j - i);
        const auto mid2 = static_cast<std::int64_t>(i + 1 + j); // (i+1) + j = 2 * midrank
        for (std::size_t k = i; k < j; ++k) rank2[k] = mid2;
        tie_term += static_cast<double>(t * t * t - t);
        i = j;
    }
    std::int64_t r2x = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (pooled[i].from_x) r2x += rank2[i];
    }
    const auto nxi = static_cast<std::int64_t>(nx), nyi = static_cast<std::int64_t>(ny);
    // 2U = 2 * R_x - n_x (n_x + 1)
    const std::int64_t u2 = r2x - nxi * (nxi + 1);
    MannWhitney out;
    out.u = static_cast<double>(u2) / 2.0;
    const std::int64_t centre2 = nxi * nyi; // 2 * E[U]
    out.all_ties = tie_term == static_cast<double>(n * n * n - n);

    if (n <= 12) {
        out.method = "exact";
        const std::int64_t observed = std::llabs(u2 - centre2);
        std::uint64_t hits = 0, total = 0;
        const std::uint32_t full = 1u << n;
        for (std::uint32_t mask = 0; mask < full; ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != nx) continue;
            std::int64_t r2 = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask & (1u << i)) r2 += rank2[i];
            }
            ++total;
            if (std::llabs(r2 - nxi * (nxi + 1) - centre2) >= observed) ++hits;
        }
        out.p = static_cast<double>(hits) / static_cast<double>(total);
        return out;
    }

    out.method = "normal";
    const double nd = static_cast<double>(n);
    const double var = static_cast<double>(nx) * static_cast<double>(ny) / 12.0 *
                       ((nd + 1.0) - tie_term / (nd * (nd - 1.0)));
    if (var <= 0.0) {
        out.p = 1.0;
        return out;
    }
    const double diff = std::fabs(out.u - static_cast<double>(centre2) / 2.0);
    const double z = std::max(0.0, diff - 0.5) / std::sqrt(var);
    out.p = normal_two_sided(z);
    return out;
}

// ---------------------------------------------------------------------------
// Fisher

FisherResult fisher_exact(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    FisherResult out;
    const std::uint64_t r1 = a + b, r2 = c + d, c1 = a + c, c2 = b + d, n = r1 + r2;
    if (r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0) {
        out.degenerate = true;
        out.p = 1.0;
        return out;
    }
    // Log probability up to the common margin term. Cell terms are summed in
    // sorted order so tables with the same cells tie exactly.
    auto cells_log = [&](std::uint64_t x) {
        std::array<double, 4> terms{std::lgamma(static_cast<double>(x) + 1),
                                    std::lgamma(static_cast<double>(r1 - x) + 1),
                                    std::lgamma(static_cast<double>(c1 - x) + 1),
                                    std::lgamma(static_cast<double>(r2 - c1 + x) + 1)};
        std::sort(terms.begin(), terms.end());
        return -(((terms[0] + terms[1]) + terms[2]) + terms[3]);
    };
    const double margins = std::lgamma(static_cast<double>(r1) + 1) + std::lgamma(static_cast<double>(r2) + 1) +
                           std::lgamma(static_cast<double>(c1) + 1) + std::lgamma(static_cast<double>(c2) + 1) -
                           std::lgamma(static_cast<double>(n) + 1);
    const std::uint64_t lo = c1 > r2 ? c1 - r2 : 0;
    const std::uint64_t hi = std::min(r1, c1);
    const double observed = cells_log(a) + std::log1p(1e-12);
    double p = 0.0;
    for (std::uint64_t x = lo; x <= hi; ++x) {
        const double lx = cells_log(x);
        if (lx <= observed) p += std::exp(lx + margins);
    }
    out.p = clamp_p(p);
    return out;
}

// ---------------------------------------------------------------------------
// Savings

Savings savings(double annual_tests, double repetitive_fraction, double relative_reduction, double unit_charge) {
    auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!finite_nonneg(annual_tests) || !finite_nonneg(repetitive_fraction) || !finite_nonneg(relative_reduction) ||
        !finite_nonneg(unit_charge)) {
        throw ValidationError("savings inputs must be finite and non-negative");
    }
    if (repetitive_fraction > 1.0 || relative_reduction > 1.0) {
        throw ValidationError("fractions must not exceed 1");
    }
    Savings s;
    s.tests_avoided = std::llround(annual_tests * repetitive_fraction * relative_reduction);
    s.dollars = static_cast<double>(s.tests_avoided) * unit_charge;
    return s;
}

} // namespace smartalert
