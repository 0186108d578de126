#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace smartalert::logistic {

/// Row-major design matrix with binary responses.
struct Problem {
    std::size_t cols = 0;
    std::vector<double> x;
    std::vector<double> y;

    std::size_t rows() const { return cols == 0 ? 0 : x.size() / cols; }
    void add_row(std::span<const double> row, bool response);
};

double sigmoid(double z);

/// Mean log-likelihood minus (l2 / 2) * sum of squared non-intercept
/// coefficients. Column 0 is the intercept.
double objective(const Problem& p, std::span<const double> beta, double l2);
std::vector<double> gradient(const Problem& p, std::span<const double> beta, double l2);

struct Fit {
    std::vector<double> beta;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Damped Newton ascent; stops when the objective improves by less than
/// `tolerance` or after `max_iterations`.
Fit fit(const Problem& p, double l2, double tolerance = 1e-8, int max_iterations = 500);

} // namespace smartalert::logistic
