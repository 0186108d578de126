#include "smartalert/logistic.hpp"

#include "smartalert/errors.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace smartalert::logistic {

namespace {

// log(1 + e^z) without overflow.
double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> as_matrix(const Problem& p) {
    return {p.x.data(), static_cast<Eigen::Index>(p.rows()), static_cast<Eigen::Index>(p.cols)};
}

} // namespace

void Problem::add_row(std::span<const double> row, bool response) {
    if (cols == 0) cols = row.size();
    if (row.size() != cols) {
        throw ContractError("design row width mismatch");
    }
    x.insert(x.end(), row.begin(), row.end());
    y.push_back(response ? 1.0 : 0.0);
}

double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double objective(const Problem& p, std::span<const double> beta, double l2) {
    const std::size_t n = p.rows();
    if (n == 0) return 0.0;
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) z += p.x[i * p.cols + j] * beta[j];
        ll += p.y[i] * z - log1pexp(z);
    }
    double penalty = 0.0;
    for (std::size_t j = 1; j < beta.size(); ++j) penalty += beta[j] * beta[j];
    return ll / static_cast<double>(n) - 0.5 * l2 * penalty;
}

std::vector<double> gradient(const Problem& p, std::span<const double> beta, double l2) {
    const std::size_t n = p.rows();
    std::vector<double> g(p.cols, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) z += p.x[i * p.cols + j] * beta[j];
        const double r = p.y[i] - sigmoid(z);
        for (std::size_t j = 0; j < p.cols; ++j) g[j] += p.x[i * p.cols + j] * r;
    }
    for (std::size_t j = 0; j < p.cols; ++j) {
        g[j] /= static_cast<double>(std::max<std::size_t>(n, 1));
        if (j > 0) g[j] -= l2 * beta[j];
    }
    return g;
}

Fit fit(const Problem& p, double l2, double tolerance, int max_iterations) {
    if (p.rows() == 0 || p.cols == 0) {
        throw ContractError("logistic fit needs at least one row");
    }
    const auto X = as_matrix(p);
    const Eigen::Map<const Eigen::VectorXd> y(p.y.data(), static_cast<Eigen::Index>(p.y.size()));
    const double n = static_cast<double>(p.rows());
    const auto k = static_cast<Eigen::Index>(p.cols);

    Eigen::VectorXd penalty_mask = Eigen::VectorXd::Ones(k);
    penalty_mask(0) = 0.0;

    Fit out;
    out.beta.assign(p.cols, 0.0);
    Eigen::Map<Eigen::VectorXd> beta(out.beta.data(), k);
    out.objective = objective(p, out.beta, l2);

    for (int iter = 1; iter <= max_iterations; ++iter) {
        out.iterations = iter;
        const Eigen::VectorXd z = X * beta;
        const Eigen::VectorXd mu = z.unaryExpr([](double v) { return sigmoid(v); });
        const Eigen::VectorXd w = mu.array() * (1.0 - mu.array());
        Eigen::VectorXd g = X.transpose() * (y - mu) / n;
        g.array() -= l2 * penalty_mask.array() * beta.array();
        Eigen::MatrixXd info = X.transpose() * w.asDiagonal() * X / n;
        info.diagonal().array() += l2 * penalty_mask.array() + 1e-12;
        const Eigen::VectorXd step = info.ldlt().solve(g);

        const Eigen::VectorXd start = beta;
        double scale = 1.0;
        double next = out.objective;
        bool improved = false;
        for (int halving = 0; halving < 40; ++halving) {
            beta = start + scale * step;
            next = objective(p, out.beta, l2);
            if (std::isfinite(next) && next >= out.objective) {
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if (!improved) {
            beta = start;
            out.converged = true;
            break;
        }
        const double gain = next - out.objective;
        out.objective = next;
        if (gain < tolerance) {
            out.converged = true;
            break;
        }
    }
    return out;
}

} // namespace smartalert::logistic
