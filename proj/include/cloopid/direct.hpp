#pragma once

// Direct closed-loop baselines: ARX by least squares, ARMAX by Gauss-Newton,
// order selection by AIC. All polynomials share one order n and carry no
// dead-time parameter:
//
//   A(q) y = B(q) u + C(q) e,  A = 1 + a_1 q^-1 + ... + a_n q^-n,
//   B = b_1 q^-1 + ... + b_n q^-n,  C = 1 + c_1 q^-1 + ... + c_n q^-n.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cloopid/errors.hpp"
#include "cloopid/lti.hpp"
#include "cloopid/simulate.hpp"

namespace cloopid {

enum class ModelKind { arx, armax };

inline std::string to_string(ModelKind k) { return k == ModelKind::arx ? "arx" : "armax"; }

struct PolynomialModel {
    ModelKind kind = ModelKind::arx;
    std::vector<double> a;
    std::vector<double> b;
    std::vector<double> c;  // empty for ARX
    double sample_period = 0.0;

    int order() const { return static_cast<int>(a.size()); }

    /// Number of free parameters: 2n for ARX, 3n for ARMAX.
    int parameters() const { return (kind == ModelKind::arx ? 2 : 3) * order(); }

    void validate() const
    {
        const auto n = a.size();
        if (n == 0 || b.size() != n) throw std::invalid_argument("polynomial model: a and b need the same length n >= 1");
        if (kind == ModelKind::armax ? c.size() != n : !c.empty())
            throw std::invalid_argument("polynomial model: c has the wrong length");
        if (!(sample_period > 0.0)) throw std::invalid_argument("polynomial model: sample period must be positive");
    }
};

struct PolynomialFit {
    PolynomialModel model;
    double loss = 0.0;  // V = (1/N) sum e^2 over the N regression rows k = n..end
    int iterations = 0;  // Gauss-Newton steps taken (ARMAX)
    std::vector<double> loss_trace;  // V per accepted iterate, starting at the ARX fit (ARMAX)
};

/// B(q)/A(q) as a discrete transfer function in z: (b_1 z^(n-1) + ... + b_n) / (z^n + a_1 z^(n-1) + ... + a_n).
inline TransferFunction polynomial_to_tf(const PolynomialModel& m)
{
    m.validate();
    Poly num(m.b.begin(), m.b.end());
    Poly den{1.0};
    den.insert(den.end(), m.a.begin(), m.a.end());
    return TransferFunction(std::move(num), std::move(den), TimeDomain::discrete(m.sample_period));
}

namespace detail {

inline void require_direct_data(const Dataset& data, int n)
{
    if (n < 1) throw std::invalid_argument("order must be >= 1");
    data.validate();
    if (data.size() < static_cast<std::size_t>(20 * n)) throw std::invalid_argument("too few samples for the requested order");
}

/// Least squares solution of phi x = rhs by column-scaled pivoted QR.
/// Throws RankDeficientError when a scaled pivot falls below 1e-14 of the
/// largest, i.e. on exact collinearity. Noise-free data of a lower-order
/// system leave pivots near 1e-13 and get the basic solution.
inline VectorXd scaled_least_squares(const MatrixXd& phi, const VectorXd& rhs, const char* who)
{
    VectorXd scale = phi.colwise().norm().transpose();
    for (Eigen::Index i = 0; i < scale.size(); ++i)
        if (!(scale(i) > 0.0) || !std::isfinite(scale(i))) throw RankDeficientError(std::string(who) + ": regressor column is zero");
    const MatrixXd scaled = phi * scale.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(scaled);
    qr.setThreshold(1e-14);
    if (qr.rank() < scaled.cols()) throw RankDeficientError(std::string(who) + ": regressor is rank deficient");
    return qr.solve(rhs).cwiseQuotient(scale);
}

struct ArmaxState {
    std::vector<double> e;  // e[k] = 0 for k < n
    double loss = std::numeric_limits<double>::infinity();
};

/// One-step-ahead prediction errors of an ARMAX model; theta = [a, b, c].
inline ArmaxState armax_errors(const Dataset& data, int n, const VectorXd& theta)
{
    const auto len = data.size();
    ArmaxState s;
    s.e.assign(len, 0.0);
    double sum = 0.0;
    for (std::size_t k = static_cast<std::size_t>(n); k < len; ++k) {
        double v = data.y[k];
        for (int i = 1; i <= n; ++i) {
            const std::size_t j = k - static_cast<std::size_t>(i);
            v += theta(i - 1) * data.y[j] - theta(n + i - 1) * data.u[j] - theta(2 * n + i - 1) * s.e[j];
        }
        s.e[k] = v;
        sum += v * v;
    }
    s.loss = sum / static_cast<double>(len - static_cast<std::size_t>(n));
    if (!std::isfinite(s.loss)) s.loss = std::numeric_limits<double>::infinity();
    return s;
}

/// d e / d theta by the filtered recursion J[k] = phi[k] - sum c_i J[k-i],
/// phi[k] = [y[k-i], -u[k-i], -e[k-i]]. Rows k = n..end.
inline MatrixXd armax_jacobian(const Dataset& data, int n, const VectorXd& theta, const std::vector<double>& e)
{
    const auto len = data.size();
    const auto rows = static_cast<Eigen::Index>(len - static_cast<std::size_t>(n));
    MatrixXd jac = MatrixXd::Zero(rows, 3 * n);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t k = static_cast<std::size_t>(r) + static_cast<std::size_t>(n);
        for (int i = 1; i <= n; ++i) {
            const std::size_t j = k - static_cast<std::size_t>(i);
            jac(r, i - 1) = data.y[j];
            jac(r, n + i - 1) = -data.u[j];
            jac(r, 2 * n + i - 1) = -e[j];
        }
        for (int i = 1; i <= n && r - i >= 0; ++i) jac.row(r) -= theta(2 * n + i - 1) * jac.row(r - i);
    }
    return jac;
}

/// Reflects roots of z^n + c_1 z^(n-1) + ... + c_n outside the unit circle to 1 / conj(root).
inline void reflect_into_unit_disk(VectorXd& theta, int n)
{
    Poly c{1.0};
    for (int i = 0; i < n; ++i) c.push_back(theta(2 * n + i));
    std::vector<Complex> r = roots(c);
    bool moved = false;
    for (Complex& z : r) {
        if (std::abs(z) > 1.0) {
            z = 1.0 / std::conj(z);
            moved = true;
        }
    }
    if (!moved) return;
    const Poly fixed = poly::from_roots(r);
    for (int i = 0; i < n; ++i) theta(2 * n + i) = fixed[static_cast<std::size_t>(i + 1)];
}

} // namespace detail

/// Equation-error least squares on rows k = n..N-1. Throws RankDeficientError
/// on insufficient excitation.
inline PolynomialFit fit_arx(const Dataset& data, int n)
{
    detail::require_direct_data(data, n);
    const auto len = data.size();
    const auto rows = static_cast<Eigen::Index>(len - static_cast<std::size_t>(n));
    MatrixXd phi(rows, 2 * n);
    VectorXd target(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t k = static_cast<std::size_t>(r) + static_cast<std::size_t>(n);
        target(r) = data.y[k];
        for (int i = 1; i <= n; ++i) {
            phi(r, i - 1) = -data.y[k - static_cast<std::size_t>(i)];
            phi(r, n + i - 1) = data.u[k - static_cast<std::size_t>(i)];
        }
    }
    const VectorXd theta = detail::scaled_least_squares(phi, target, "fit_arx");
    PolynomialFit fit;
    fit.model.kind = ModelKind::arx;
    fit.model.a.assign(theta.data(), theta.data() + n);
    fit.model.b.assign(theta.data() + n, theta.data() + 2 * n);
    fit.model.sample_period = data.sample_period;
    fit.loss = (target - phi * theta).squaredNorm() / static_cast<double>(rows);
    return fit;
}

struct ArmaxOptions {
    int max_iterations = 100;
    double tolerance = 1e-10;  // relative loss decrease
    int max_halvings = 30;
};

/// Gauss-Newton prediction-error fit from the ARX solution with c = 0. Every
/// accepted iterate has C inside the unit disk and a loss no larger than the
/// previous one.
inline PolynomialFit fit_armax(const Dataset& data, int n, const ArmaxOptions& opt = {})
{
    const PolynomialFit arx = fit_arx(data, n);
    VectorXd theta = VectorXd::Zero(3 * n);
    for (int i = 0; i < n; ++i) {
        theta(i) = arx.model.a[static_cast<std::size_t>(i)];
        theta(n + i) = arx.model.b[static_cast<std::size_t>(i)];
    }
    detail::ArmaxState state = detail::armax_errors(data, n, theta);
    if (!std::isfinite(state.loss)) throw std::runtime_error("fit_armax: predictor recursion diverged");

    PolynomialFit fit;
    fit.loss_trace.push_back(state.loss);
    for (int it = 0; it < opt.max_iterations; ++it) {
        const MatrixXd jac = detail::armax_jacobian(data, n, theta, state.e);
        const Eigen::Map<const VectorXd> e(state.e.data() + n, jac.rows());
        VectorXd step;
        try {
            step = detail::scaled_least_squares(jac, -e, "fit_armax");
        } catch (const RankDeficientError&) {
            // Only c can lose rank at a white-residual fit; the ARX part already passed.
            break;
        }
        bool accepted = false;
        double scale = 1.0;
        for (int h = 0; h <= opt.max_halvings; ++h, scale *= 0.5) {
            VectorXd candidate = theta + scale * step;
            detail::reflect_into_unit_disk(candidate, n);
            detail::ArmaxState next = detail::armax_errors(data, n, candidate);
            if (next.loss <= state.loss) {
                const double decrease = (state.loss - next.loss) / std::max(state.loss, std::numeric_limits<double>::min());
                theta = candidate;
                state = std::move(next);
                accepted = true;
                fit.iterations = it + 1;
                fit.loss_trace.push_back(state.loss);
                if (decrease < opt.tolerance) it = opt.max_iterations;
                break;
            }
        }
        if (!accepted) break;
    }

    fit.model.kind = ModelKind::armax;
    fit.model.a.assign(theta.data(), theta.data() + n);
    fit.model.b.assign(theta.data() + n, theta.data() + 2 * n);
    fit.model.c.assign(theta.data() + 2 * n, theta.data() + 3 * n);
    fit.model.sample_period = data.sample_period;
    fit.loss = state.loss;
    return fit;
}

inline PolynomialFit fit_polynomial(const Dataset& data, ModelKind kind, int n)
{
    return kind == ModelKind::arx ? fit_arx(data, n) : fit_armax(data, n);
}

struct AicEntry {
    int order = 0;
    double loss = 0.0;
    double aic = 0.0;
};

struct OrderSelection {
    int best_order = 0;
    PolynomialFit best;
    std::vector<AicEntry> table;
};

/// AIC(n) = N ln V_n + 2 d_n with N the sample count and d_n = 2n (ARX) or
/// 3n (ARMAX). Ties keep the first order listed.
inline OrderSelection select_order_aic(const Dataset& data, ModelKind kind, const std::vector<int>& orders)
{
    if (orders.empty()) throw std::invalid_argument("select_order_aic: empty order range");
    const double rows = static_cast<double>(data.size());
    OrderSelection sel;
    double best = std::numeric_limits<double>::infinity();
    for (int n : orders) {
        PolynomialFit fit = fit_polynomial(data, kind, n);
        const double aic = rows * std::log(fit.loss) + 2.0 * fit.model.parameters();
        sel.table.push_back({n, fit.loss, aic});
        if (sel.table.size() == 1 || aic < best) {
            best = aic;
            sel.best_order = n;
            sel.best = std::move(fit);
        }
    }
    return sel;
}

} // namespace cloopid
