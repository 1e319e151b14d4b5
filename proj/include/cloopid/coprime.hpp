#pragma once

// Doubly coprime factorization of a SISO controller and the dual-Youla
// identification route built on it.
//
// For K = (A, B, C, D), a state feedback F with A + BF stable and an output
// injection L with A + LC stable give
//
//   Dt_K = (A+BF, B, F, 1)        Nt_K = (A+BF, B, C+DF, D)      K = Nt_K Dt_K^-1
//   D_K  = (A+LC, L, C, 1)        N_K  = (A+LC, B+LD, C, D)      K = D_K^-1 N_K
//   D_0  = (A+LC, -(B+LD), F, 1)  N_0  = (A+LC, L, F, 0)
//
// with D_0 Dt_K + N_0 Nt_K = 1. Every plant stabilized by K under u = -K y + r
// is P = (D_0 - Q N_K)^-1 (N_0 + Q D_K) for a stable Q, and on loop data
// alpha = D_K u + N_K y and beta_m = D_0 y - N_0 u satisfy beta_m = Q alpha.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <stdexcept>
#include <vector>

#include "cloopid/errors.hpp"
#include "cloopid/lti.hpp"
#include "cloopid/optimize.hpp"
#include "cloopid/simulate.hpp"

namespace cloopid {

/// Eigenvalue rule for the factorization gains: unstable eigenvalues are
/// mirrored, then every real part is capped at -min_decay.
struct PlacementRule {
    double min_decay = 50.0;
};

struct CoprimeFactors {
    StateSpace controller;  // balanced realization of K
    MatrixXd F;             // 1 x n
    MatrixXd L;             // n x 1

    double dk() const { return controller.feedthrough(); }
    MatrixXd a_f() const { return controller.A + controller.B * F; }
    MatrixXd a_l() const { return controller.A + L * controller.C; }

    StateSpace dt_k() const { return {a_f(), controller.B, F, MatrixXd::Ones(1, 1)}; }
    StateSpace nt_k() const { return {a_f(), controller.B, controller.C + dk() * F, controller.D}; }
    StateSpace d_k() const { return {a_l(), L, controller.C, MatrixXd::Ones(1, 1)}; }
    StateSpace n_k() const { return {a_l(), controller.B + L * dk(), controller.C, controller.D}; }
    StateSpace d_0() const { return {a_l(), -(controller.B + L * dk()), F, MatrixXd::Ones(1, 1)}; }
    StateSpace n_0() const { return {a_l(), L, F, MatrixXd::Zero(1, 1)}; }

    /// (u, y) -> (alpha, beta_m) on one shared state: the D_K/N_K pair and the
    /// D_0/N_0 pair share A + LC, and the D_0/N_0 state is the negative of it.
    StateSpace signal_map() const
    {
        const auto n = controller.states();
        MatrixXd b(n, 2);
        b << L, controller.B + L * dk();
        MatrixXd c(2, n);
        c << controller.C, -F;
        MatrixXd d(2, 2);
        d << 1.0, dk(), 0.0, 1.0;
        return {a_l(), std::move(b), std::move(c), std::move(d)};
    }
};

namespace detail {

/// Target characteristic polynomial from the placement rule.
inline Poly placed_polynomial(const MatrixXd& a, const PlacementRule& rule)
{
    std::vector<Complex> target;
    for (Complex ev : sorted_eigenvalues(a)) {
        double re = ev.real() > 0.0 ? -ev.real() : ev.real();
        re = std::min(re, -rule.min_decay);
        target.emplace_back(re, ev.imag());
    }
    Poly p = poly::from_roots(target);
    return p;
}

/// Ackermann: gain k (1 x n) with eig(a - b k) the roots of `target`.
inline MatrixXd ackermann(const MatrixXd& a, const MatrixXd& b, const Poly& target)
{
    const auto n = a.rows();
    MatrixXd ctrb(n, n);
    ctrb.col(0) = b.col(0);
    for (Eigen::Index i = 1; i < n; ++i) ctrb.col(i) = a * ctrb.col(i - 1);
    Eigen::FullPivLU<MatrixXd> lu(ctrb);
    lu.setThreshold(1e-12);
    if (lu.rank() < n) throw std::invalid_argument("realization is not controllable/observable");
    MatrixXd phi = MatrixXd::Zero(n, n);
    for (double c : target) phi = phi * a + c * MatrixXd::Identity(n, n);
    VectorXd en = VectorXd::Zero(n);
    en(n - 1) = 1.0;
    const VectorXd row = lu.solve(MatrixXd::Identity(n, n)).transpose() * en;
    return row.transpose() * phi;
}

} // namespace detail

/// Factors of K from a balanced minimal realization with F and L placed by
/// `rule`. Throws std::invalid_argument when the realization is not minimal.
inline CoprimeFactors doubly_coprime_factorize(const TransferFunction& k, const PlacementRule& rule = {})
{
    if (k.domain().is_discrete()) throw std::invalid_argument("doubly_coprime_factorize: continuous controller expected");
    StateSpace ss = tf_to_ss(k);
    const auto n = ss.states();
    CoprimeFactors f;
    if (n == 0) {
        f.controller = ss;
        f.F = MatrixXd(1, 0);
        f.L = MatrixXd(0, 1);
        return f;
    }
    const VectorXd d = balance(ss.A);
    ss.B = d.cwiseInverse().asDiagonal() * ss.B;
    ss.C = ss.C * d.asDiagonal();
    f.controller = ss;
    // A + BF = A - B(-F); A + LC = (A' + C'L')'.
    f.F = -detail::ackermann(ss.A, ss.B, detail::placed_polynomial(ss.A, rule));
    f.L = -detail::ackermann(ss.A.transpose(), ss.C.transpose(), detail::placed_polynomial(ss.A, rule)).transpose();
    return f;
}

/// F = 0, L = 0: valid only for a stable K.
inline CoprimeFactors trivial_factorization(const TransferFunction& k)
{
    if (!is_stable(k)) throw std::invalid_argument("trivial factorization needs a stable controller");
    CoprimeFactors f;
    f.controller = tf_to_ss(k);
    f.F = MatrixXd::Zero(1, f.controller.states());
    f.L = MatrixXd::Zero(f.controller.states(), 1);
    return f;
}

struct YoulaSignals {
    std::vector<double> alpha;
    std::vector<double> beta_m;
    double sample_period = 0.0;
};

/// alpha = D_K u + N_K y and beta_m = D_0 y - N_0 u from sampled data, the
/// factors discretized with FOH, zero initial state.
inline YoulaSignals youla_signals(const Dataset& data, const CoprimeFactors& factors)
{
    data.validate();
    const auto n = static_cast<Eigen::Index>(data.size());
    MatrixXd in(n, 2);
    for (Eigen::Index k = 0; k < n; ++k) {
        in(k, 0) = data.u[static_cast<std::size_t>(k)];
        in(k, 1) = data.y[static_cast<std::size_t>(k)];
    }
    const MatrixXd out = simulate_held(factors.signal_map(), data.sample_period, Hold::foh, in);
    YoulaSignals s;
    s.sample_period = data.sample_period;
    s.alpha.assign(out.col(0).data(), out.col(0).data() + n);
    s.beta_m.assign(out.col(1).data(), out.col(1).data() + n);
    return s;
}

namespace detail {

/// The signal map in the domain of `domain`: FOH-discretized when discrete.
inline StateSpace signal_map_in(const CoprimeFactors& factors, const TimeDomain& domain)
{
    const StateSpace phi = factors.signal_map();
    if (!domain.is_discrete()) return phi;
    return discretize(phi, domain.sample_period(), Hold::foh);
}

} // namespace detail

/// Q = (D_0 P - N_0)(D_K + N_K P)^-1 realized on the plant and factor states
/// (order n_K + n_P). Stable exactly when K stabilizes P.
inline StateSpace youla_parameter(const TransferFunction& plant, const CoprimeFactors& factors)
{
    const StateSpace p = tf_to_ss(plant);
    const StateSpace phi = detail::signal_map_in(factors, plant.domain());
    const auto nx = phi.states();
    const auto np = p.states();
    const MatrixXd bu = phi.B.col(0);
    const MatrixXd by = phi.B.col(1);
    const MatrixXd ca = phi.C.row(0);
    const MatrixXd cb = phi.C.row(1);
    const double dau = phi.D(0, 0), day = phi.D(0, 1), dbu = phi.D(1, 0), dby = phi.D(1, 1);
    const double dp = p.feedthrough();
    const double g = dau + day * dp;
    if (std::abs(g) < 1e-12) throw std::invalid_argument("youla_parameter: singular input map");
    // u = (alpha - ca x - day Cp xp) / g, y = Cp xp + dp u
    MatrixXd ux(1, nx + np);
    ux << -ca / g, -day * p.C / g;
    const double ua = 1.0 / g;
    MatrixXd yx = dp * ux;
    yx.rightCols(np) += p.C;
    const double ya = dp * ua;

    MatrixXd A = MatrixXd::Zero(nx + np, nx + np);
    A.topLeftCorner(nx, nx) = phi.A;
    A.bottomRightCorner(np, np) = p.A;
    A.topRows(nx) += bu * ux + by * yx;
    A.bottomRows(np) += p.B * ux;
    MatrixXd B(nx + np, 1);
    B << bu * ua + by * ya, p.B * ua;
    MatrixXd C = dbu * ux + dby * yx;
    C.leftCols(nx) += cb;
    MatrixXd D = MatrixXd::Constant(1, 1, dbu * ua + dby * ya);
    return {std::move(A), std::move(B), std::move(C), std::move(D), plant.domain()};
}

/// P_hat = (D_0 - Q N_K)^-1 (N_0 + Q D_K) as a realization of order
/// n_K + n_Q. A discrete Q is paired with the FOH-discretized factors.
/// Throws std::invalid_argument when the loop through Q is singular.
inline StateSpace recover_plant_realization(const StateSpace& q, const CoprimeFactors& factors)
{
    require_siso(q, "recover_plant");
    const StateSpace phi = detail::signal_map_in(factors, q.domain);
    const auto nx = phi.states();
    const auto nq = q.states();
    const MatrixXd bu = phi.B.col(0);
    const MatrixXd by = phi.B.col(1);
    const MatrixXd ca = phi.C.row(0);
    const MatrixXd cb = phi.C.row(1);
    const double dau = phi.D(0, 0), day = phi.D(0, 1), dbu = phi.D(1, 0), dby = phi.D(1, 1);
    const double dq = q.feedthrough();
    // beta = Q alpha solved for y.
    const double g = dby - dq * day;
    if (std::abs(g) < 1e-12) throw std::invalid_argument("recover_plant: D_0 - Q N_K has no proper inverse");
    MatrixXd yx(1, nx + nq);
    yx << (dq * ca - cb) / g, q.C / g;
    const double yu = (dq * dau - dbu) / g;
    // alpha in terms of (x, q, u)
    MatrixXd ax = day * yx;
    ax.leftCols(nx) += ca;
    const double au = dau + day * yu;

    MatrixXd A = MatrixXd::Zero(nx + nq, nx + nq);
    A.topLeftCorner(nx, nx) = phi.A;
    A.bottomRightCorner(nq, nq) = q.A;
    A.topRows(nx) += by * yx;
    A.bottomRows(nq) += q.B * ax;
    MatrixXd B(nx + nq, 1);
    B << bu + by * yu, q.B * au;
    return {std::move(A), std::move(B), std::move(yx), MatrixXd::Constant(1, 1, yu), q.domain};
}

/// recover_plant_realization followed by pole-zero cancellation at relative
/// tolerance `tolerance`. For discrete models with poles near z = 1 the
/// coefficient form loses low-frequency accuracy; evaluate the realization
/// instead when that matters.
inline TransferFunction recover_plant(const StateSpace& q, const CoprimeFactors& factors, double tolerance = 1e-6)
{
    return cancel_pole_zero_pairs(recover_plant_realization(q, factors), tolerance);
}

inline TransferFunction recover_plant(const TransferFunction& q, const CoprimeFactors& factors, double tolerance = 1e-6)
{
    return recover_plant(tf_to_ss(q), factors, tolerance);
}

// ---------------------------------------------------------------------------
// Identification of Q from (alpha, beta_m)

/// Discrete model in the scaled delta operator d = (q - 1) / h, h = T_s * scale:
///   Q(d) = (b_0 d^n + ... + b_n) / (d^n + a_1 d^(n-1) + ... + a_n).
/// With T_s small the shift-operator coefficients of such a model are
/// numerically indistinguishable from binomial ones; the delta form keeps them
/// well conditioned.
struct DeltaModel {
    Poly num;  // n + 1 coefficients
    Poly den;  // monic, n + 1 coefficients
    double sample_period = 0.0;
    double scale = 100.0;

    int order() const { return static_cast<int>(den.size()) - 1; }
    double step() const { return sample_period * scale; }

    /// x+ = x + h (A_d x + B_d alpha), beta = C_d x + D_d alpha.
    StateSpace realization() const
    {
        const StateSpace d = tf_to_ss(TransferFunction(num, den));
        const auto n = d.states();
        const double h = step();
        return {MatrixXd::Identity(n, n) + h * d.A, h * d.B, d.C, d.D, TimeDomain::discrete(sample_period)};
    }

    /// Shift-operator form. Loses low-frequency accuracy when h is small.
    TransferFunction transfer_function() const { return ss_to_tf(realization()); }

    /// Largest |z| over the model poles, from the delta-domain roots.
    double spectral_radius() const
    {
        double r = 0.0;
        for (const Complex& p : roots(den)) r = std::max(r, std::abs(1.0 + step() * p));
        return r;
    }

    std::vector<double> simulate(const std::vector<double>& alpha) const
    {
        const StateSpace d = tf_to_ss(TransferFunction(num, den));
        const auto n = d.states();
        const double h = step();
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const RowMajor a = d.A;
        const VectorXd b = d.B.col(0);
        const VectorXd c = d.C.row(0).transpose();
        const double dd = d.feedthrough();
        std::vector<double> out(alpha.size());
        VectorXd x = VectorXd::Zero(n);
        VectorXd dx(n);
        for (std::size_t k = 0; k < alpha.size(); ++k) {
            out[k] = c.dot(x) + dd * alpha[k];
            for (Eigen::Index i = 0; i < n; ++i) dx(i) = a.row(i).dot(x) + b(i) * alpha[k];
            x += h * dx;
        }
        return out;
    }
};

struct QFit {
    DeltaModel model;
    EstimationResult result;  // theta_hat = [a_1..a_n, b_0..b_n]
};

namespace detail {

inline DeltaModel delta_model_from(const VectorXd& theta, int n, double ts, double scale)
{
    DeltaModel m;
    m.sample_period = ts;
    m.scale = scale;
    m.den.assign(static_cast<std::size_t>(n + 1), 1.0);
    for (int i = 0; i < n; ++i) m.den[static_cast<std::size_t>(i + 1)] = theta(i);
    m.num.assign(theta.data() + n, theta.data() + 2 * n + 1);
    return m;
}

/// Columns [d^n x_f, d^(n-1) x_f, ..., x_f] of x filtered by 1 / den(d).
inline MatrixXd delta_filtered(const std::vector<double>& x, const Poly& den, double h)
{
    const int n = static_cast<int>(den.size()) - 1;
    MatrixXd out(static_cast<Eigen::Index>(x.size()), n + 1);
    VectorXd s = VectorXd::Zero(n);  // s(i) = d^i x_f
    for (std::size_t k = 0; k < x.size(); ++k) {
        double top = x[k];
        for (int i = 1; i <= n; ++i) top -= den[static_cast<std::size_t>(i)] * s(n - i);
        const auto row = static_cast<Eigen::Index>(k);
        out(row, 0) = top;
        for (int i = 1; i <= n; ++i) out(row, i) = s(n - i);
        for (int i = 0; i < n - 1; ++i) s(i) += h * s(i + 1);
        if (n > 0) s(n - 1) += h * top;
    }
    return out;
}

/// Steiglitz-McBride iterations in the delta domain, starting from the
/// prefilter (d + 1)^n. Returns [a_1..a_n, b_0..b_n].
inline VectorXd steiglitz_mcbride(const YoulaSignals& s, int n, double scale, int iterations = 30)
{
    const double h = s.sample_period * scale;
    Poly den = poly::from_roots(std::vector<Complex>(static_cast<std::size_t>(n), Complex(-1.0, 0.0)));
    VectorXd theta = VectorXd::Constant(2 * n + 1, std::numeric_limits<double>::quiet_NaN());
    for (int it = 0; it < iterations; ++it) {
        const MatrixXd bf = delta_filtered(s.beta_m, den, h);
        const MatrixXd af = delta_filtered(s.alpha, den, h);
        const auto rows = bf.rows();
        MatrixXd reg(rows, 2 * n + 1);
        for (int i = 0; i < n; ++i) reg.col(i) = -bf.col(i + 1);
        reg.rightCols(n + 1) = af;
        VectorXd col_scale = reg.colwise().norm().transpose();
        for (Eigen::Index i = 0; i < col_scale.size(); ++i)
            if (col_scale(i) == 0.0) col_scale(i) = 1.0;
        const MatrixXd scaled = reg * col_scale.cwiseInverse().asDiagonal();
        const VectorXd sol = scaled.colPivHouseholderQr().solve(bf.col(0)).cwiseQuotient(col_scale);
        Poly next(static_cast<std::size_t>(n + 1), 1.0);
        for (int i = 0; i < n; ++i) next[static_cast<std::size_t>(i + 1)] = sol(i);
        const DeltaModel candidate = delta_model_from(sol, n, s.sample_period, scale);
        if (!sol.allFinite() || candidate.spectral_radius() >= 1.0) break;
        const double change = (sol - theta).norm() / std::max(1e-300, sol.norm());
        theta = sol;
        den = next;
        if (it > 0 && change < 1e-12) break;
    }
    if (theta.allFinite()) return theta;
    // Degenerate regressors (e.g. a static map): keep the stable prefilter and
    // fit the numerator alone.
    const MatrixXd af = delta_filtered(s.alpha, den, h);
    const VectorXd beta = Eigen::Map<const VectorXd>(s.beta_m.data(), static_cast<Eigen::Index>(s.beta_m.size()));
    for (int i = 0; i < n; ++i) theta(i) = den[static_cast<std::size_t>(i + 1)];
    theta.tail(n + 1) = af.completeOrthogonalDecomposition().solve(beta);
    if (!theta.allFinite()) throw std::runtime_error("identify_q: initialization failed");
    return theta;
}

} // namespace detail

/// Output-error objective for Q: sum of squared simulation errors, or the
/// penalty kPenaltyScale * (1 + spectral radius) for an unstable model.
inline double q_output_error(const VectorXd& theta, int n, const YoulaSignals& s, double scale)
{
    const DeltaModel m = detail::delta_model_from(theta, n, s.sample_period, scale);
    const double radius = m.spectral_radius();
    if (!(radius < 1.0 - kStabilityTolerance)) return kPenaltyScale * (1.0 + radius);
    const auto beta = m.simulate(s.alpha);
    double sum = 0.0;
    for (std::size_t k = 0; k < beta.size(); ++k) sum += (s.beta_m[k] - beta[k]) * (s.beta_m[k] - beta[k]);
    return sum;
}

/// Stable order-`order` output-error model from alpha to beta_m:
/// Steiglitz-McBride initialization, swarm search around it, simplex polish.
/// Search bounds default to theta0 +- (|theta0| + 1) per coordinate.
inline QFit identify_q(const YoulaSignals& signals, int order, OptimizerConfig opt = {}, double scale = 100.0)
{
    if (order < 1) throw std::invalid_argument("identify_q: order must be >= 1");
    if (signals.alpha.size() != signals.beta_m.size() || signals.alpha.size() < 2)
        throw std::invalid_argument("identify_q: signal lengths differ");
    const auto [lo, hi] = std::minmax_element(signals.alpha.begin(), signals.alpha.end());
    if (*lo == *hi) throw std::invalid_argument("identify_q: alpha is constant");

    const VectorXd theta0 = detail::steiglitz_mcbride(signals, order, scale);
    if (opt.lower.size() == 0) {
        const VectorXd width = theta0.cwiseAbs().array() + 1.0;
        opt.lower = theta0 - width;
        opt.upper = theta0 + width;
    }
    if (!opt.hint) opt.hint = theta0;
    auto f = [&](const VectorXd& theta) { return q_output_error(theta, order, signals, scale); };
    QFit fit;
    fit.result = pso_minimize(f, opt);
    fit.result.method = Method::dual_youla;
    if (is_penalty(fit.result.cost)) throw NoStableCandidateError("identify_q: no stable model found");
    fit.model = detail::delta_model_from(fit.result.theta_hat, order, signals.sample_period, scale);
    return fit;
}

} // namespace cloopid
