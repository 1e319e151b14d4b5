#pragma once

/** @file
 * Single-input/single-output LTI systems: transfer functions, state-space
 * realizations, interconnection, discretization and frequency response.
 *
 * State-space objects carry general B, C, D dimensions so the simulators can
 * drive one realization with several exogenous channels; the interconnection
 * operators (feedback, inverse) are defined for the SISO case only.
 */

#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cloopid/linalg.hpp"

namespace cloopid {

/// Poles with real part >= -kStabilityTolerance (continuous) or magnitude
/// >= 1 - kStabilityTolerance (discrete) are classified unstable.
inline constexpr double kStabilityTolerance = 1e-9;

class TimeDomain {
public:
    static constexpr TimeDomain continuous() { return TimeDomain(0.0); }
    static TimeDomain discrete(double sample_period)
    {
        if (!(sample_period > 0.0)) throw std::invalid_argument("sample period must be positive");
        return TimeDomain(sample_period);
    }

    constexpr bool is_discrete() const { return sample_period_ > 0.0; }
    constexpr double sample_period() const { return sample_period_; }
    constexpr bool operator==(const TimeDomain&) const = default;

private:
    constexpr explicit TimeDomain(double ts) : sample_period_(ts) {}
    double sample_period_;
};

inline void require_same_domain(const TimeDomain& a, const TimeDomain& b)
{
    if (!(a == b)) throw std::invalid_argument("systems live in different time domains");
}

/// Rational SISO system num/den in descending powers of s (continuous) or z (discrete).
class TransferFunction {
public:
    TransferFunction(Poly num, Poly den, TimeDomain domain = TimeDomain::continuous())
        : num_(poly::strip_leading_zeros(std::move(num))), den_(poly::strip_leading_zeros(std::move(den))),
          domain_(domain)
    {
        if (den_.size() == 1 && den_[0] == 0.0) throw std::invalid_argument("denominator is identically zero");
    }

    static TransferFunction gain(double k, TimeDomain domain = TimeDomain::continuous())
    {
        return TransferFunction({k}, {1.0}, domain);
    }

    const Poly& num() const { return num_; }
    const Poly& den() const { return den_; }
    const TimeDomain& domain() const { return domain_; }
    int order() const { return static_cast<int>(den_.size()) - 1; }
    bool is_proper() const { return num_.size() <= den_.size(); }

    /// Copy with the leading denominator coefficient scaled to one.
    TransferFunction normalized() const
    {
        const double lead = den_.front();
        return TransferFunction(poly::scale(num_, 1.0 / lead), poly::scale(den_, 1.0 / lead), domain_);
    }

private:
    Poly num_;
    Poly den_;
    TimeDomain domain_;
};

/// gain * prod(x - z_i) / prod(x - p_i); complex roots must come in conjugate pairs.
inline TransferFunction from_zpk(std::span<const Complex> zeros, std::span<const Complex> poles, double gain,
                                 TimeDomain domain = TimeDomain::continuous())
{
    return TransferFunction(poly::from_roots(zeros, gain), poly::from_roots(poles), domain);
}

/// (A, B, C, D) realization. SISO unless noted otherwise.
struct StateSpace {
    MatrixXd A;
    MatrixXd B;
    MatrixXd C;
    MatrixXd D;
    TimeDomain domain = TimeDomain::continuous();

    StateSpace() : A(0, 0), B(0, 1), C(1, 0), D(MatrixXd::Zero(1, 1)) {}

    StateSpace(MatrixXd a, MatrixXd b, MatrixXd c, MatrixXd d, TimeDomain dom = TimeDomain::continuous())
        : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)), domain(dom)
    {
        const auto n = A.rows();
        if (A.cols() != n || B.rows() != n || C.cols() != n || D.rows() != C.rows() || D.cols() != B.cols())
            throw std::invalid_argument("inconsistent state-space dimensions");
    }

    static StateSpace gain(double k, TimeDomain dom = TimeDomain::continuous())
    {
        return StateSpace(MatrixXd(0, 0), MatrixXd(0, 1), MatrixXd(1, 0), MatrixXd::Constant(1, 1, k), dom);
    }

    Eigen::Index states() const { return A.rows(); }
    Eigen::Index inputs() const { return B.cols(); }
    Eigen::Index outputs() const { return C.rows(); }
    bool is_siso() const { return inputs() == 1 && outputs() == 1; }
    double feedthrough() const { return D(0, 0); }
};

struct FrequencyResponse {
    std::vector<double> omega;
    std::vector<Complex> value;

    std::vector<double> magnitude() const
    {
        std::vector<double> out(value.size());
        for (std::size_t i = 0; i < value.size(); ++i) out[i] = std::abs(value[i]);
        return out;
    }

    std::vector<double> phase_deg() const
    {
        std::vector<double> out(value.size());
        for (std::size_t i = 0; i < value.size(); ++i) out[i] = std::arg(value[i]) * 180.0 / std::numbers::pi;
        return out;
    }
};

inline void require_siso(const StateSpace& sys, const char* what)
{
    if (!sys.is_siso()) throw std::invalid_argument(std::string(what) + " requires a SISO system");
}

// ---------------------------------------------------------------------------
// Conversions

/// Controllable canonical realization: the first row of A holds the negated
/// normalized denominator coefficients and B = e1.
inline StateSpace tf_to_ss(const TransferFunction& tf)
{
    if (!tf.is_proper()) throw std::invalid_argument("improper transfer function has no state-space realization");
    const TransferFunction g = tf.normalized();
    const auto n = static_cast<Eigen::Index>(g.order());
    Poly b(n + 1 - g.num().size(), 0.0);
    b.insert(b.end(), g.num().begin(), g.num().end());
    const Poly& a = g.den();

    MatrixXd A = MatrixXd::Zero(n, n);
    MatrixXd B = MatrixXd::Zero(n, 1);
    MatrixXd C(1, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        A(0, j) = -a[j + 1];
        C(0, j) = b[j + 1] - a[j + 1] * b[0];
    }
    for (Eigen::Index i = 1; i < n; ++i) A(i, i - 1) = 1.0;
    if (n > 0) B(0, 0) = 1.0;
    return StateSpace(std::move(A), std::move(B), std::move(C), MatrixXd::Constant(1, 1, b[0]), tf.domain());
}

/// C (xI - A)^-1 B + D as a coefficient ratio. Uses the rank-one determinant
/// identity det(xI - A + g B C) = det(xI - A) + g C adj(xI - A) B, with g chosen
/// so that g B C is commensurate with A.
inline TransferFunction ss_to_tf(const StateSpace& ss)
{
    require_siso(ss, "ss_to_tf");
    const Poly den = characteristic_polynomial(ss.A);
    if (ss.states() == 0) return TransferFunction({ss.feedthrough()}, {1.0}, ss.domain);

    const MatrixXd bc = ss.B * ss.C;
    const double bc_norm = bc.norm();
    Poly num(den.size(), 0.0);
    if (bc_norm > 0.0) {
        const double a_norm = ss.A.norm();
        const double g = a_norm > 0.0 ? a_norm / bc_norm : 1.0;
        const Poly shifted = characteristic_polynomial(ss.A - g * bc);
        for (std::size_t i = 0; i < den.size(); ++i) num[i] = (shifted[i] - den[i]) / g;
        num[0] = 0.0;  // exact: the update never touches the monic leading term
    }
    for (std::size_t i = 0; i < den.size(); ++i) num[i] += ss.feedthrough() * den[i];
    return TransferFunction(num, den, ss.domain);
}

// ---------------------------------------------------------------------------
// Poles and stability

inline std::vector<Complex> poles(const TransferFunction& tf) { return roots(tf.den()); }
inline std::vector<Complex> poles(const StateSpace& ss) { return sorted_eigenvalues(ss.A); }

inline bool is_stable_pole_set(std::span<const Complex> p, const TimeDomain& domain)
{
    for (const Complex& z : p) {
        if (domain.is_discrete()) {
            if (std::abs(z) >= 1.0 - kStabilityTolerance) return false;
        } else if (z.real() >= -kStabilityTolerance) {
            return false;
        }
    }
    return true;
}

inline bool is_stable(const TransferFunction& tf) { return is_stable_pole_set(poles(tf), tf.domain()); }
inline bool is_stable(const StateSpace& ss) { return is_stable_pole_set(poles(ss), ss.domain); }

/// Largest real part (continuous) or largest magnitude minus one (discrete);
/// negative means stable. Empty systems report -inf.
inline double stability_margin(const StateSpace& ss)
{
    double worst = -std::numeric_limits<double>::infinity();
    for (const Complex& z : poles(ss)) worst = std::max(worst, ss.domain.is_discrete() ? std::abs(z) - 1.0 : z.real());
    return worst;
}

// ---------------------------------------------------------------------------
// Interconnection

enum class FeedbackSign { negative = -1, positive = 1 };

/// y = b(a(u)). Valid for any compatible input/output dimensions.
inline StateSpace series(const StateSpace& a, const StateSpace& b)
{
    require_same_domain(a.domain, b.domain);
    if (a.outputs() != b.inputs()) throw std::invalid_argument("series: dimension mismatch");
    const auto na = a.states();
    const auto nb = b.states();
    MatrixXd A = MatrixXd::Zero(na + nb, na + nb);
    A.topLeftCorner(na, na) = a.A;
    A.bottomLeftCorner(nb, na) = b.B * a.C;
    A.bottomRightCorner(nb, nb) = b.A;
    MatrixXd B(na + nb, a.inputs());
    B << a.B, b.B * a.D;
    MatrixXd C(b.outputs(), na + nb);
    C << b.D * a.C, b.C;
    return StateSpace(std::move(A), std::move(B), std::move(C), b.D * a.D, a.domain);
}

/// y = a(u) + b(u).
inline StateSpace parallel(const StateSpace& a, const StateSpace& b)
{
    require_same_domain(a.domain, b.domain);
    if (a.inputs() != b.inputs() || a.outputs() != b.outputs()) throw std::invalid_argument("parallel: dimension mismatch");
    const auto na = a.states();
    const auto nb = b.states();
    MatrixXd A = MatrixXd::Zero(na + nb, na + nb);
    A.topLeftCorner(na, na) = a.A;
    A.bottomRightCorner(nb, nb) = b.A;
    MatrixXd B(na + nb, a.inputs());
    B << a.B, b.B;
    MatrixXd C(a.outputs(), na + nb);
    C << a.C, b.C;
    return StateSpace(std::move(A), std::move(B), std::move(C), a.D + b.D, a.domain);
}

inline StateSpace scale(StateSpace sys, double k)
{
    sys.C *= k;
    sys.D *= k;
    return sys;
}

/// Inverse of a biproper SISO system.
inline StateSpace inverse(const StateSpace& sys)
{
    require_siso(sys, "inverse");
    const double d = sys.feedthrough();
    if (std::abs(d) < 1e-14) throw std::invalid_argument("inverse: system has no direct feedthrough");
    return StateSpace(sys.A - sys.B * sys.C / d, sys.B / d, -sys.C / d, MatrixXd::Constant(1, 1, 1.0 / d), sys.domain);
}

/// forward / (1 -+ forward * backward) with the reference entering at the
/// summing junction in front of `forward`; output is the forward output.
inline StateSpace feedback(const StateSpace& forward, const StateSpace& backward,
                           FeedbackSign sign = FeedbackSign::negative)
{
    require_siso(forward, "feedback");
    require_siso(backward, "feedback");
    require_same_domain(forward.domain, backward.domain);
    const double s = static_cast<double>(static_cast<int>(sign));
    const double d1 = forward.feedthrough();
    const double d2 = backward.feedthrough();
    const double loop = 1.0 - s * d1 * d2;
    if (std::abs(loop) < 1e-12) throw std::invalid_argument("feedback: singular algebraic loop");

    const auto n1 = forward.states();
    const auto n2 = backward.states();
    const auto n = n1 + n2;
    // y1 = cy x + dy r
    MatrixXd cy(1, n);
    cy << forward.C / loop, s * d1 * backward.C / loop;
    const double dy = d1 / loop;
    // u1 = r + s y2 = cu x + du r
    MatrixXd cu = s * d2 * cy;
    cu.rightCols(n2) += s * backward.C;
    const double du = 1.0 + s * d2 * dy;

    MatrixXd A = MatrixXd::Zero(n, n);
    A.topLeftCorner(n1, n1) = forward.A;
    A.bottomRightCorner(n2, n2) = backward.A;
    A.topRows(n1) += forward.B * cu;
    A.bottomRows(n2) += backward.B * cy;
    MatrixXd B(n, 1);
    B << forward.B * du, backward.B * dy;
    return StateSpace(std::move(A), std::move(B), std::move(cy), MatrixXd::Constant(1, 1, dy), forward.domain);
}

// ---------------------------------------------------------------------------
// Discretization and simulation

enum class Hold { zoh, foh };

/// FOH equivalent together with the map from the first input sample to the
/// initial state: the realization's state is xi = x - G2 u, so a physical
/// zero initial state corresponds to xi0 = -G2 u0.
struct FohDiscretization {
    StateSpace system;
    MatrixXd gamma2;

    VectorXd initial_state(const VectorXd& first_input) const { return -gamma2 * first_input; }
};

inline FohDiscretization discretize_foh(const StateSpace& sys, double sample_period)
{
    if (sys.domain.is_discrete()) throw std::invalid_argument("discretize: system is already discrete");
    if (!(sample_period > 0.0)) throw std::invalid_argument("discretize: sample period must be positive");
    const auto n = sys.states();
    const auto m = sys.inputs();
    const TimeDomain dom = TimeDomain::discrete(sample_period);
    if (n == 0) return {StateSpace(sys.A, sys.B, sys.C, sys.D, dom), MatrixXd(0, m)};

    MatrixXd M = MatrixXd::Zero(n + 2 * m, n + 2 * m);
    M.topLeftCorner(n, n) = sys.A * sample_period;
    M.block(0, n, n, m) = sys.B * sample_period;
    M.block(n, n + m, m, m) = MatrixXd::Identity(m, m);
    const MatrixXd E = expm(M);
    const MatrixXd phi = E.topLeftCorner(n, n);
    const MatrixXd gamma1 = E.block(0, n, n, m);
    const MatrixXd gamma2 = E.block(0, n + m, n, m);
    return {StateSpace(phi, phi * gamma2 + gamma1 - gamma2, sys.C, sys.D + sys.C * gamma2, dom), gamma2};
}

/// Exact discretization for piecewise-constant (ZOH) or piecewise-linear (FOH)
/// inputs. The FOH realization has a direct feedthrough C G2 even for strictly
/// proper systems; see FohDiscretization for its initial-state convention.
inline StateSpace discretize(const StateSpace& sys, double sample_period, Hold hold)
{
    if (hold == Hold::foh) return discretize_foh(sys, sample_period).system;
    if (sys.domain.is_discrete()) throw std::invalid_argument("discretize: system is already discrete");
    if (!(sample_period > 0.0)) throw std::invalid_argument("discretize: sample period must be positive");
    const auto n = sys.states();
    const auto m = sys.inputs();
    const TimeDomain dom = TimeDomain::discrete(sample_period);
    if (n == 0) return StateSpace(sys.A, sys.B, sys.C, sys.D, dom);
    MatrixXd M = MatrixXd::Zero(n + m, n + m);
    M.topLeftCorner(n, n) = sys.A * sample_period;
    M.topRightCorner(n, m) = sys.B * sample_period;
    const MatrixXd E = expm(M);
    return StateSpace(E.topLeftCorner(n, n), E.topRightCorner(n, m), sys.C, sys.D, dom);
}

/// Discrete-time response from zero (or given) initial state. `input` has one
/// row per sample and one column per input channel; the result has one
/// column per output channel.
inline MatrixXd lsim(const StateSpace& sys, const MatrixXd& input, const VectorXd* x0 = nullptr)
{
    if (!sys.domain.is_discrete()) throw std::invalid_argument("lsim: discretize the system first");
    if (input.cols() != sys.inputs()) throw std::invalid_argument("lsim: input channel count mismatch");
    const auto n = sys.states();
    const auto m = sys.inputs();
    const auto p = sys.outputs();
    const auto steps = input.rows();
    MatrixXd out(steps, p);
    VectorXd x = x0 ? *x0 : VectorXd::Zero(n);
    VectorXd next(n);
    VectorXd u(m);
    for (Eigen::Index k = 0; k < steps; ++k) {
        u = input.row(k).transpose();
        out.row(k) = (sys.C * x + sys.D * u).transpose();
        next.noalias() = sys.A * x;
        next.noalias() += sys.B * u;
        x.swap(next);
    }
    return out;
}

/// Response of a continuous system to sampled inputs under the given hold,
/// starting from a zero physical state.
inline MatrixXd simulate_held(const StateSpace& sys, double sample_period, Hold hold, const MatrixXd& input)
{
    if (hold == Hold::zoh) return lsim(discretize(sys, sample_period, Hold::zoh), input);
    const FohDiscretization foh = discretize_foh(sys, sample_period);
    if (input.rows() == 0) return MatrixXd(0, sys.outputs());
    const VectorXd x0 = foh.initial_state(input.row(0).transpose());
    return lsim(foh.system, input, &x0);
}

// ---------------------------------------------------------------------------
// Frequency response

inline Complex contour_point(const TimeDomain& domain, double omega)
{
    if (domain.is_discrete()) return std::polar(1.0, omega * domain.sample_period());
    return {0.0, omega};
}

inline constexpr double kContourPoleDistance = 1e-12;

inline FrequencyResponse freq_response(const TransferFunction& tf, std::span<const double> omega)
{
    FrequencyResponse fr;
    const auto p = poles(tf);
    for (double w : omega) {
        if (!(w > 0.0)) throw std::invalid_argument("freq_response: frequencies must be positive");
        if (!fr.omega.empty() && w <= fr.omega.back()) throw std::invalid_argument("freq_response: grid must increase");
        const Complex z = contour_point(tf.domain(), w);
        bool on_pole = false;
        for (const Complex& pole : p) on_pole = on_pole || std::abs(pole - z) < kContourPoleDistance;
        fr.omega.push_back(w);
        if (on_pole) {
            fr.value.emplace_back(std::numeric_limits<double>::infinity(), 0.0);
        } else {
            fr.value.push_back(poly::evaluate_accurate(tf.num(), z) / poly::evaluate_accurate(tf.den(), z));
        }
    }
    return fr;
}

/// Evaluates C (zI - A)^-1 B + D with a pivoted LU solve per frequency.
inline FrequencyResponse freq_response(const StateSpace& ss, std::span<const double> omega)
{
    require_siso(ss, "freq_response");
    FrequencyResponse fr;
    const auto n = ss.states();
    const Eigen::MatrixXcd a = ss.A.cast<Complex>();
    const Eigen::VectorXcd b = ss.B.col(0).cast<Complex>();
    const Eigen::RowVectorXcd c = ss.C.row(0).cast<Complex>();
    const auto p = poles(ss);
    for (double w : omega) {
        if (!(w > 0.0)) throw std::invalid_argument("freq_response: frequencies must be positive");
        if (!fr.omega.empty() && w <= fr.omega.back()) throw std::invalid_argument("freq_response: grid must increase");
        const Complex z = contour_point(ss.domain, w);
        bool on_pole = false;
        for (const Complex& pole : p) on_pole = on_pole || std::abs(pole - z) < kContourPoleDistance;
        fr.omega.push_back(w);
        if (on_pole) {
            fr.value.emplace_back(std::numeric_limits<double>::infinity(), 0.0);
            continue;
        }
        Complex g = ss.feedthrough();
        if (n > 0) {
            const Eigen::MatrixXcd resolvent = z * Eigen::MatrixXcd::Identity(n, n) - a;
            g += (c * resolvent.partialPivLu().solve(b))(0);
        }
        fr.value.push_back(g);
    }
    return fr;
}

/// `points` log-spaced frequencies on [lo, hi].
inline std::vector<double> logspace(double lo, double hi, int points)
{
    if (!(lo > 0.0) || !(hi > lo) || points < 2) throw std::invalid_argument("logspace: need 0 < lo < hi and points >= 2");
    std::vector<double> out(points);
    const double a = std::log10(lo);
    const double b = std::log10(hi);
    for (int i = 0; i < points; ++i) out[i] = std::pow(10.0, a + (b - a) * i / (points - 1));
    out.front() = lo;
    out.back() = hi;
    return out;
}

// ---------------------------------------------------------------------------
// Pole-zero cancellation

/// Invariant zeros of a SISO realization: finite generalized eigenvalues of
/// the Rosenbrock pencil ([A B; C D], [I 0; 0 0]).
inline std::vector<Complex> zeros(const StateSpace& ss)
{
    require_siso(ss, "zeros");
    const auto n = ss.states();
    std::vector<Complex> out;
    if (n == 0) return out;
    MatrixXd pencil_a(n + 1, n + 1);
    pencil_a << ss.A, ss.B, ss.C, ss.D;
    // A diagonal similarity leaves the zeros and the singular identity block
    // unchanged, and keeps large feedback gains from swamping the infinite-
    // eigenvalue test below.
    balance(pencil_a);
    MatrixXd pencil_b = MatrixXd::Zero(n + 1, n + 1);
    pencil_b.topLeftCorner(n, n).setIdentity();
    Eigen::GeneralizedEigenSolver<MatrixXd> solver(pencil_a, pencil_b, false);
    const auto& alpha = solver.alphas();
    const auto& beta = solver.betas();
    const double scale = std::max(1.0, pencil_a.norm());
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
        if (std::abs(beta(i)) > 1e-13 * scale) out.push_back(alpha(i) / beta(i));
    }
    // An eigenvalue whose magnitude dwarfs the balanced data is a numerically
    // infinite one; QZ leaves their betas near sqrt(eps) rather than at zero.
    std::erase_if(out, [&](const Complex& z) { return !std::isfinite(std::abs(z)) || std::abs(z) > 1e4 * scale; });
    return out;
}

struct UncancelledRoots {
    std::vector<Complex> poles;
    std::vector<Complex> zeros;
};

/// Poles and zeros left after pairing each zero with its nearest unused pole
/// and dropping pairs whose relative distance is below `tolerance`. Discrete
/// roots are compared at log(z)/T_s: near z = 1 the raw relative distance is
/// blind to differences in the equivalent continuous root.
inline UncancelledRoots uncancelled_roots(const StateSpace& ss, double tolerance = 1e-6)
{
    require_siso(ss, "uncancelled_roots");
    std::vector<Complex> p = poles(ss);
    std::vector<Complex> z = zeros(ss);
    std::vector<bool> pole_used(p.size(), false);
    UncancelledRoots out;
    auto location = [&](const Complex& r) {
        if (!ss.domain.is_discrete()) return r;
        return std::abs(r) > 0.0 ? std::log(r) / ss.domain.sample_period() : Complex(-1e300, 0.0);
    };
    for (const Complex& zero : z) {
        std::size_t best = p.size();
        double best_dist = std::numeric_limits<double>::infinity();
        const Complex zl = location(zero);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (pole_used[i]) continue;
            const Complex pl = location(p[i]);
            const double d = std::abs(pl - zl) / std::max({std::abs(pl), std::abs(zl), 1e-300});
            if (d < best_dist) {
                best_dist = d;
                best = i;
            }
        }
        if (best < p.size() && best_dist < tolerance) {
            pole_used[best] = true;
        } else {
            out.zeros.push_back(zero);
        }
    }
    for (std::size_t i = 0; i < p.size(); ++i)
        if (!pole_used[i]) out.poles.push_back(p[i]);
    return out;
}

/// Removes pole/zero pairs (see uncancelled_roots) and rebuilds the transfer
/// function from the surviving roots. The gain is fitted at a contour point
/// away from every root using the unreduced realization.
inline TransferFunction cancel_pole_zero_pairs(const StateSpace& ss, double tolerance = 1e-6)
{
    require_siso(ss, "cancel_pole_zero_pairs");
    if (ss.states() == 0) return TransferFunction({ss.feedthrough()}, {1.0}, ss.domain);
    const std::vector<Complex> p = poles(ss);
    const std::vector<Complex> z = zeros(ss);
    const UncancelledRoots kept = uncancelled_roots(ss, tolerance);
    const std::vector<Complex>& kept_zeros = kept.zeros;
    const std::vector<Complex>& kept_poles = kept.poles;

    double radius = 1.0;
    for (const Complex& r : p) radius = std::max(radius, std::abs(r));
    for (const Complex& r : z) radius = std::max(radius, std::abs(r));
    // A contour point off the real axis and beyond every root.
    const Complex probe = Complex(0.3, 1.0) * (2.0 * radius);
    Complex g = ss.feedthrough();
    {
        const auto n = ss.states();
        const Eigen::MatrixXcd resolvent = probe * Eigen::MatrixXcd::Identity(n, n) - ss.A.cast<Complex>();
        g += (ss.C.row(0).cast<Complex>() * resolvent.partialPivLu().solve(ss.B.col(0).cast<Complex>()))(0);
    }
    Complex shape(1.0, 0.0);
    for (const Complex& r : kept_zeros) shape *= probe - r;
    for (const Complex& r : kept_poles) shape /= probe - r;
    const double gain = (g / shape).real();
    return TransferFunction(poly::from_roots(kept_zeros, gain), poly::from_roots(kept_poles), ss.domain);
}

} // namespace cloopid
