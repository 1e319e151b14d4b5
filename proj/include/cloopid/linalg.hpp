#pragma once

// Dense numerical kernels shared by the LTI layer: polynomial arithmetic,
// characteristic polynomials, companion-matrix roots, diagonal balancing and
// the matrix exponential.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace cloopid {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Complex = std::complex<double>;

/// Coefficients in descending powers: {c0, c1, ..., cn} is c0 x^n + ... + cn.
using Poly = std::vector<double>;

namespace poly {

inline Poly strip_leading_zeros(Poly p)
{
    auto first = std::find_if(p.begin(), p.end(), [](double c) { return c != 0.0; });
    if (first == p.end()) return {0.0};
    p.erase(p.begin(), first);
    return p;
}

inline int degree(const Poly& p)
{
    return static_cast<int>(strip_leading_zeros(p).size()) - 1;
}

inline Poly multiply(std::span<const double> a, std::span<const double> b)
{
    if (a.empty() || b.empty()) return {0.0};
    Poly out(a.size() + b.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

inline Poly add(std::span<const double> a, std::span<const double> b)
{
    const std::size_t n = std::max(a.size(), b.size());
    Poly out(n, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) out[n - a.size() + i] += a[i];
    for (std::size_t i = 0; i < b.size(); ++i) out[n - b.size() + i] += b[i];
    return out;
}

inline Poly scale(Poly p, double s)
{
    for (auto& c : p) c *= s;
    return p;
}

template <typename T>
T evaluate(std::span<const double> p, T x)
{
    T acc{0.0};
    for (double c : p) acc = acc * x + c;
    return acc;
}

namespace detail {

struct DoubleDouble {
    double hi = 0.0;
    double lo = 0.0;
};

inline DoubleDouble two_sum(double a, double b)
{
    const double s = a + b;
    const double bb = s - a;
    return {s, (a - (s - bb)) + (b - bb)};
}

inline DoubleDouble renormalize(double hi, double lo)
{
    const double s = hi + lo;
    return {s, lo - (s - hi)};
}

inline DoubleDouble operator+(DoubleDouble x, DoubleDouble y)
{
    const DoubleDouble s = two_sum(x.hi, y.hi);
    return renormalize(s.hi, s.lo + x.lo + y.lo);
}

inline DoubleDouble operator*(DoubleDouble x, double y)
{
    const double p = x.hi * y;
    const double e = std::fma(x.hi, y, -p);
    return renormalize(p, e + x.lo * y);
}

inline DoubleDouble operator-(DoubleDouble x)
{
    return {-x.hi, -x.lo};
}

} // namespace detail

/// Horner evaluation carried in double-double precision. Discrete models
/// sampled far above their bandwidth have all roots clustered near z = 1,
/// where plain Horner loses every significant digit at low frequency.
inline Complex evaluate_accurate(std::span<const double> p, Complex z)
{
    using detail::DoubleDouble;
    DoubleDouble re;
    DoubleDouble im;
    for (double c : p) {
        const DoubleDouble next_re = re * z.real() + -(im * z.imag());
        const DoubleDouble next_im = re * z.imag() + im * z.real();
        re = next_re + DoubleDouble{c, 0.0};
        im = next_im;
    }
    return {re.hi + re.lo, im.hi + im.lo};
}

/// Real polynomial with the given roots, leading coefficient `lead`.
/// Complex roots are expected in conjugate pairs; imaginary round-off is dropped.
inline Poly from_roots(std::span<const Complex> roots, double lead = 1.0)
{
    std::vector<Complex> acc{Complex(lead, 0.0)};
    for (const Complex& r : roots) {
        std::vector<Complex> next(acc.size() + 1, Complex(0.0, 0.0));
        for (std::size_t i = 0; i < acc.size(); ++i) {
            next[i] += acc[i];
            next[i + 1] -= acc[i] * r;
        }
        acc = std::move(next);
    }
    Poly out(acc.size());
    std::transform(acc.begin(), acc.end(), out.begin(), [](Complex c) { return c.real(); });
    return out;
}

} // namespace poly

/// Parlett-Reinsch diagonal balancing. Returns d such that diag(d)^-1 A diag(d)
/// has rows and columns of comparable norm; `a` is overwritten with that matrix.
inline VectorXd balance(MatrixXd& a)
{
    constexpr double radix = 2.0;
    constexpr double radix2 = radix * radix;
    const Eigen::Index n = a.rows();
    VectorXd d = VectorXd::Ones(n);
    bool done = false;
    int sweeps = 0;
    while (!done && sweeps++ < 100) {
        done = true;
        for (Eigen::Index i = 0; i < n; ++i) {
            double c = 0.0;
            double r = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                c += std::abs(a(j, i));
                r += std::abs(a(i, j));
            }
            if (c == 0.0 || r == 0.0) continue;
            const double s = c + r;
            double f = 1.0;
            double g = r / radix;
            while (c < g) {
                f *= radix;
                c *= radix2;
            }
            g = r * radix;
            while (c > g) {
                f /= radix;
                c /= radix2;
            }
            if ((c + r) / f < 0.95 * s) {
                done = false;
                d(i) *= f;
                a.row(i) /= f;
                a.col(i) *= f;
            }
        }
    }
    return d;
}

/// Eigenvalues sorted by real part descending (imaginary part descending on ties).
inline std::vector<Complex> sorted_eigenvalues(const MatrixXd& m)
{
    std::vector<Complex> out;
    if (m.rows() == 0) return out;
    MatrixXd work = m;
    balance(work);
    Eigen::EigenSolver<MatrixXd> solver(work, /*computeEigenvectors=*/false);
    if (solver.info() != Eigen::Success) throw std::runtime_error("eigenvalue iteration did not converge");
    const auto& ev = solver.eigenvalues();
    out.assign(ev.data(), ev.data() + ev.size());
    std::sort(out.begin(), out.end(), [](const Complex& a, const Complex& b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
    return out;
}

/// Roots of a real polynomial from the eigenvalues of its balanced companion matrix.
inline std::vector<Complex> roots(const Poly& p)
{
    Poly q = poly::strip_leading_zeros(p);
    std::vector<Complex> zeros_at_origin;
    while (q.size() > 1 && q.back() == 0.0) {
        q.pop_back();
        zeros_at_origin.emplace_back(0.0, 0.0);
    }
    const auto n = static_cast<Eigen::Index>(q.size()) - 1;
    std::vector<Complex> out;
    if (n > 0) {
        MatrixXd companion = MatrixXd::Zero(n, n);
        for (Eigen::Index j = 0; j < n; ++j) companion(0, j) = -q[j + 1] / q[0];
        for (Eigen::Index i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
        out = sorted_eigenvalues(companion);
    }
    out.insert(out.end(), zeros_at_origin.begin(), zeros_at_origin.end());
    std::sort(out.begin(), out.end(), [](const Complex& a, const Complex& b) {
        if (a.real() != b.real()) return a.real() > b.real();
        return a.imag() > b.imag();
    });
    return out;
}

/// det(xI - A) via orthogonal reduction to upper Hessenberg form followed by
/// the Hessenberg determinant recurrence.
inline Poly characteristic_polynomial(const MatrixXd& a)
{
    const Eigen::Index n = a.rows();
    if (n == 0) return {1.0};
    MatrixXd h = n > 2 ? MatrixXd(Eigen::HessenbergDecomposition<MatrixXd>(a).matrixH()) : a;
    // p[i] is the characteristic polynomial of the leading i x i block.
    std::vector<Poly> p;
    p.reserve(n + 1);
    p.push_back({1.0});
    for (Eigen::Index i = 1; i <= n; ++i) {
        const Eigen::Index ii = i - 1;
        const double diag[] = {1.0, -h(ii, ii)};
        Poly next = poly::multiply(diag, p[i - 1]);
        double sub = 1.0;
        for (Eigen::Index m = 1; m < i; ++m) {
            sub *= h(ii - m + 1, ii - m);
            if (sub == 0.0) break;
            const double coef = h(ii - m, ii) * sub;
            next = poly::add(next, poly::scale(p[i - m - 1], -coef));
        }
        p.push_back(std::move(next));
    }
    return p.back();
}

namespace detail {

inline double norm1(const MatrixXd& m)
{
    return m.rows() == 0 ? 0.0 : m.cwiseAbs().colwise().sum().maxCoeff();
}

inline void pade_terms(const MatrixXd& a, int degree, MatrixXd& u, MatrixXd& v)
{
    const Eigen::Index n = a.rows();
    const MatrixXd id = MatrixXd::Identity(n, n);
    const MatrixXd a2 = a * a;
    switch (degree) {
    case 3: {
        constexpr double b[] = {120.0, 60.0, 12.0, 1.0};
        u = a * (b[3] * a2 + b[1] * id);
        v = b[2] * a2 + b[0] * id;
        return;
    }
    case 5: {
        constexpr double b[] = {30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0};
        const MatrixXd a4 = a2 * a2;
        u = a * (b[5] * a4 + b[3] * a2 + b[1] * id);
        v = b[4] * a4 + b[2] * a2 + b[0] * id;
        return;
    }
    case 7: {
        constexpr double b[] = {17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0};
        const MatrixXd a4 = a2 * a2;
        const MatrixXd a6 = a4 * a2;
        u = a * (b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
        v = b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
        return;
    }
    case 9: {
        constexpr double b[] = {17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                                2162160.0,     110880.0,     3960.0,       90.0,        1.0};
        const MatrixXd a4 = a2 * a2;
        const MatrixXd a6 = a4 * a2;
        const MatrixXd a8 = a6 * a2;
        u = a * (b[9] * a8 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
        v = b[8] * a8 + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
        return;
    }
    default: {
        constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                670442572800.0,      33522128640.0,       1323241920.0,
                                40840800.0,          960960.0,            16380.0,
                                182.0,               1.0};
        const MatrixXd a4 = a2 * a2;
        const MatrixXd a6 = a4 * a2;
        u = a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * id);
        v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * id;
        return;
    }
    }
}

} // namespace detail

/// Matrix exponential by balancing, then scaling and squaring around the
/// degree-3..13 diagonal Pade approximants (Higham's 2005 selection rule).
inline MatrixXd expm(const MatrixXd& a)
{
    const Eigen::Index n = a.rows();
    if (n == 0) return MatrixXd(0, 0);
    MatrixXd work = a;
    const VectorXd d = balance(work);
    // Balancing is only worth keeping when it actually reduces the norm.
    const bool balanced = detail::norm1(work) < detail::norm1(a);
    if (!balanced) work = a;

    constexpr double theta[] = {1.495585217958292e-2, 2.539398330063230e-1, 9.504178996162932e-1,
                                2.097847961257068e0, 5.371920351148152e0};
    constexpr int degrees[] = {3, 5, 7, 9, 13};
    const double norm = detail::norm1(work);
    MatrixXd u;
    MatrixXd v;
    int squarings = 0;
    int degree = 13;
    for (int i = 0; i < 4; ++i) {
        if (norm <= theta[i]) {
            degree = degrees[i];
            break;
        }
    }
    if (degree == 13 && norm > theta[4]) {
        squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / theta[4]))));
        work /= std::ldexp(1.0, squarings);
    }
    detail::pade_terms(work, degree, u, v);
    MatrixXd result = (v - u).partialPivLu().solve(v + u);
    for (int i = 0; i < squarings; ++i) result = result * result;

    if (balanced) {
        // exp(A) = D exp(D^-1 A D) D^-1
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) result(i, j) *= d(i) / d(j);
    }
    return result;
}

} // namespace cloopid
