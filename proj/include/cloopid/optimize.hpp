#pragma once

// Derivative-free minimization over a box: global-best particle swarm with an
// optional Nelder-Mead polish.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cloopid/linalg.hpp"

namespace cloopid {

using Objective = std::function<double(const VectorXd&)>;

enum class Method { spem, dual_youla, arx, armax };

inline std::string to_string(Method m)
{
    switch (m) {
    case Method::spem: return "spem";
    case Method::dual_youla: return "dual_youla";
    case Method::arx: return "arx";
    case Method::armax: return "armax";
    }
    return "unknown";
}

/// Scale of the infeasibility penalty objectives return for unstable candidates.
inline constexpr double kPenaltyScale = 1e12;

/// Costs at or above this value come from the instability penalty.
inline constexpr double kPenaltyFloor = 0.5 * kPenaltyScale;

inline bool is_penalty(double cost) { return !(cost < kPenaltyFloor); }

struct NelderMeadOptions {
    std::size_t max_evals = 4000;
    double tol = 1e-10;  // simplex diameter
    /// Per-coordinate initial edge; empty means 5% of |x0_i| (or 2.5e-4 at zero).
    VectorXd step{};
};

struct OptimizerConfig {
    /// 0 selects max(50, 10 * dim).
    std::size_t swarm_size = 0;
    /// 0 selects 200 * dim.
    std::size_t max_iterations = 0;
    double inertia = 0.729;
    double cognitive = 1.49445;
    double social = 1.49445;
    VectorXd lower;
    VectorXd upper;
    std::uint64_t seed = 0;
    std::optional<NelderMeadOptions> polish = NelderMeadOptions{};
    /// Stop when the best cost improved by less than stall_tolerance (relative)
    /// over the last stall_iterations iterations. 0 iterations disables.
    std::size_t stall_iterations = 20;
    double stall_tolerance = 1e-6;
    /// Seeds 20% of the swarm within +-50% of this point.
    std::optional<VectorXd> hint;
    /// Concurrent objective evaluations per iteration; 1 keeps everything on the caller's thread.
    unsigned workers = 1;

    std::size_t dimension() const { return static_cast<std::size_t>(lower.size()); }
    std::size_t effective_swarm() const { return swarm_size ? swarm_size : std::max<std::size_t>(50, 10 * dimension()); }
    std::size_t effective_iterations() const { return max_iterations ? max_iterations : 200 * dimension(); }

    void validate() const
    {
        if (lower.size() == 0 || lower.size() != upper.size()) throw std::invalid_argument("optimizer bounds are empty or mismatched");
        for (Eigen::Index i = 0; i < lower.size(); ++i)
            if (!(lower(i) < upper(i))) throw std::invalid_argument("optimizer bounds need lo < hi");
        if (effective_swarm() < 2) throw std::invalid_argument("swarm size must be at least 2");
        if (hint && hint->size() != lower.size()) throw std::invalid_argument("hint dimension mismatch");
        if (workers < 1) throw std::invalid_argument("workers must be at least 1");
    }
};

struct EstimationResult {
    VectorXd theta_hat;
    double cost = std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
    std::vector<double> trace;  // best cost per iteration; polish result appended last
    Method method = Method::spem;
    double swarm_cost = std::numeric_limits<double>::infinity();  // before polish
};

struct NelderMeadResult {
    VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double sanitize(double v) { return std::isnan(v) ? std::numeric_limits<double>::infinity() : v; }

/// Evaluates f on every column of `points`, optionally on several threads.
/// Results are written by index, so the outcome does not depend on scheduling.
inline void evaluate_all(const Objective& f, const std::vector<VectorXd>& points, std::vector<double>& out, unsigned workers)
{
    out.resize(points.size());
    if (workers <= 1 || points.size() < 2) {
        for (std::size_t i = 0; i < points.size(); ++i) out[i] = sanitize(f(points[i]));
        return;
    }
    const unsigned count = std::min<unsigned>(workers, static_cast<unsigned>(points.size()));
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(count);
    for (unsigned w = 0; w < count; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < points.size(); i += count) out[i] = sanitize(f(points[i]));
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace detail

/// Simplex search: reflection 1, expansion 2, contraction 0.5, shrink 0.5.
/// Stops when the largest vertex distance from the best vertex (infinity norm)
/// drops below tol, or after max_evals evaluations. Ties keep the earlier
/// vertex, so a constant f returns x0.
inline NelderMeadResult nelder_mead(const Objective& f, const VectorXd& x0, const NelderMeadOptions& opt = {})
{
    const Eigen::Index n = x0.size();
    if (n == 0) throw std::invalid_argument("nelder_mead needs at least one coordinate");
    NelderMeadResult res;
    auto eval = [&](const VectorXd& x) {
        ++res.evaluations;
        return detail::sanitize(f(x));
    };

    std::vector<VectorXd> simplex(static_cast<std::size_t>(n + 1), x0);
    std::vector<double> value(static_cast<std::size_t>(n + 1));
    value[0] = eval(x0);
    for (Eigen::Index i = 0; i < n; ++i) {
        double h = opt.step.size() == n ? opt.step(i) : 0.05 * std::abs(x0(i));
        if (h == 0.0) h = 2.5e-4;
        simplex[static_cast<std::size_t>(i + 1)](i) += h;
        value[static_cast<std::size_t>(i + 1)] = eval(simplex[static_cast<std::size_t>(i + 1)]);
    }

    std::vector<std::size_t> order(simplex.size());
    auto sort_simplex = [&] {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });
        std::vector<VectorXd> s2;
        std::vector<double> v2;
        s2.reserve(order.size());
        v2.reserve(order.size());
        for (auto i : order) {
            s2.push_back(std::move(simplex[i]));
            v2.push_back(value[i]);
        }
        simplex.swap(s2);
        value.swap(v2);
    };
    auto diameter = [&] {
        double d = 0.0;
        for (std::size_t i = 1; i < simplex.size(); ++i) d = std::max(d, (simplex[i] - simplex[0]).cwiseAbs().maxCoeff());
        return d;
    };

    sort_simplex();
    const auto last = static_cast<std::size_t>(n);
    while (res.evaluations < opt.max_evals && diameter() >= opt.tol) {
        VectorXd centroid = VectorXd::Zero(n);
        for (std::size_t i = 0; i < last; ++i) centroid += simplex[i];
        centroid /= static_cast<double>(n);

        const VectorXd xr = centroid + (centroid - simplex[last]);
        const double fr = eval(xr);
        if (fr < value[0]) {
            const VectorXd xe = centroid + 2.0 * (centroid - simplex[last]);
            const double fe = eval(xe);
            if (fe < fr) {
                simplex[last] = xe;
                value[last] = fe;
            } else {
                simplex[last] = xr;
                value[last] = fr;
            }
        } else if (fr < value[last - 1]) {
            simplex[last] = xr;
            value[last] = fr;
        } else {
            bool accepted = false;
            if (fr < value[last]) {
                const VectorXd xc = centroid + 0.5 * (xr - centroid);
                const double fc = eval(xc);
                if (fc <= fr) {
                    simplex[last] = xc;
                    value[last] = fc;
                    accepted = true;
                }
            } else {
                const VectorXd xc = centroid + 0.5 * (simplex[last] - centroid);
                const double fc = eval(xc);
                if (fc < value[last]) {
                    simplex[last] = xc;
                    value[last] = fc;
                    accepted = true;
                }
            }
            if (!accepted) {
                for (std::size_t i = 1; i < simplex.size(); ++i) {
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
                    value[i] = eval(simplex[i]);
                }
            }
        }
        sort_simplex();
    }
    res.x = simplex[0];
    res.value = value[0];
    return res;
}

/// Global-best particle swarm on the configured box. Random draws are taken
/// in particle order from one seeded stream before each batch of evaluations,
/// so the result is independent of `workers`.
inline EstimationResult pso_minimize(const Objective& f, const OptimizerConfig& cfg)
{
    cfg.validate();
    const auto dim = static_cast<Eigen::Index>(cfg.dimension());
    const std::size_t swarm = cfg.effective_swarm();
    const std::size_t iterations = cfg.effective_iterations();
    const VectorXd width = cfg.upper - cfg.lower;
    const VectorXd vmax = 0.2 * width;
    std::mt19937_64 rng(cfg.seed);
    auto uniform = [&] { return detail::uniform01(rng); };

    std::vector<VectorXd> x(swarm, VectorXd(dim));
    std::vector<VectorXd> v(swarm, VectorXd(dim));
    const std::size_t hinted = cfg.hint ? swarm / 5 : 0;
    for (std::size_t p = 0; p < swarm; ++p) {
        for (Eigen::Index i = 0; i < dim; ++i) {
            if (p < hinted) {
                const double c = (*cfg.hint)(i);
                const double half = 0.5 * std::abs(c);
                const double lo = std::max(cfg.lower(i), c - half);
                const double hi = std::min(cfg.upper(i), c + half);
                x[p](i) = hi > lo ? lo + uniform() * (hi - lo) : std::clamp(c, cfg.lower(i), cfg.upper(i));
            } else {
                x[p](i) = cfg.lower(i) + uniform() * width(i);
            }
            v[p](i) = (2.0 * uniform() - 1.0) * vmax(i);
        }
    }
    if (cfg.hint) x[0] = cfg.hint->cwiseMax(cfg.lower).cwiseMin(cfg.upper);

    EstimationResult res;
    std::vector<double> fx;
    detail::evaluate_all(f, x, fx, cfg.workers);
    res.evaluations += swarm;
    std::vector<VectorXd> pbest = x;
    std::vector<double> fpbest = fx;
    std::size_t g = static_cast<std::size_t>(std::min_element(fpbest.begin(), fpbest.end()) - fpbest.begin());
    VectorXd gbest = pbest[g];
    double fg = fpbest[g];
    res.trace.push_back(fg);

    for (std::size_t it = 1; it < iterations; ++it) {
        for (std::size_t p = 0; p < swarm; ++p) {
            for (Eigen::Index i = 0; i < dim; ++i) {
                const double r1 = uniform();
                const double r2 = uniform();
                double vi = cfg.inertia * v[p](i) + cfg.cognitive * r1 * (pbest[p](i) - x[p](i)) +
                            cfg.social * r2 * (gbest(i) - x[p](i));
                vi = std::clamp(vi, -vmax(i), vmax(i));
                double xi = x[p](i) + vi;
                if (xi < cfg.lower(i)) {
                    xi = cfg.lower(i) + (cfg.lower(i) - xi);
                    vi = -vi;
                } else if (xi > cfg.upper(i)) {
                    xi = cfg.upper(i) - (xi - cfg.upper(i));
                    vi = -vi;
                }
                x[p](i) = std::clamp(xi, cfg.lower(i), cfg.upper(i));
                v[p](i) = vi;
            }
        }
        detail::evaluate_all(f, x, fx, cfg.workers);
        res.evaluations += swarm;
        for (std::size_t p = 0; p < swarm; ++p) {
            if (fx[p] < fpbest[p]) {
                fpbest[p] = fx[p];
                pbest[p] = x[p];
                if (fx[p] < fg) {
                    fg = fx[p];
                    gbest = x[p];
                }
            }
        }
        res.trace.push_back(fg);
        const std::size_t s = cfg.stall_iterations;
        if (s > 0 && res.trace.size() > s) {
            const double before = res.trace[res.trace.size() - 1 - s];
            if (std::isfinite(before) && before - fg <= cfg.stall_tolerance * std::abs(before)) break;
        }
    }

    res.theta_hat = gbest;
    res.swarm_cost = fg;
    res.cost = fg;
    if (cfg.polish && std::isfinite(fg)) {
        // Polish in box-normalized coordinates so coordinates of very
        // different magnitude get comparable simplex edges.
        const VectorXd lo = cfg.lower;
        auto boxed = [&](const VectorXd& z) {
            if ((z.array() < 0.0).any() || (z.array() > 1.0).any()) return std::numeric_limits<double>::infinity();
            return f(lo + z.cwiseProduct(width));
        };
        NelderMeadOptions nm = *cfg.polish;
        if (nm.step.size() != dim) nm.step = VectorXd::Constant(dim, 1e-3);
        const VectorXd z0 = (gbest - lo).cwiseQuotient(width);
        const NelderMeadResult polished = nelder_mead(boxed, z0, nm);
        res.evaluations += polished.evaluations;
        if (polished.value < fg) {
            res.theta_hat = lo + polished.x.cwiseProduct(width);
            res.cost = polished.value;
        }
        res.trace.push_back(res.cost);
    }
    return res;
}

} // namespace cloopid
