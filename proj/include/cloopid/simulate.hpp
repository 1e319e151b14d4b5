#pragma once

/** @file
 * Closed-loop data acquisition: y = P u + sigma_w w, u = K (r - y) + sigma_xi xi,
 * with r, w and xi held constant over each sample interval. The loop is
 * simulated by exact ZOH discretization of the joint plant/controller
 * realization, so the recorded samples carry no integration error.
 */

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "cloopid/errors.hpp"
#include "cloopid/lti.hpp"
#include "cloopid/maglev.hpp"

namespace cloopid {

struct Dataset {
    std::vector<double> t;
    std::vector<double> r;
    std::vector<double> u;
    std::vector<double> y;
    double sample_period = 0.0;

    std::size_t size() const { return t.size(); }

    void validate() const
    {
        const std::size_t n = t.size();
        if (n < 2) throw std::invalid_argument("dataset needs at least two samples");
        if (r.size() != n || u.size() != n || y.size() != n) throw std::invalid_argument("dataset columns differ in length");
        if (!(sample_period > 0.0)) throw std::invalid_argument("dataset sample period must be positive");
        for (std::size_t k = 0; k < n; ++k)
            if (t[k] != static_cast<double>(k) * sample_period) throw std::invalid_argument("dataset time grid is not k*T_s");
    }

    bool operator==(const Dataset&) const = default;
};

struct NoiseSpec {
    double sigma_w = 0.0;   // output noise scale (m)
    double sigma_xi = 0.0;  // input disturbance scale (V)
    std::uint64_t seed = 0;
};

struct PulseReference {
    double start = 0.05;
    double width = maglev::kPulseWidth;
    double height = maglev::kPulseHeight;
};

/// Reference given sample by sample; must cover the whole record.
struct SampledReference {
    std::vector<double> values;
};

using Reference = std::variant<PulseReference, SampledReference>;

struct ExperimentSpec {
    TransferFunction plant = maglev::plant();
    TransferFunction controller = maglev::controller();
    Reference reference = PulseReference{};
    double duration = 1.0;
    double sample_period = maglev::kSamplePeriod;
    NoiseSpec noise{};

    std::size_t samples() const { return static_cast<std::size_t>(std::llround(duration / sample_period)) + 1; }
};

/// Record length 1.0 s with a 0.25 s, 1 mm pulse starting at 0.05 s.
inline ExperimentSpec maglev_defaults()
{
    ExperimentSpec spec;
    spec.noise = NoiseSpec{maglev::kOutputNoiseScale, maglev::kInputDisturbanceScale, 1};
    return spec;
}

/// Reference samples r[k], k = 0..samples-1. The pulse is active for
/// round(start/T_s) <= k < round((start + width)/T_s).
inline std::vector<double> reference_samples(const ExperimentSpec& spec)
{
    const std::size_t n = spec.samples();
    if (const auto* pulse = std::get_if<PulseReference>(&spec.reference)) {
        if (spec.duration + 1e-12 < pulse->start + pulse->width)
            throw std::invalid_argument("record ends before the pulse does");
        const auto k0 = static_cast<std::size_t>(std::llround(pulse->start / spec.sample_period));
        const auto k1 = static_cast<std::size_t>(std::llround((pulse->start + pulse->width) / spec.sample_period));
        std::vector<double> r(n, 0.0);
        for (std::size_t k = k0; k < std::min(k1, n); ++k) r[k] = pulse->height;
        return r;
    }
    const auto& sampled = std::get<SampledReference>(spec.reference);
    if (sampled.values.size() != n) throw std::invalid_argument("sampled reference length does not match the record");
    return sampled.values;
}

/// Joint continuous realization with inputs (r, w, xi) and outputs (u, y).
/// States are ordered plant first, controller second.
inline StateSpace closed_loop_realization(const TransferFunction& plant, const TransferFunction& controller,
                                          double sigma_w, double sigma_xi)
{
    const StateSpace p = tf_to_ss(plant);
    const StateSpace k = tf_to_ss(controller);
    const auto np = p.states();
    const auto nk = k.states();
    const auto n = np + nk;
    const double dp = p.feedthrough();
    const double dk = k.feedthrough();
    const double loop = 1.0 + dk * dp;
    if (std::abs(loop) < 1e-12) throw std::invalid_argument("closed loop has a singular algebraic loop");

    // u = cu x + du [r w xi]
    MatrixXd cu(1, n);
    cu << -dk * p.C / loop, k.C / loop;
    MatrixXd du(1, 3);
    du << dk / loop, -dk * sigma_w / loop, sigma_xi / loop;
    // y = cy x + dy [r w xi]
    MatrixXd cy = dp * cu;
    cy.leftCols(np) += p.C;
    MatrixXd dy = dp * du;
    dy(0, 1) += sigma_w;
    // e = r - y
    MatrixXd de = -dy;
    de(0, 0) += 1.0;

    MatrixXd A = MatrixXd::Zero(n, n);
    A.topLeftCorner(np, np) = p.A;
    A.bottomRightCorner(nk, nk) = k.A;
    A.topRows(np) += p.B * cu;
    A.bottomRows(nk) -= k.B * cy;
    MatrixXd B(n, 3);
    B << p.B * du, k.B * de;
    MatrixXd C(2, n);
    C << cu, cy;
    MatrixXd D(2, 3);
    D << du, dy;
    return StateSpace(std::move(A), std::move(B), std::move(C), std::move(D));
}

namespace detail {

/// Pairs of independent standard normals via Box-Muller on a 64-bit Mersenne
/// twister. The stream is portable: it does not depend on the standard
/// library's distribution implementations.
class GaussianPairs {
public:
    explicit GaussianPairs(std::uint64_t seed) : engine_(seed) {}

    std::pair<double, double> next()
    {
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        return {radius * std::cos(angle), radius * std::sin(angle)};
    }

private:
    double uniform()
    {
        // (0, 1): never returns 0, so log() stays finite.
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
    }

    std::mt19937_64 engine_;
};

} // namespace detail

/// Held noise samples (w[k], xi[k]) for a record of `samples` points.
inline std::pair<std::vector<double>, std::vector<double>> held_noise(std::uint64_t seed, std::size_t samples)
{
    detail::GaussianPairs gauss(seed);
    std::vector<double> w(samples);
    std::vector<double> xi(samples);
    for (std::size_t k = 0; k < samples; ++k) std::tie(w[k], xi[k]) = gauss.next();
    return {std::move(w), std::move(xi)};
}

/// Simulates the experiment. When `states` is non-null it receives the joint
/// state at every sample instant (one row per sample).
inline Dataset simulate_closed_loop(const ExperimentSpec& spec, MatrixXd* states = nullptr)
{
    if (spec.noise.sigma_w < 0.0 || spec.noise.sigma_xi < 0.0) throw std::invalid_argument("noise scales must be >= 0");
    const StateSpace cl = closed_loop_realization(spec.plant, spec.controller, spec.noise.sigma_w, spec.noise.sigma_xi);
    const double margin = stability_margin(cl);
    if (!(margin < -kStabilityTolerance))
        throw UnstableLoopError("closed loop is unstable (max pole real part " + std::to_string(margin) + ")");

    const std::size_t n = spec.samples();
    Dataset data;
    data.sample_period = spec.sample_period;
    data.r = reference_samples(spec);
    data.t.resize(n);
    data.u.resize(n);
    data.y.resize(n);
    for (std::size_t k = 0; k < n; ++k) data.t[k] = static_cast<double>(k) * spec.sample_period;
    const auto [w, xi] = held_noise(spec.noise.seed, n);

    const StateSpace d = discretize(cl, spec.sample_period, Hold::zoh);
    const auto nx = d.states();
    if (states) states->resize(static_cast<Eigen::Index>(n), nx);
    VectorXd x = VectorXd::Zero(nx);
    VectorXd next(nx);
    Eigen::Vector3d in;
    for (std::size_t k = 0; k < n; ++k) {
        in << data.r[k], w[k], xi[k];
        const Eigen::Vector2d out = d.C * x + d.D * in;
        data.u[k] = out(0);
        data.y[k] = out(1);
        if (states) states->row(static_cast<Eigen::Index>(k)) = x.transpose();
        next.noalias() = d.A * x;
        next.noalias() += d.B * in;
        x.swap(next);
    }
    return data;
}

/// Datasets with seeds seed, seed+1, ..., seed+count-1.
inline std::vector<Dataset> monte_carlo_datasets(const ExperimentSpec& spec, std::size_t count)
{
    if (count < 1) throw std::invalid_argument("count must be at least 1");
    std::vector<Dataset> out;
    out.reserve(count);
    ExperimentSpec run = spec;
    for (std::size_t i = 0; i < count; ++i) {
        run.noise.seed = spec.noise.seed + i;
        out.push_back(simulate_closed_loop(run));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset CSV: header t,r,u,y; 17 significant digits.

inline std::string format_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_dataset_csv(std::ostream& os, const Dataset& data)
{
    data.validate();
    os << "t,r,u,y\n";
    for (std::size_t k = 0; k < data.size(); ++k)
        os << format_double(data.t[k]) << ',' << format_double(data.r[k]) << ',' << format_double(data.u[k]) << ','
           << format_double(data.y[k]) << '\n';
}

inline void write_dataset_csv(const std::string& path, const Dataset& data)
{
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_dataset_csv(os, data);
}

inline Dataset read_dataset_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line)) throw FormatError("dataset CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "t,r,u,y") throw FormatError("dataset CSV header must be t,r,u,y");
    Dataset data;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        double v[4];
        const char* p = line.c_str();
        for (int i = 0; i < 4; ++i) {
            char* end = nullptr;
            v[i] = std::strtod(p, &end);
            if (end == p) throw FormatError("dataset CSV row " + std::to_string(row) + " is malformed");
            p = end;
            if (i < 3) {
                if (*p != ',') throw FormatError("dataset CSV row " + std::to_string(row) + " is malformed");
                ++p;
            }
        }
        data.t.push_back(v[0]);
        data.r.push_back(v[1]);
        data.u.push_back(v[2]);
        data.y.push_back(v[3]);
    }
    if (data.t.size() < 2) throw FormatError("dataset CSV needs at least two rows");
    data.sample_period = data.t[1];
    try {
        data.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
    return data;
}

inline Dataset read_dataset_csv(const std::string& path)
{
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open dataset " + path);
    return read_dataset_csv(is);
}

} // namespace cloopid
