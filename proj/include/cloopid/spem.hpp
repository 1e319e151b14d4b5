#pragma once

// Stabilized prediction-error identification. The predictor runs the
// simulated loop (P_hat, K_hat) on the measured pair (u, y):
//
//   y_hat = P_hat (1 + K_hat P_hat)^-1 (u + K_hat y)
//
// which stays bounded for an unstable P_hat as long as K_hat stabilizes it.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cloopid/errors.hpp"
#include "cloopid/lti.hpp"
#include "cloopid/maglev.hpp"
#include "cloopid/optimize.hpp"
#include "cloopid/simulate.hpp"

namespace cloopid {

enum class ParamKind { blackbox4, graybox2 };

inline std::string to_string(ParamKind k) { return k == ParamKind::blackbox4 ? "blackbox4" : "graybox2"; }

struct GrayBoxConstants {
    double resistance = maglev::kResistance;
    double inductance = maglev::kInductance;
    double mass = maglev::kMass;
};

/// blackbox4: theta1 / (p^3 + theta2 p^2 + theta3 p + theta4).
/// graybox2: [K_i, K_x] in -K_i / ((M p^2 - K_x)(L p + R)).
struct PlantParameterization {
    ParamKind kind = ParamKind::blackbox4;
    GrayBoxConstants constants{};

    std::size_t dimension() const { return kind == ParamKind::blackbox4 ? 4 : 2; }

    /// The equivalent blackbox4 vector.
    Eigen::Vector4d expand(const VectorXd& theta) const
    {
        if (static_cast<std::size_t>(theta.size()) != dimension()) throw std::invalid_argument("parameter dimension mismatch");
        if (kind == ParamKind::blackbox4) return theta;
        const double ki = theta(0);
        const double kx = theta(1);
        const auto& c = constants;
        return {-ki / (c.mass * c.inductance), c.resistance / c.inductance, -kx / c.mass,
                -kx * c.resistance / (c.mass * c.inductance)};
    }

    TransferFunction plant(const VectorXd& theta) const
    {
        const Eigen::Vector4d b = expand(theta);
        return TransferFunction({b(0)}, {1.0, b(1), b(2), b(3)});
    }

    /// Default search box: +-10 |theta_true| per coordinate for blackbox4;
    /// K_i in [0.1, 100], K_x in [1, 1e4] for graybox2.
    std::pair<VectorXd, VectorXd> default_bounds() const
    {
        if (kind == ParamKind::blackbox4) {
            VectorXd hi(4);
            for (int i = 0; i < 4; ++i) hi(i) = 10.0 * std::abs(maglev::kTheta[static_cast<std::size_t>(i)]);
            return {-hi, hi};
        }
        return {(VectorXd(2) << 0.1, 1.0).finished(), (VectorXd(2) << 100.0, 1e4).finished()};
    }

    VectorXd true_theta() const
    {
        if (kind == ParamKind::blackbox4)
            return (VectorXd(4) << maglev::kTheta[0], maglev::kTheta[1], maglev::kTheta[2], maglev::kTheta[3]).finished();
        return (VectorXd(2) << maglev::kCurrentGain, maglev::kPositionStiffness).finished();
    }
};

struct Predictor {
    TransferFunction p_hat;
    TransferFunction k_hat;
    double sample_period = maglev::kSamplePeriod;
};

/// Continuous realization of the predictor with inputs (u, y) and output
/// y_hat. States: plant first, controller second. Its A matrix is the A
/// matrix of feedback(P_hat, K_hat, negative).
inline StateSpace predictor_realization(const StateSpace& p, const StateSpace& k)
{
    const auto np = p.states();
    const auto nk = k.states();
    const double dp = p.feedthrough();
    const double dk = k.feedthrough();
    const double loop = 1.0 + dp * dk;
    if (std::abs(loop) < 1e-12) throw std::invalid_argument("predictor has a singular algebraic loop");
    // y_hat = cy x + dy [u y]
    MatrixXd cy(1, np + nk);
    cy << p.C / loop, dp * k.C / loop;
    MatrixXd dy(1, 2);
    dy << dp / loop, dp * dk / loop;
    // plant input = u + Ck xk + dk (y - y_hat)
    MatrixXd cu = -dk * cy;
    cu.rightCols(nk) += k.C;
    MatrixXd du = -dk * dy;
    du(0, 0) += 1.0;
    du(0, 1) += dk;
    // controller input = y - y_hat
    MatrixXd ce = -cy;
    MatrixXd de = -dy;
    de(0, 1) += 1.0;

    MatrixXd A = MatrixXd::Zero(np + nk, np + nk);
    A.topLeftCorner(np, np) = p.A;
    A.bottomRightCorner(nk, nk) = k.A;
    A.topRows(np) += p.B * cu;
    A.bottomRows(nk) += k.B * ce;
    MatrixXd B(np + nk, 2);
    B << p.B * du, k.B * de;
    return StateSpace(std::move(A), std::move(B), std::move(cy), std::move(dy));
}

namespace detail {

/// y_hat for a two-input single-output discrete system, from state x0.
inline std::vector<double> run_two_input(const StateSpace& d, const std::vector<double>& u, const std::vector<double>& y,
                                         VectorXd x)
{
    const auto n = d.states();
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMajor a = d.A;
    const VectorXd b0 = d.B.col(0);
    const VectorXd b1 = d.B.col(1);
    const VectorXd c = d.C.row(0).transpose();
    const double d0 = d.D(0, 0);
    const double d1 = d.D(0, 1);
    std::vector<double> out(u.size());
    VectorXd next(n);
    for (std::size_t k = 0; k < u.size(); ++k) {
        const double uk = u[k];
        const double yk = y[k];
        out[k] = c.dot(x) + d0 * uk + d1 * yk;
        for (Eigen::Index i = 0; i < n; ++i) next(i) = a.row(i).dot(x) + b0(i) * uk + b1(i) * yk;
        x.swap(next);
    }
    return out;
}

inline std::vector<double> predict_realized(const StateSpace& pk, const Dataset& data)
{
    const FohDiscretization foh = discretize_foh(pk, data.sample_period);
    const VectorXd x0 = foh.initial_state(Eigen::Vector2d(data.u.front(), data.y.front()));
    return run_two_input(foh.system, data.u, data.y, x0);
}

} // namespace detail

/// One-step evaluation of the predictor, FOH-held inputs, zero initial state.
/// Throws UnstableLoopError when K_hat does not stabilize P_hat.
inline std::vector<double> predict(const Predictor& pred, const Dataset& data)
{
    const StateSpace pk = predictor_realization(tf_to_ss(pred.p_hat), tf_to_ss(pred.k_hat));
    if (!(stability_margin(pk) < -kStabilityTolerance)) throw UnstableLoopError("virtual controller does not stabilize the model");
    if (data.sample_period != pred.sample_period) throw std::invalid_argument("predictor and dataset sample periods differ");
    return detail::predict_realized(pk, data);
}

/// Objective with the controller realization prepared once.
class SpemObjective {
public:
    SpemObjective(PlantParameterization param, const TransferFunction& k_hat, const Dataset& data)
        : param_(std::move(param)), k_(tf_to_ss(k_hat)), data_(&data)
    {
        data.validate();
    }

    /// ||y - y_hat||_2, or kPenaltyScale (1 + max closed-loop real part) when
    /// K_hat does not stabilize P(theta).
    double operator()(const VectorXd& theta) const
    {
        const TransferFunction p = param_.plant(theta);
        const StateSpace pk = predictor_realization(tf_to_ss(p), k_);
        if (!pk.A.allFinite()) return std::numeric_limits<double>::infinity();
        const double margin = stability_margin(pk);
        if (!(margin < -kStabilityTolerance)) return kPenaltyScale * (1.0 + margin);
        const auto yhat = detail::predict_realized(pk, *data_);
        double sum = 0.0;
        for (std::size_t k = 0; k < yhat.size(); ++k) {
            const double e = data_->y[k] - yhat[k];
            sum += e * e;
        }
        return std::sqrt(sum);
    }

    const PlantParameterization& parameterization() const { return param_; }

private:
    PlantParameterization param_;
    StateSpace k_;
    const Dataset* data_;
};

inline double objective(const VectorXd& theta, const PlantParameterization& param, const TransferFunction& k_hat,
                        const Dataset& data)
{
    return SpemObjective(param, k_hat, data)(theta);
}

/// Fills in the parameterization's default bounds when the config has none.
inline OptimizerConfig with_default_bounds(OptimizerConfig opt, const PlantParameterization& param)
{
    if (opt.lower.size() == 0) std::tie(opt.lower, opt.upper) = param.default_bounds();
    return opt;
}

/// Swarm search on the stabilized prediction error followed by the
/// configured polish. Throws NoStableCandidateError if every evaluation
/// was penalized.
inline EstimationResult identify_spem(const PlantParameterization& param, const TransferFunction& k_hat,
                                      const Dataset& data, const OptimizerConfig& opt)
{
    const SpemObjective f(param, k_hat, data);
    bool nonzero = false;
    for (double v : data.y) nonzero = nonzero || v != 0.0;
    for (double v : data.u) nonzero = nonzero || v != 0.0;
    if (!nonzero) throw std::invalid_argument("identify_spem: dataset is identically zero");
    EstimationResult res = pso_minimize(std::cref(f), with_default_bounds(opt, param));
    res.method = Method::spem;
    if (is_penalty(res.cost)) throw NoStableCandidateError("no stabilized candidate found for the virtual controller");
    return res;
}

} // namespace cloopid
