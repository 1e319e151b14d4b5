#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cloopid/lti.hpp"
#include "cloopid/maglev.hpp"
#include "oracles.hpp"

using namespace cloopid;

namespace {

TransferFunction random_proper_tf(std::mt19937_64& rng, int order, bool strictly, bool stable = false)
{
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> radius(0.2, 5.0);
    std::vector<Complex> p;
    // Mix of stable and unstable poles, some complex pairs.
    while (static_cast<int>(p.size()) < order) {
        const double re = stable ? -0.1 - std::abs(normal(rng)) * 2.0 : normal(rng) * 2.0;
        if (order - static_cast<int>(p.size()) >= 2 && normal(rng) > 0) {
            const double im = radius(rng);
            p.emplace_back(re, im);
            p.emplace_back(re, -im);
        } else {
            p.emplace_back(re, 0.0);
        }
    }
    Poly num(order + 1);
    for (auto& c : num) c = normal(rng);
    if (strictly) num[0] = 0.0;
    return TransferFunction(num, poly::from_roots(p, 1.0 + std::abs(normal(rng))));
}

Poly padded(const Poly& p, std::size_t n)
{
    Poly out(n - p.size(), 0.0);
    out.insert(out.end(), p.begin(), p.end());
    return out;
}

double max_relative_response_error(const FrequencyResponse& a, const FrequencyResponse& b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.value.size(); ++i)
        worst = std::max(worst, std::abs(a.value[i] - b.value[i]) / std::abs(b.value[i]));
    return worst;
}

StateSpace ss(const TransferFunction& tf) { return tf_to_ss(tf); }

} // namespace

// --- tf_to_ss / ss_to_tf ----------------------------------------------------

TEST(TfToSs, UnitGainIsStaticRealization)
{
    const StateSpace s = tf_to_ss(TransferFunction({1.0}, {1.0}));
    EXPECT_EQ(s.states(), 0);
    EXPECT_DOUBLE_EQ(s.feedthrough(), 1.0);
}

TEST(TfToSs, MaglevPlantCharacteristicPolynomial)
{
    const StateSpace s = tf_to_ss(maglev::plant());
    ASSERT_EQ(s.states(), 3);
    const Poly cp = characteristic_polynomial(s.A);
    const Poly expected{1.0, 13.34, -494.4, -6593.0};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(cp[i], expected[i], 1e-9 * std::abs(expected[i]));
}

TEST(TfToSs, ImproperRejected)
{
    EXPECT_THROW(tf_to_ss(TransferFunction({1.0, 0.0}, {1.0})), std::invalid_argument);
}

TEST(TfToSs, RandomRoundTripPreservesCoefficients)
{
    std::mt19937_64 rng(2024);
    for (int draw = 0; draw < 100; ++draw) {
        const int order = 1 + draw % 5;
        const TransferFunction tf = random_proper_tf(rng, order, draw % 3 == 0);
        const TransferFunction back = ss_to_tf(tf_to_ss(tf)).normalized();
        const TransferFunction ref = tf.normalized();
        const std::size_t n = ref.den().size();
        EXPECT_LT(oracle::relative_coefficient_error(back.den(), ref.den()), 1e-9) << draw;
        EXPECT_LT(oracle::relative_coefficient_error(padded(back.num(), n), padded(ref.num(), n)), 1e-9) << draw;
    }
}

TEST(SsToTf, StaticGain)
{
    const TransferFunction tf = ss_to_tf(StateSpace::gain(3.0));
    EXPECT_EQ(tf.num(), Poly{3.0});
    EXPECT_EQ(tf.den(), Poly{1.0});
}

TEST(SsToTf, FirstOrderLag)
{
    const StateSpace s(MatrixXd::Constant(1, 1, -1.0), MatrixXd::Constant(1, 1, 1.0), MatrixXd::Constant(1, 1, 1.0),
                       MatrixXd::Zero(1, 1));
    const TransferFunction tf = ss_to_tf(s);
    ASSERT_EQ(tf.num().size(), 1u);
    EXPECT_NEAR(tf.num()[0], 1.0, 1e-15);
    EXPECT_NEAR(tf.den()[0], 1.0, 1e-15);
    EXPECT_NEAR(tf.den()[1], 1.0, 1e-15);
}

TEST(SsToTf, ControllerDcGainMatchesZpkEvaluation)
{
    // Oracle: K(0) from the factored form, no coefficient arithmetic.
    const double k0 = -1.197e8 * 9.294 * 13.99 * 20.9 / (399.9 * 0.1 * (121.5 * 121.5 + 141.1 * 141.1));
    EXPECT_NEAR(k0, -2.346e5, 0.001e5);
    const TransferFunction k = ss_to_tf(tf_to_ss(maglev::controller()));
    const double dc = k.num().back() / k.den().back();
    EXPECT_NEAR(dc / k0, 1.0, 1e-9);
}

// --- poles / stability -------------------------------------------------------

TEST(Poles, FirstOrder)
{
    const auto p = poles(TransferFunction({1.0}, {1.0, 1.0}));
    ASSERT_EQ(p.size(), 1u);
    EXPECT_NEAR(p[0].real(), -1.0, 1e-15);
}

TEST(Poles, MaglevPlantHasOneUnstableRealPole)
{
    const auto& th = maglev::kTheta;
    const double root = oracle::bisect([&](double x) { return ((x + th[1]) * x + th[2]) * x + th[3]; }, 0.0, 100.0);
    const auto p = poles(maglev::plant());
    int unstable = 0;
    for (const auto& z : p) unstable += z.real() > 0.0;
    EXPECT_EQ(unstable, 1);
    EXPECT_NEAR(p[0].real(), root, 1e-9 * root);
    EXPECT_NEAR(p[0].imag(), 0.0, 1e-12);
    EXPECT_NEAR(root, 22.0, 1.0);
    // Same answer through the realization.
    EXPECT_NEAR(poles(tf_to_ss(maglev::plant()))[0].real(), root, 1e-9 * root);
}

TEST(Poles, ControllerPolesAreTheFactoredOnes)
{
    const auto p = poles(maglev::controller());
    ASSERT_EQ(p.size(), 4u);
    EXPECT_NEAR(p[0].real(), -0.1, 1e-9);
    EXPECT_NEAR(std::abs(p[1] - Complex(-121.5, 141.1)), 0.0, 1e-8);
    EXPECT_NEAR(std::abs(p[2] - Complex(-121.5, -141.1)), 0.0, 1e-8);
    EXPECT_NEAR(p[3].real(), -399.9, 1e-8);
}

TEST(IsStable, Classification)
{
    EXPECT_FALSE(is_stable(maglev::plant()));
    EXPECT_TRUE(is_stable(maglev::controller()));
    EXPECT_TRUE(is_stable(TransferFunction::gain(1.0)));
    EXPECT_FALSE(is_stable(TransferFunction({1.0}, {1.0, 0.0})));  // integrator sits on the boundary
    EXPECT_TRUE(is_stable(TransferFunction({1.0}, {1.0, -0.5}, TimeDomain::discrete(0.1))));
    EXPECT_FALSE(is_stable(TransferFunction({1.0}, {1.0, -1.0}, TimeDomain::discrete(0.1))));
}

// --- interconnection ---------------------------------------------------------

TEST(Feedback, UnitGainsGiveOneHalf)
{
    const StateSpace cl = feedback(StateSpace::gain(1.0), StateSpace::gain(1.0));
    EXPECT_EQ(cl.states(), 0);
    EXPECT_DOUBLE_EQ(cl.feedthrough(), 0.5);
}

TEST(Feedback, SingularAlgebraicLoopRejected)
{
    EXPECT_THROW(feedback(StateSpace::gain(1.0), StateSpace::gain(1.0), FeedbackSign::positive), std::invalid_argument);
}

TEST(Feedback, MaglevLoopsAreStableByBothPolePaths)
{
    for (const auto& k : {maglev::controller(), maglev::pid_controller()}) {
        const StateSpace cl = feedback(ss(maglev::plant()), ss(k));
        EXPECT_EQ(cl.states(), 3 + k.order());
        EXPECT_TRUE(is_stable(cl));
        // Independent path: characteristic polynomial den_P den_K + num_P num_K.
        const Poly cp = poly::add(poly::multiply(maglev::plant().den(), k.den()),
                                  poly::multiply(maglev::plant().num(), k.num()));
        EXPECT_TRUE(is_stable(TransferFunction({1.0}, cp)));
        const auto a = poles(cl);
        const auto b = roots(cp);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(std::abs(a[i] - b[i]), 1e-6 * std::abs(b[i]));
    }
}

TEST(Feedback, MatchesClosedLoopTransferFunction)
{
    const StateSpace cl = feedback(ss(maglev::plant()), ss(maglev::controller()));
    const TransferFunction p = maglev::plant();
    const TransferFunction k = maglev::controller();
    const auto w = logspace(0.1, 1e4, 40);
    const auto fr = freq_response(cl, w);
    for (std::size_t i = 0; i < w.size(); ++i) {
        const Complex s(0.0, w[i]);
        const Complex pv = poly::evaluate<Complex>(p.num(), s) / poly::evaluate<Complex>(p.den(), s);
        const Complex kv = poly::evaluate<Complex>(k.num(), s) / poly::evaluate<Complex>(k.den(), s);
        const Complex expected = pv / (1.0 + pv * kv);
        EXPECT_LT(std::abs(fr.value[i] - expected) / std::abs(expected), 1e-9);
    }
}

TEST(Series, GainsMultiply)
{
    EXPECT_DOUBLE_EQ(series(StateSpace::gain(2.0), StateSpace::gain(3.0)).feedthrough(), 6.0);
    const StateSpace a = ss(maglev::controller());
    const StateSpace same = series(a, StateSpace::gain(1.0));
    const auto w = logspace(1.0, 1e3, 10);
    EXPECT_LT(max_relative_response_error(freq_response(same, w), freq_response(a, w)), 1e-14);
}

TEST(Series, TransferFunctionIsPolynomialProduct)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const TransferFunction a = random_proper_tf(rng, 1 + trial % 3, false);
        const TransferFunction b = random_proper_tf(rng, 1 + (trial + 1) % 3, true);
        const TransferFunction prod = ss_to_tf(series(ss(a), ss(b))).normalized();
        const TransferFunction ref =
            TransferFunction(poly::multiply(a.num(), b.num()), poly::multiply(a.den(), b.den())).normalized();
        const std::size_t n = ref.den().size();
        EXPECT_LT(oracle::relative_coefficient_error(prod.den(), ref.den()), 1e-9);
        EXPECT_LT(oracle::relative_coefficient_error(padded(prod.num(), n), padded(ref.num(), n)), 1e-9);
    }
}

TEST(Series, ResponseIsElementwiseProduct)
{
    std::mt19937_64 rng(5);
    const auto w = logspace(0.01, 100.0, 60);
    for (int trial = 0; trial < 20; ++trial) {
        const StateSpace a = ss(random_proper_tf(rng, 1 + trial % 5, false));
        const StateSpace b = ss(random_proper_tf(rng, 1 + (trial + 2) % 5, false));
        const auto fa = freq_response(a, w);
        const auto fb = freq_response(b, w);
        const auto fab = freq_response(series(a, b), w);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Complex expected = fa.value[i] * fb.value[i];
            EXPECT_LT(std::abs(fab.value[i] - expected), 1e-10 * std::abs(expected));
        }
    }
}

TEST(Parallel, AddsResponses)
{
    const StateSpace a = ss(maglev::plant());
    const StateSpace b = scale(ss(maglev::controller()), 1e-8);
    const auto w = logspace(1.0, 1e3, 20);
    const auto fa = freq_response(a, w);
    const auto fb = freq_response(b, w);
    const auto fs = freq_response(parallel(a, b), w);
    for (std::size_t i = 0; i < w.size(); ++i)
        EXPECT_LT(std::abs(fs.value[i] - (fa.value[i] + fb.value[i])), 1e-12 * std::abs(fs.value[i]));
}

TEST(Inverse, BiproperInverseCancels)
{
    const StateSpace a = ss(TransferFunction({2.0, 3.0, 1.0}, {1.0, 5.0, 6.0}));
    const auto w = logspace(0.1, 100.0, 20);
    const auto fr = freq_response(series(a, inverse(a)), w);
    for (const auto& v : fr.value) EXPECT_NEAR(std::abs(v - 1.0), 0.0, 1e-12);
    EXPECT_THROW(inverse(ss(maglev::plant())), std::invalid_argument);
}

// --- discretization ----------------------------------------------------------

TEST(Discretize, IntegratorZoh)
{
    const StateSpace s(MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1));
    const StateSpace d = discretize(s, 0.1, Hold::zoh);
    EXPECT_NEAR(d.A(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(d.B(0, 0), 0.1, 1e-15);
    EXPECT_TRUE(d.domain.is_discrete());
    EXPECT_DOUBLE_EQ(d.domain.sample_period(), 0.1);
}

TEST(Discretize, FirstOrderLagZoh)
{
    const StateSpace s(-MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1));
    const StateSpace d = discretize(s, 1.0, Hold::zoh);
    EXPECT_NEAR(d.A(0, 0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(d.B(0, 0), 1.0 - std::exp(-1.0), 1e-15);
}

TEST(Discretize, FohHasFeedthroughForStrictlyProperSystem)
{
    const StateSpace s(-MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1));
    const StateSpace d = discretize(s, 0.5, Hold::foh);
    // Triangle-hold equivalent of 1/(s+1): D = (T - 1 + e^-T) / T.
    const double t = 0.5;
    EXPECT_NEAR(d.feedthrough(), (t - 1.0 + std::exp(-t)) / t, 1e-15);
}

TEST(Discretize, AgreesWithFineStepIntegrator)
{
    std::mt19937_64 rng(99);
    std::normal_distribution<double> normal;
    const double ts = 0.05;
    const int steps = 1000;
    for (int trial = 0; trial < 6; ++trial) {
        const TransferFunction tf = random_proper_tf(rng, 1 + trial % 4, trial % 2 == 0, true);
        const StateSpace s = ss(tf);
        std::vector<double> u(steps + 1);
        for (auto& v : u) v = normal(rng);
        MatrixXd input(steps, 1);
        for (int k = 0; k < steps; ++k) input(k, 0) = u[k];
        for (Hold hold : {Hold::zoh, Hold::foh}) {
            const MatrixXd y = simulate_held(s, ts, hold, input);
            auto signal = [&](int k, double frac) {
                VectorXd v(1);
                v(0) = hold == Hold::zoh ? u[k] : u[k] + frac * (u[k + 1] - u[k]);
                return v;
            };
            const MatrixXd ref = oracle::rk4_simulate(s.A, s.B, s.C, s.D, signal, steps, ts, 100);
            const double range = ref.maxCoeff() - ref.minCoeff();
            EXPECT_LT((y - ref).cwiseAbs().maxCoeff(), 1e-8 * range) << "trial " << trial;
        }
    }
}

TEST(Discretize, MaglevClosedLoopStepMatchesFineStepIntegrator)
{
    const StateSpace cl = feedback(ss(maglev::plant()), ss(maglev::controller()));
    const int steps = 2000;
    const MatrixXd y = lsim(discretize(cl, maglev::kSamplePeriod, Hold::zoh), MatrixXd::Ones(steps, 1));
    const MatrixXd ref = oracle::rk4_simulate(
        cl.A, cl.B, cl.C, cl.D, [](int, double) { return VectorXd::Ones(1); }, steps, maglev::kSamplePeriod, 100);
    const double range = ref.maxCoeff() - ref.minCoeff();
    EXPECT_LT((y - ref).cwiseAbs().maxCoeff(), 1e-8 * range);
}

// --- frequency response ------------------------------------------------------

TEST(FreqResponse, UnitGain)
{
    const auto w = logspace(1e-2, 1e3, 25);
    for (const auto& v : freq_response(TransferFunction::gain(1.0), w).value) EXPECT_EQ(v, Complex(1.0, 0.0));
    for (const auto& v : freq_response(StateSpace::gain(1.0), w).value) EXPECT_EQ(v, Complex(1.0, 0.0));
}

TEST(FreqResponse, MaglevLowFrequencyLimit)
{
    const std::vector<double> w{1e-3};
    const double dc = std::abs(maglev::kTheta[0] / maglev::kTheta[3]);
    EXPECT_NEAR(dc, 1.0842e-3, 1e-7);
    EXPECT_NEAR(std::abs(freq_response(maglev::plant(), w).value[0]) / dc, 1.0, 1e-6);
}

TEST(FreqResponse, FirstOrderLagAtCorner)
{
    const std::vector<double> w{1.0};
    const auto fr = freq_response(TransferFunction({1.0}, {1.0, 1.0}), w);
    EXPECT_NEAR(fr.magnitude()[0], 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(fr.phase_deg()[0], -45.0, 1e-12);
}

TEST(FreqResponse, PoleOnContourFlaggedInfinite)
{
    const std::vector<double> w{0.5, 1.0, 2.0};
    const auto fr = freq_response(TransferFunction({1.0}, {1.0, 0.0, 1.0}), w);
    EXPECT_TRUE(std::isfinite(std::abs(fr.value[0])));
    EXPECT_TRUE(std::isinf(std::abs(fr.value[1])));
    EXPECT_TRUE(std::isfinite(std::abs(fr.value[2])));
}

TEST(FreqResponse, DiscreteEvaluatesOnUnitCircle)
{
    const double ts = 0.01;
    const TransferFunction delay({1.0}, {1.0, 0.0}, TimeDomain::discrete(ts));
    const std::vector<double> w{1.0, 100.0, std::numbers::pi / ts};
    const auto fr = freq_response(delay, w);
    for (std::size_t i = 0; i < w.size(); ++i) {
        EXPECT_NEAR(std::abs(fr.value[i]), 1.0, 1e-14);
        EXPECT_NEAR(std::arg(fr.value[i]), -std::remainder(w[i] * ts, 2 * std::numbers::pi), 1e-12);
    }
}

TEST(FreqResponse, TransferFunctionAndRealizationAgree)
{
    const auto w = logspace(1.0, 1e3, 50);
    const TransferFunction k = maglev::controller();
    EXPECT_LT(max_relative_response_error(freq_response(tf_to_ss(k), w), freq_response(k, w)), 1e-10);
}

TEST(FreqResponse, RejectsNonPositiveFrequency)
{
    const std::vector<double> w{0.0};
    EXPECT_THROW(freq_response(TransferFunction::gain(1.0), w), std::invalid_argument);
}

// --- cancellation ------------------------------------------------------------

TEST(PoleZeroCancellation, RemovesCommonFactor)
{
    // (s+2)/((s+2)(s+5)) realized non-minimally.
    const TransferFunction tf({1.0, 2.0}, poly::multiply(Poly{1.0, 2.0}, Poly{1.0, 5.0}));
    const TransferFunction reduced = cancel_pole_zero_pairs(tf_to_ss(tf));
    EXPECT_EQ(reduced.order(), 1);
    EXPECT_NEAR(reduced.num().back() / reduced.den().back(), 0.2, 1e-12);
    EXPECT_NEAR(reduced.den()[1] / reduced.den()[0], 5.0, 1e-10);
}

TEST(PoleZeroCancellation, KeepsMinimalSystems)
{
    const TransferFunction reduced = cancel_pole_zero_pairs(tf_to_ss(maglev::controller()));
    EXPECT_EQ(reduced.order(), 4);
    const auto w = logspace(1.0, 1e3, 30);
    EXPECT_LT(max_relative_response_error(freq_response(reduced, w), freq_response(maglev::controller(), w)), 1e-9);
}
