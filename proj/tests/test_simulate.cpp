#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "cloopid/simulate.hpp"
#include "oracles.hpp"

using namespace cloopid;

namespace {

ExperimentSpec noise_free()
{
    ExperimentSpec spec = maglev_defaults();
    spec.noise.sigma_w = 0.0;
    spec.noise.sigma_xi = 0.0;
    return spec;
}

double peak(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// Closed-loop DC gain P(0) K(0) / (1 + P(0) K(0)) from the raw coefficients.
double complementary_dc_gain()
{
    const auto p = maglev::plant();
    const auto k = maglev::controller();
    const double p0 = p.num().back() / p.den().back();
    const double k0 = k.num().back() / k.den().back();
    return p0 * k0 / (1.0 + p0 * k0);
}

} // namespace

TEST(MaglevDefaults, PlantNoiseAndStability)
{
    const ExperimentSpec spec = maglev_defaults();
    EXPECT_EQ(spec.plant.den(), (Poly{1.0, 13.34, -494.4, -6593.0}));
    EXPECT_EQ(spec.plant.num(), (Poly{-7.148}));
    EXPECT_DOUBLE_EQ(spec.noise.sigma_w, 2e-4);
    EXPECT_DOUBLE_EQ(spec.noise.sigma_xi, 10.0);
    EXPECT_DOUBLE_EQ(spec.sample_period, 1e-4);
    EXPECT_EQ(spec.samples(), 10001u);

    // Closed-loop characteristic polynomial den_P den_K + num_P num_K.
    const Poly cl = poly::add(poly::multiply(spec.plant.den(), spec.controller.den()),
                              poly::multiply(spec.plant.num(), spec.controller.num()));
    MatrixXd companion = MatrixXd::Zero(static_cast<Eigen::Index>(cl.size() - 1), static_cast<Eigen::Index>(cl.size() - 1));
    for (std::size_t i = 1; i < cl.size(); ++i) companion(0, static_cast<Eigen::Index>(i - 1)) = -cl[i] / cl[0];
    for (Eigen::Index i = 1; i < companion.rows(); ++i) companion(i, i - 1) = 1.0;
    EXPECT_LT(companion.eigenvalues().real().maxCoeff(), 0.0);
}

TEST(MaglevDefaults, PulseSamples)
{
    const auto r = reference_samples(maglev_defaults());
    ASSERT_EQ(r.size(), 10001u);
    EXPECT_EQ(r[499], 0.0);
    EXPECT_EQ(r[500], 1e-3);
    EXPECT_EQ(r[2999], 1e-3);
    EXPECT_EQ(r[3000], 0.0);
}

TEST(SimulateClosedLoop, ZeroInputsGiveEquilibrium)
{
    ExperimentSpec spec = noise_free();
    spec.reference = PulseReference{0.05, 0.25, 0.0};
    const Dataset d = simulate_closed_loop(spec);
    EXPECT_EQ(peak(d.u), 0.0);
    EXPECT_EQ(peak(d.y), 0.0);
    EXPECT_NO_THROW(d.validate());
}

TEST(SimulateClosedLoop, PulsePlateauApproachesClosedLoopDcGain)
{
    const double t0 = complementary_dc_gain();
    EXPECT_LT(std::abs(t0 - 1.0), 0.02);
    const Dataset d = simulate_closed_loop(noise_free());
    // Last sample before the pulse ends.
    EXPECT_NEAR(d.y[2999] / 1e-3, t0, 0.02);
}

TEST(SimulateClosedLoop, DeterministicPerSeed)
{
    const ExperimentSpec spec = maglev_defaults();
    const Dataset a = simulate_closed_loop(spec);
    const Dataset b = simulate_closed_loop(spec);
    EXPECT_TRUE(a == b);
    ExperimentSpec other = spec;
    other.noise.seed = spec.noise.seed + 1;
    const Dataset c = simulate_closed_loop(other);
    EXPECT_EQ(a.r, c.r);
    EXPECT_NE(a.y, c.y);
}

TEST(SimulateClosedLoop, MatchesFineStepRk4)
{
    const ExperimentSpec spec = noise_free();
    const Dataset d = simulate_closed_loop(spec);

    // Plant and controller integrated as separate blocks, the loop closed
    // algebraically at every stage.
    const StateSpace p = tf_to_ss(spec.plant);
    const StateSpace k = tf_to_ss(spec.controller);
    const auto np = p.states();
    const auto nk = k.states();
    const double dk = k.feedthrough();
    const auto r = d.r;
    auto deriv = [&](const VectorXd& x, double ref) {
        const double y = (p.C * x.head(np))(0);
        const double e = ref - y;
        const double u = (k.C * x.tail(nk))(0) + dk * e;
        VectorXd dx(np + nk);
        dx.head(np) = p.A * x.head(np) + p.B * u;
        dx.tail(nk) = k.A * x.tail(nk) + k.B * e;
        return dx;
    };
    const int substeps = 20;
    const double h = spec.sample_period / substeps;
    VectorXd x = VectorXd::Zero(np + nk);
    double worst = 0.0;
    for (std::size_t s = 0; s < d.size(); ++s) {
        const double y = (p.C * x.head(np))(0);
        worst = std::max(worst, std::abs(y - d.y[s]));
        for (int j = 0; j < substeps; ++j) {
            const VectorXd k1 = deriv(x, r[s]);
            const VectorXd k2 = deriv(x + 0.5 * h * k1, r[s]);
            const VectorXd k3 = deriv(x + 0.5 * h * k2, r[s]);
            const VectorXd k4 = deriv(x + h * k3, r[s]);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }
    EXPECT_LT(worst, 1e-6 * peak(d.y));
}

TEST(SimulateClosedLoop, OutputEquationHoldsExactly)
{
    const ExperimentSpec spec = noise_free();
    MatrixXd states;
    const Dataset d = simulate_closed_loop(spec, &states);
    const StateSpace k = tf_to_ss(spec.controller);
    const auto nk = k.states();
    double worst = 0.0;
    for (std::size_t s = 0; s < d.size(); ++s) {
        const auto row = static_cast<Eigen::Index>(s);
        const double u = (k.C * states.row(row).tail(nk).transpose())(0) + k.feedthrough() * (d.r[s] - d.y[s]);
        worst = std::max(worst, std::abs(u - d.u[s]));
    }
    EXPECT_LT(worst, 1e-9 * peak(d.u));
}

TEST(SimulateClosedLoop, SampledControllerReconstructsInput)
{
    // The continuous controller sees a continuous output, so a sampled
    // controller only reproduces u up to discretization error. The reference
    // is held, so it goes through ZOH; the output through FOH.
    const ExperimentSpec spec = noise_free();
    const Dataset d = simulate_closed_loop(spec);
    const auto n = static_cast<Eigen::Index>(d.size());
    MatrixXd r(n, 1);
    MatrixXd y(n, 1);
    for (Eigen::Index s = 0; s < n; ++s) {
        r(s, 0) = d.r[static_cast<std::size_t>(s)];
        y(s, 0) = -d.y[static_cast<std::size_t>(s)];
    }
    const StateSpace k = tf_to_ss(spec.controller);
    const MatrixXd u = simulate_held(k, spec.sample_period, Hold::zoh, r) + simulate_held(k, spec.sample_period, Hold::foh, y);
    double worst = 0.0;
    for (Eigen::Index s = 0; s < n; ++s) worst = std::max(worst, std::abs(u(s, 0) - d.u[static_cast<std::size_t>(s)]));
    EXPECT_LT(worst, 1e-3 * peak(d.u));
}

TEST(SimulateClosedLoop, NoiseFreeOutputIsBounded)
{
    const Dataset d = simulate_closed_loop(noise_free());
    EXPECT_TRUE(std::isfinite(peak(d.y)));
    EXPECT_LT(peak(d.y), 10.0 * 1e-3 * std::abs(complementary_dc_gain()));
}

TEST(SimulateClosedLoop, UnstableLoopIsRefused)
{
    ExperimentSpec spec = noise_free();
    spec.controller = TransferFunction({1.0}, {1.0});
    EXPECT_THROW(simulate_closed_loop(spec), UnstableLoopError);
}

TEST(SimulateClosedLoop, RejectsBadSpecs)
{
    ExperimentSpec spec = noise_free();
    spec.noise.sigma_w = -1.0;
    EXPECT_THROW(simulate_closed_loop(spec), std::invalid_argument);
    spec = noise_free();
    spec.duration = 0.2;
    EXPECT_THROW(simulate_closed_loop(spec), std::invalid_argument);
    spec = noise_free();
    spec.reference = SampledReference{{0.0, 1.0}};
    EXPECT_THROW(simulate_closed_loop(spec), std::invalid_argument);
}

TEST(MonteCarlo, SeedsAndSharedReference)
{
    ExperimentSpec spec = maglev_defaults();
    spec.duration = 0.4;
    const auto one = monte_carlo_datasets(spec, 1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_TRUE(one[0] == simulate_closed_loop(spec));

    const auto many = monte_carlo_datasets(spec, 100);
    ASSERT_EQ(many.size(), 100u);
    for (std::size_t i = 1; i < many.size(); ++i) {
        EXPECT_EQ(many[i].r, many[0].r);
        EXPECT_NE(many[i].y, many[i - 1].y);
    }
    EXPECT_THROW(monte_carlo_datasets(spec, 0), std::invalid_argument);
}

TEST(MonteCarlo, OutputVarianceGrowsWithNoiseScale)
{
    ExperimentSpec base = noise_free();
    base.duration = 0.32;
    const std::size_t index = 2000;
    const double clean = simulate_closed_loop(base).y[index];
    auto variance = [&](double sigma_w) {
        ExperimentSpec spec = base;
        spec.noise.sigma_w = sigma_w;
        double sum = 0.0;
        double sum2 = 0.0;
        const int runs = 1000;
        for (int i = 0; i < runs; ++i) {
            spec.noise.seed = 1000 + static_cast<std::uint64_t>(i);
            const double dev = simulate_closed_loop(spec).y[index] - clean;
            sum += dev;
            sum2 += dev * dev;
        }
        return (sum2 - sum * sum / runs) / (runs - 1);
    };
    const double small = variance(1e-4);
    const double large = variance(4e-4);
    EXPECT_GT(small, 0.0);
    // Output is linear in sigma_w with the same stream, so the ratio is exact.
    EXPECT_NEAR(large / small, 16.0, 1e-6);
}

TEST(GaussianStream, MomentsAreStandard)
{
    const auto [w, xi] = held_noise(42, 200000);
    double mw = 0.0, vw = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        mw += w[i];
        vw += w[i] * w[i];
        cross += w[i] * xi[i];
    }
    const double n = static_cast<double>(w.size());
    EXPECT_NEAR(mw / n, 0.0, 5.0 / std::sqrt(n));
    EXPECT_NEAR(vw / n, 1.0, 0.02);
    EXPECT_NEAR(cross / n, 0.0, 5.0 / std::sqrt(n));
}

TEST(DatasetCsv, RoundTripIsBitExact)
{
    ExperimentSpec spec = maglev_defaults();
    spec.duration = 0.3;
    const Dataset d = simulate_closed_loop(spec);
    std::stringstream ss;
    write_dataset_csv(ss, d);
    const Dataset back = read_dataset_csv(ss);
    EXPECT_TRUE(back == d);
}

TEST(DatasetCsv, MalformedInputIsRejected)
{
    std::stringstream bad_header("time,r,u,y\n0,0,0,0\n0.1,0,0,0\n");
    EXPECT_THROW(read_dataset_csv(bad_header), FormatError);
    std::stringstream bad_row("t,r,u,y\n0,0,0,0\n0.1,0,zero,0\n");
    EXPECT_THROW(read_dataset_csv(bad_row), FormatError);
    std::stringstream bad_grid("t,r,u,y\n0,0,0,0\n0.1,0,0,0\n0.25,0,0,0\n");
    EXPECT_THROW(read_dataset_csv(bad_grid), FormatError);
    std::stringstream short_file("t,r,u,y\n0,0,0,0\n");
    EXPECT_THROW(read_dataset_csv(short_file), FormatError);
}
