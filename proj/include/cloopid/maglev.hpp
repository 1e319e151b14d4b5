#pragma once

// Linearized magnetic-levitation benchmark: third-order unstable plant, its
// H-infinity controller, and a PID alternative used as a mismatched virtual
// controller.

#include <array>
#include <vector>

#include "cloopid/lti.hpp"

namespace cloopid::maglev {

/// theta = [theta1, theta2, theta3, theta4] of theta1 / (p^3 + theta2 p^2 + theta3 p + theta4).
inline constexpr std::array<double, 4> kTheta{-7.148, 13.34, -494.4, -6593.0};

/// Electromagnet resistance (ohm), inductance (H) and ball mass (kg).
inline constexpr double kResistance = 27.03;
inline constexpr double kInductance = 2.027;
inline constexpr double kMass = 0.358;
/// Force constants at the equilibrium point: current gain (N/A), position stiffness (N/m).
inline constexpr double kCurrentGain = 5.187;
inline constexpr double kPositionStiffness = 177.0;

inline constexpr double kSamplePeriod = 1e-4;
inline constexpr double kOutputNoiseScale = 0.2e-3;
inline constexpr double kInputDisturbanceScale = 10.0;
inline constexpr double kPulseWidth = 0.25;
inline constexpr double kPulseHeight = 1e-3;

struct PidGains {
    double kp;
    double ti;
    double td;
    double filter;  // derivative filter time constant
};

inline constexpr PidGains kPid{-1798.1, 0.1438, 0.1778, 8.6336e-4};

inline TransferFunction plant()
{
    return TransferFunction({kTheta[0]}, {1.0, kTheta[1], kTheta[2], kTheta[3]});
}

/// Controller zeros, poles and gain as printed for the benchmark.
inline TransferFunction controller()
{
    const std::vector<Complex> z{{-9.294, 0.0}, {-13.99, 0.0}, {-20.9, 0.0}};
    const std::vector<Complex> p{{-399.9, 0.0}, {-0.1, 0.0}, {-121.5, 141.1}, {-121.5, -141.1}};
    return from_zpk(z, p, -1.197e8);
}

/// kp (1 + 1/(ti p) + td p / (1 + filter p)) over the common denominator ti p (1 + filter p).
inline TransferFunction pid_controller(const PidGains& g = kPid)
{
    const double a2 = g.ti * g.filter + g.ti * g.td;
    const double a1 = g.ti + g.filter;
    return TransferFunction({g.kp * a2, g.kp * a1, g.kp}, {g.ti * g.filter, g.ti, 0.0});
}

} // namespace cloopid::maglev
