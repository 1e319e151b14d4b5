#pragma once

#include <stdexcept>
#include <string>

namespace cloopid {

/// The plant/controller interconnection is not internally stable.
class UnstableLoopError : public std::runtime_error {
public:
    explicit UnstableLoopError(const std::string& what) : std::runtime_error(what) {}
};

/// A least-squares regressor lost rank (insufficient excitation).
class RankDeficientError : public std::runtime_error {
public:
    explicit RankDeficientError(const std::string& what) : std::runtime_error(what) {}
};

/// Every candidate evaluated by the optimizer was infeasible.
class NoStableCandidateError : public std::runtime_error {
public:
    explicit NoStableCandidateError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file or configuration.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace cloopid
