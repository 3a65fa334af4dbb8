// Shared aliases and error types for the qfilter library.
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <stdexcept>
#include <string>

namespace qfilter {

using Complex = std::complex<double>;
using Operator = Eigen::MatrixXcd;   // dense complex matrix, value semantics
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr char kVersion[] = "0.1.0";

// Bad mathematical input (non-positive matrix, singular solve, ...).
struct domain_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Inconsistent model or configuration.
struct model_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed or invalid run configuration (CLI exit code 2).
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite state encountered mid-integration (CLI exit code 3).
struct blowup_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace qfilter
