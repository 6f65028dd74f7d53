#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dsse {

using cxd = std::complex<double>;

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed network topology or inconsistent model structure.
class StructuralError : public Error {
public:
    using Error::Error;
};

/// Vector/matrix size disagreement between inputs.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Singular or indefinite matrix, undefined statistic, divergence.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Measurement set does not cover the state space.
class ObservabilityError : public Error {
public:
    using Error::Error;
};

/// Unreadable or inconsistent input file.
class ParseError : public Error {
public:
    using Error::Error;
};

inline void require_dim(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

inline constexpr double kPi = 3.14159265358979323846;

inline double wrap_angle(double rad) {
    while (rad > kPi) rad -= 2.0 * kPi;
    while (rad <= -kPi) rad += 2.0 * kPi;
    return rad;
}

}  // namespace dsse
