#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Eigenvalues>

#include "dsse/common.hpp"
#include "dsse/correlation.hpp"

namespace dsse {

/// Covariance blocks of the real composite vector [Re(y); Im(y)]:
/// rr = Cov(Re,Re), ii = Cov(Im,Im), ri = Cov(Re,Im), ir = Cov(Im,Re) = ri^T.
struct RealCompositeCovariance {
    RMat rr, ri, ir, ii;

    int dim() const { return static_cast<int>(rr.rows()); }

    RMat to_matrix() const {
        const int n = dim();
        RMat m(2 * n, 2 * n);
        m.topLeftCorner(n, n) = rr;
        m.topRightCorner(n, n) = ri;
        m.bottomLeftCorner(n, n) = ir;
        m.bottomRightCorner(n, n) = ii;
        return m;
    }

    double min_eigenvalue() const {
        Eigen::SelfAdjointEigenSolver<RMat> es(to_matrix(), Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }
};

/// Improper (widely linear) complex Gaussian: mean, Hermitian covariance
/// gamma = E[(y-mu)(y-mu)^H] and symmetric pseudo-covariance
/// c = E[(y-mu)(y-mu)^T]. Validity means the augmented matrix
/// [[gamma, c], [c*, gamma*]] is PSD.
struct ComplexGaussian {
    CVec mean;
    CMat gamma;
    CMat c;

    int dim() const { return static_cast<int>(mean.size()); }

    CMat augmented() const {
        const int n = dim();
        CMat a(2 * n, 2 * n);
        a.topLeftCorner(n, n) = gamma;
        a.topRightCorner(n, n) = c;
        a.bottomLeftCorner(n, n) = c.conjugate();
        a.bottomRightCorner(n, n) = gamma.conjugate();
        return a;
    }

    double augmented_min_eigenvalue() const {
        Eigen::SelfAdjointEigenSolver<CMat> es(augmented(), Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }

    void validate(double tol = 1e-8) const {
        require_dim(gamma.rows() == dim() && gamma.cols() == dim() &&
                        c.rows() == dim() && c.cols() == dim(),
                    "gaussian mean/covariance dimensions inconsistent");
        double scale = std::max(1.0, gamma.norm());
        if ((gamma - gamma.adjoint()).norm() > tol * scale)
            throw NumericalError("gamma not Hermitian");
        if ((c - c.transpose()).norm() > tol * scale)
            throw NumericalError("pseudo-covariance not symmetric");
        if (augmented_min_eigenvalue() < -tol * scale)
            throw NumericalError("augmented covariance not PSD");
    }
};

/// Split (gamma, c) into the real composite blocks (standard identities
/// rr = Re(gamma+c)/2, ii = Re(gamma-c)/2, ir = Im(gamma+c)/2,
/// ri = Im(c-gamma)/2).
inline RealCompositeCovariance real_composite_from_complex(const CMat& gamma,
                                                           const CMat& c) {
    RealCompositeCovariance k;
    k.rr = 0.5 * (gamma + c).real();
    k.ii = 0.5 * (gamma - c).real();
    k.ir = 0.5 * (gamma + c).imag();
    k.ri = 0.5 * (c - gamma).imag();
    return k;
}

/// Inverse of real_composite_from_complex.
inline std::pair<CMat, CMat> complex_from_real_composite(
    const RealCompositeCovariance& k) {
    const cxd j(0.0, 1.0);
    CMat gamma = (k.rr + k.ii).cast<cxd>() + j * (k.ir - k.ri).cast<cxd>();
    CMat c = (k.rr - k.ii).cast<cxd>() + j * (k.ir + k.ri).cast<cxd>();
    return {gamma, c};
}

/// Standard deviation of the real and imaginary parts from a mean value and
/// an error percentage interpreted as the 3-sigma band:
/// sigma_re + j sigma_im = mu * eps / 300. Components may come out negative;
/// absolute values are taken wherever they are used as standard deviations.
inline cxd sd_from_error(cxd mean, double epsilon_pct) {
    if (epsilon_pct < 0.0) throw NumericalError("negative error percentage");
    return mean * (epsilon_pct / 300.0);
}

/// Covariance and pseudo-covariance from per-variable SDs and a correlation
/// matrix: the composite blocks are outer products of |sigma| components
/// Hadamard the CR quadrants, then mapped to (gamma, c).
inline std::pair<CMat, CMat> assemble_complex_covariance(
    const CVec& sd, const CorrelationMatrix& cr, bool check_psd = true) {
    const int n = static_cast<int>(sd.size());
    require_dim(n == cr.n_vars * cr.nt,
                "sd length " + std::to_string(n) + " != correlation variables " +
                    std::to_string(cr.n_vars * cr.nt));
    if (check_psd && cr.min_eigenvalue() < -1e-10)
        throw NumericalError(
            "correlation matrix not PSD; repair it with nearest_pd_correlation");

    RVec sr = sd.real().cwiseAbs();
    RVec si = sd.imag().cwiseAbs();
    RealCompositeCovariance k;
    k.rr = (sr * sr.transpose()).cwiseProduct(cr.blocks.topLeftCorner(n, n));
    k.ri = (sr * si.transpose()).cwiseProduct(cr.blocks.topRightCorner(n, n));
    k.ir = (si * sr.transpose()).cwiseProduct(cr.blocks.bottomLeftCorner(n, n));
    k.ii = (si * si.transpose()).cwiseProduct(cr.blocks.bottomRightCorner(n, n));
    return complex_from_real_composite(k);
}

}  // namespace dsse
