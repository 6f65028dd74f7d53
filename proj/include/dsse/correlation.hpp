#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "dsse/common.hpp"

namespace dsse {

/// One area's time series of complex injected current (A) or complex power
/// (VA) at a fixed sampling interval.
struct LoadProfile {
    std::string area_id;
    double interval_min = 1.0;
    CVec samples;

    RVec real_part() const { return samples.real(); }
    RVec imag_part() const { return samples.imag(); }
};

/// Pearson correlation between a_t and b_{t+lag}, sample (N-1) normalization,
/// means and deviations taken over the overlapping window so the result is
/// in [-1, 1] exactly.
inline double empirical_correlation(std::span<const double> a,
                                    std::span<const double> b, int lag = 0) {
    if (a.size() != b.size())
        throw DimensionError("correlation: series lengths differ");
    const int n = static_cast<int>(a.size());
    if (lag < 0) throw DimensionError("correlation: negative lag; swap arguments");
    const int len = n - lag;
    if (len < 2) throw DimensionError("correlation: lag leaves fewer than 2 samples");

    double ma = 0.0, mb = 0.0;
    for (int t = 0; t < len; ++t) {
        ma += a[t];
        mb += b[t + lag];
    }
    ma /= len;
    mb /= len;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (int t = 0; t < len; ++t) {
        double da = a[t] - ma;
        double db = b[t + lag] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0)
        throw NumericalError("correlation undefined: zero-variance series");
    return sab / std::sqrt(saa * sbb);
}

inline double empirical_correlation(const RVec& a, const RVec& b, int lag = 0) {
    return empirical_correlation(std::span<const double>(a.data(), a.size()),
                                 std::span<const double>(b.data(), b.size()), lag);
}

/// Correlation between series a at window position s1 and series b at window
/// position s2 (chronological positions; s2 > s1 means b is sampled later).
inline double lagged_correlation(const RVec& a, const RVec& b, int s1, int s2) {
    if (s2 >= s1) return empirical_correlation(a, b, s2 - s1);
    return empirical_correlation(b, a, s1 - s2);
}

/// The CR block matrix: quadrants [[PP, PQ], [QP, QQ]], each quadrant an
/// nt x nt grid (chronological, oldest first) of n_vars x n_vars lag blocks.
/// Aligned with the stacked state vector: index = quadrant-part, then time
/// step, then variable.
struct CorrelationMatrix {
    int nt = 1;
    int n_vars = 0;
    RMat blocks;

    int dim() const { return 2 * n_vars * nt; }

    /// Flat index of (part, step, var); part 0 = real (P), 1 = imaginary (Q).
    int index(int part, int step, int var) const {
        return part * n_vars * nt + step * n_vars + var;
    }

    double min_eigenvalue() const {
        Eigen::SelfAdjointEigenSolver<RMat> es(blocks, Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    }

    void validate(double tol = 1e-9) const {
        require_dim(blocks.rows() == dim() && blocks.cols() == dim(),
                    "correlation matrix dimensions inconsistent with nt/n_vars");
        if (!blocks.isApprox(blocks.transpose(), 1e-9))
            throw NumericalError("correlation matrix not symmetric");
        for (int i = 0; i < dim(); ++i)
            if (std::abs(blocks(i, i) - 1.0) > tol)
                throw NumericalError("correlation matrix diagonal not unit at " +
                                     std::to_string(i));
        if (blocks.maxCoeff() > 1.0 + tol || blocks.minCoeff() < -1.0 - tol)
            throw NumericalError("correlation entries outside [-1, 1]");
    }
};

/// Empirical CR matrix from aligned per-variable series of the real (P proxy)
/// and imaginary (Q proxy) parts. Entry ((X,s1,a),(Y,s2,b)) is the lagged
/// correlation of series X_a against Y_b at lag s2-s1; stationarity makes the
/// result symmetric by construction.
inline CorrelationMatrix build_cr_matrix(const std::vector<RVec>& profiles_p,
                                         const std::vector<RVec>& profiles_q,
                                         int nt) {
    if (profiles_p.empty() || profiles_p.size() != profiles_q.size())
        throw DimensionError("build_cr_matrix: need matching P and Q profile lists");
    if (nt < 1) throw DimensionError("build_cr_matrix: nt must be >= 1");
    const int nv = static_cast<int>(profiles_p.size());
    const auto len = profiles_p[0].size();
    for (int v = 0; v < nv; ++v)
        if (profiles_p[v].size() != len || profiles_q[v].size() != len)
            throw DimensionError("build_cr_matrix: profile lengths differ at variable " +
                                 std::to_string(v));

    CorrelationMatrix cr;
    cr.nt = nt;
    cr.n_vars = nv;
    cr.blocks.resize(cr.dim(), cr.dim());

    auto series = [&](int part, int v) -> const RVec& {
        return part == 0 ? profiles_p[v] : profiles_q[v];
    };
    // Lag blocks depend only on |s2-s1| and orientation; compute one strip
    // per (partX, partY, lag) and replicate along the block diagonals.
    for (int px = 0; px < 2; ++px)
        for (int py = 0; py < 2; ++py)
            for (int s1 = 0; s1 < nt; ++s1)
                for (int s2 = 0; s2 < nt; ++s2) {
                    if (s1 > 0 && s2 > 0) {
                        // same lag as (s1-1, s2-1)
                        cr.blocks.block(cr.index(px, s1, 0), cr.index(py, s2, 0), nv, nv) =
                            cr.blocks.block(cr.index(px, s1 - 1, 0),
                                            cr.index(py, s2 - 1, 0), nv, nv);
                        continue;
                    }
                    for (int a = 0; a < nv; ++a)
                        for (int b = 0; b < nv; ++b) {
                            double r;
                            try {
                                r = lagged_correlation(series(px, a), series(py, b), s1, s2);
                            } catch (const NumericalError&) {
                                throw NumericalError(
                                    "zero-variance profile while correlating " +
                                    std::string(px == 0 ? "P" : "Q") + "[" +
                                    std::to_string(a) + "] with " +
                                    std::string(py == 0 ? "P" : "Q") + "[" +
                                    std::to_string(b) + "]");
                            }
                            cr.blocks(cr.index(px, s1, a), cr.index(py, s2, b)) = r;
                        }
                }
    // remove any floating asymmetry from the two evaluation orders
    cr.blocks = ((cr.blocks + cr.blocks.transpose()) / 2.0).eval();
    return cr;
}

/// Nearest positive semidefinite correlation matrix by alternating
/// projections with Dykstra's correction between the PSD cone and the
/// unit-diagonal affine set. Fixed point for inputs already PSD.
inline CorrelationMatrix nearest_pd_correlation(const CorrelationMatrix& cr,
                                                double tol = 1e-8,
                                                int max_iterations = 500) {
    const int n = static_cast<int>(cr.blocks.rows());
    RMat y = ((cr.blocks + cr.blocks.transpose()) / 2.0).eval();
    RMat ds = RMat::Zero(n, n);

    auto project_psd = [&](const RMat& m) {
        Eigen::SelfAdjointEigenSolver<RMat> es(m);
        RVec ev = es.eigenvalues().cwiseMax(0.0);
        return RMat(es.eigenvectors() * ev.asDiagonal() *
                    es.eigenvectors().transpose());
    };

    RMat x = y;
    for (int it = 0; it < max_iterations; ++it) {
        RMat r = y - ds;
        x = project_psd(r);
        ds = x - r;
        RMat y_next = x;
        y_next.diagonal().setOnes();
        double step = (y_next - y).norm();
        y = y_next;
        if (step < tol) break;
    }

    // Polish: clip any residual negative eigenvalues and restore the unit
    // diagonal by congruence scaling until within the PSD tolerance.
    for (int round = 0; round < 10; ++round) {
        Eigen::SelfAdjointEigenSolver<RMat> es(y);
        if (es.eigenvalues().minCoeff() >= -1e-10) break;
        RVec ev = es.eigenvalues().cwiseMax(0.0);
        y = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        RVec d = y.diagonal().cwiseMax(1e-12).cwiseSqrt();
        y = (d.cwiseInverse().asDiagonal() * y * d.cwiseInverse().asDiagonal()).eval();
        y.diagonal().setOnes();
        y = ((y + y.transpose()) / 2.0).eval();
    }

    CorrelationMatrix out = cr;
    out.blocks = y;
    return out;
}

}  // namespace dsse
