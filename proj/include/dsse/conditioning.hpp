#pragma once

#include <algorithm>
#include <vector>

#include "dsse/complex_gaussian.hpp"
#include "dsse/common.hpp"

namespace dsse {

/// Split of a complex state vector into measured and unmeasured entries.
struct Partition {
    std::vector<int> measured;
    std::vector<int> unmeasured;

    void validate(int dim) const {
        std::vector<char> hit(dim, 0);
        auto mark = [&](const std::vector<int>& v) {
            for (int i : v) {
                if (i < 0 || i >= dim)
                    throw DimensionError("partition index out of range");
                if (hit[i]++)
                    throw DimensionError("partition index repeated: " + std::to_string(i));
            }
        };
        mark(measured);
        mark(unmeasured);
        for (int i = 0; i < dim; ++i)
            if (!hit[i])
                throw DimensionError("partition does not cover index " + std::to_string(i));
    }
};

inline Partition make_partition(int dim, std::vector<int> measured) {
    Partition p;
    p.measured = std::move(measured);
    std::vector<char> is_meas(dim, 0);
    for (int i : p.measured) {
        if (i < 0 || i >= dim) throw DimensionError("measured index out of range");
        is_meas[i] = 1;
    }
    for (int i = 0; i < dim; ++i)
        if (!is_meas[i]) p.unmeasured.push_back(i);
    p.validate(dim);
    return p;
}

/// Widely linear conditional-mean gains: posterior mean shift is
/// A d + B conj(d) for innovation d on the measured block. lambda is the
/// Schur complement of the measured covariance in the augmented matrix.
struct ConditioningGains {
    CMat a;
    CMat b;
    CMat lambda;
};

/// Running count of conditioning solves, used to assert the single-iteration
/// contract of the estimator.
inline long& conditioning_invocations() {
    thread_local long count = 0;
    return count;
}

namespace detail {

struct CompositeParts {
    RVec mean;   // [Re; Im]
    RMat cov;    // 2N x 2N
};

inline CompositeParts to_composite(const ComplexGaussian& model) {
    const int n = model.dim();
    CompositeParts cp;
    cp.mean.resize(2 * n);
    cp.mean.head(n) = model.mean.real();
    cp.mean.tail(n) = model.mean.imag();
    cp.cov = real_composite_from_complex(model.gamma, model.c).to_matrix();
    return cp;
}

/// Real row indices of a set of complex indices in [Re; Im] stacking.
inline std::vector<int> composite_rows(const std::vector<int>& idx, int n) {
    std::vector<int> rows;
    rows.reserve(2 * idx.size());
    for (int i : idx) rows.push_back(i);
    for (int i : idx) rows.push_back(n + i);
    return rows;
}

inline RMat take(const RMat& m, const std::vector<int>& rows,
                 const std::vector<int>& cols) {
    RMat out(rows.size(), cols.size());
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < cols.size(); ++c) out(r, c) = m(rows[r], cols[c]);
    return out;
}

inline Eigen::LDLT<RMat> factor_measured_block(const RMat& s11) {
    Eigen::LDLT<RMat> ldlt(s11);
    RVec d = ldlt.vectorD().cwiseAbs();
    double dmax = d.maxCoeff();
    if (ldlt.info() != Eigen::Success || dmax <= 0.0 ||
        d.minCoeff() < 1e-12 * dmax)
        throw NumericalError(
            "measured block singular: redundant or degenerate measurements");
    return ldlt;
}

}  // namespace detail

/// Condition the joint distribution on observed values of the measured block
/// and return the posterior over the unmeasured block. Normative route: the
/// 2N-dimensional real composite Gaussian is conditioned with the standard
/// Schur-complement update and the result mapped back to (mean, gamma, c).
inline ComplexGaussian condition(const ComplexGaussian& model, const Partition& part,
                                 const CVec& observed) {
    const int n = model.dim();
    part.validate(n);
    const int m = static_cast<int>(part.measured.size());
    require_dim(static_cast<int>(observed.size()) == m,
                "observed vector length != measured index count");
    ++conditioning_invocations();

    if (m == 0) {
        ComplexGaussian out;
        const int u = static_cast<int>(part.unmeasured.size());
        out.mean.resize(u);
        out.gamma.resize(u, u);
        out.c.resize(u, u);
        for (int i = 0; i < u; ++i) {
            out.mean(i) = model.mean(part.unmeasured[i]);
            for (int j = 0; j < u; ++j) {
                out.gamma(i, j) = model.gamma(part.unmeasured[i], part.unmeasured[j]);
                out.c(i, j) = model.c(part.unmeasured[i], part.unmeasured[j]);
            }
        }
        return out;
    }

    auto cp = detail::to_composite(model);
    auto rows1 = detail::composite_rows(part.measured, n);
    auto rows2 = detail::composite_rows(part.unmeasured, n);
    RMat s11 = detail::take(cp.cov, rows1, rows1);
    RMat s21 = detail::take(cp.cov, rows2, rows1);
    RMat s22 = detail::take(cp.cov, rows2, rows2);

    auto ldlt = detail::factor_measured_block(s11);
    RMat gain = ldlt.solve(s21.transpose()).transpose();  // s21 * s11^-1

    RVec innov(2 * m);
    innov.head(m) = observed.real();
    innov.tail(m) = observed.imag();
    for (int i = 0; i < 2 * m; ++i) innov(i) -= cp.mean(rows1[i]);

    RVec mean1(2 * static_cast<int>(part.unmeasured.size()));
    for (size_t i = 0; i < rows2.size(); ++i) mean1(i) = cp.mean(rows2[i]);
    RVec post_mean = mean1 + gain * innov;
    RMat post_cov = s22 - gain * s21.transpose();

    const int u = static_cast<int>(part.unmeasured.size());
    ComplexGaussian out;
    out.mean.resize(u);
    for (int i = 0; i < u; ++i)
        out.mean(i) = cxd(post_mean(i), post_mean(u + i));
    RealCompositeCovariance k;
    k.rr = post_cov.topLeftCorner(u, u);
    k.ri = post_cov.topRightCorner(u, u);
    k.ir = post_cov.bottomLeftCorner(u, u);
    k.ii = post_cov.bottomRightCorner(u, u);
    auto [gamma, c] = complex_from_real_composite(k);
    out.gamma = 0.5 * (gamma + gamma.adjoint());
    out.c = 0.5 * (c + c.transpose());
    return out;
}

/// A and B recovered from the real-composite conditional-mean operator, plus
/// the corrected closed-form lambda = conj(gamma11) - C11^H gamma11^-1 C11.
inline ConditioningGains conditioning_gains(const ComplexGaussian& model,
                                            const Partition& part) {
    const int n = model.dim();
    part.validate(n);
    const int m = static_cast<int>(part.measured.size());
    const int u = static_cast<int>(part.unmeasured.size());
    require_dim(m > 0, "conditioning_gains: empty measured set");

    auto cp = detail::to_composite(model);
    auto rows1 = detail::composite_rows(part.measured, n);
    auto rows2 = detail::composite_rows(part.unmeasured, n);
    RMat s11 = detail::take(cp.cov, rows1, rows1);
    RMat s21 = detail::take(cp.cov, rows2, rows1);
    auto ldlt = detail::factor_measured_block(s11);
    RMat g = ldlt.solve(s21.transpose()).transpose();

    RMat grr = g.topLeftCorner(u, m);
    RMat gri = g.topRightCorner(u, m);
    RMat gir = g.bottomLeftCorner(u, m);
    RMat gii = g.bottomRightCorner(u, m);
    const cxd j(0.0, 1.0);

    ConditioningGains out;
    out.a = 0.5 * ((grr + gii).cast<cxd>() + j * (gir - gri).cast<cxd>());
    out.b = 0.5 * ((grr - gii).cast<cxd>() + j * (gir + gri).cast<cxd>());

    CMat g11(m, m), c11(m, m);
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) {
            g11(r, c) = model.gamma(part.measured[r], part.measured[c]);
            c11(r, c) = model.c(part.measured[r], part.measured[c]);
        }
    out.lambda = g11.conjugate() -
                 c11.adjoint() * g11.partialPivLu().solve(c11);
    out.lambda = 0.5 * (out.lambda + out.lambda.adjoint());
    return out;
}

/// Closed-form widely linear conditioning on the complex blocks directly.
/// Algebraically identical to condition(); kept as the second route of the
/// dual-path check.
inline ComplexGaussian condition_closed_form(const ComplexGaussian& model,
                                             const Partition& part,
                                             const CVec& observed) {
    const int n = model.dim();
    part.validate(n);
    const int m = static_cast<int>(part.measured.size());
    const int u = static_cast<int>(part.unmeasured.size());
    require_dim(static_cast<int>(observed.size()) == m, "observed length mismatch");
    if (m == 0) return condition(model, part, observed);

    auto pick = [&](const CMat& src, const std::vector<int>& rows,
                    const std::vector<int>& cols) {
        CMat out(rows.size(), cols.size());
        for (size_t r = 0; r < rows.size(); ++r)
            for (size_t c = 0; c < cols.size(); ++c) out(r, c) = src(rows[r], cols[c]);
        return out;
    };
    CMat g11 = pick(model.gamma, part.measured, part.measured);
    CMat g21 = pick(model.gamma, part.unmeasured, part.measured);
    CMat g12 = pick(model.gamma, part.measured, part.unmeasured);
    CMat g22 = pick(model.gamma, part.unmeasured, part.unmeasured);
    CMat c11 = pick(model.c, part.measured, part.measured);
    CMat c21 = pick(model.c, part.unmeasured, part.measured);
    CMat c12 = pick(model.c, part.measured, part.unmeasured);
    CMat c22 = pick(model.c, part.unmeasured, part.unmeasured);

    Eigen::PartialPivLU<CMat> p_lu(g11);
    CMat lambda = g11.conjugate() - c11.adjoint() * p_lu.solve(c11);
    Eigen::PartialPivLU<CMat> l_lu(lambda);

    // B = (C21 - G21 P^-1 C11) Lambda^-1,  A = G21 P^-1 - B conj(C11) P^-1
    CMat b = l_lu.solve((c21 - g21 * p_lu.solve(c11)).adjoint()).adjoint();
    CMat g21_pinv = p_lu.solve(g21.adjoint()).adjoint();
    CMat a = g21_pinv - p_lu.solve((b * c11.conjugate()).adjoint()).adjoint();

    CVec mu1(m), mu2(u);
    for (int i = 0; i < m; ++i) mu1(i) = model.mean(part.measured[i]);
    for (int i = 0; i < u; ++i) mu2(i) = model.mean(part.unmeasured[i]);
    CVec d = observed - mu1;

    ComplexGaussian out;
    out.mean = mu2 + a * d + b * d.conjugate();
    out.gamma = g22 - a * g12 - b * c12.conjugate();
    out.c = c22 - a * c12 - b * g12.conjugate();
    out.gamma = 0.5 * (out.gamma + out.gamma.adjoint());
    out.c = 0.5 * (out.c + out.c.transpose());
    return out;
}

/// One window step: measured indices local to that step's variable block,
/// with the observed values.
struct WindowStep {
    std::vector<int> measured;
    CVec observed;
};

/// Rolling-window conditioning over a model stacked across nt time steps
/// (chronological, n_vars = dim/nt per step). The per-step corrective sum is
/// realized as a single joint conditioning over the union of the measured
/// entries, which is exact; with nt = 1 this is condition() itself.
inline ComplexGaussian condition_temporal(const ComplexGaussian& model_nt,
                                          const std::vector<WindowStep>& window,
                                          int nt) {
    require_dim(nt >= 1 && static_cast<int>(window.size()) == nt,
                "window must supply one entry per time step");
    require_dim(model_nt.dim() % nt == 0, "model dimension not divisible by nt");
    const int n_vars = model_nt.dim() / nt;

    std::vector<int> measured;
    int total = 0;
    for (const auto& step : window) total += static_cast<int>(step.measured.size());
    CVec observed(total);
    int at = 0;
    for (int s = 0; s < nt; ++s) {
        const auto& step = window[s];
        require_dim(static_cast<int>(step.observed.size()) ==
                        static_cast<int>(step.measured.size()),
                    "window step " + std::to_string(s) + ": observed/index mismatch");
        for (size_t k = 0; k < step.measured.size(); ++k) {
            int local = step.measured[k];
            require_dim(local >= 0 && local < n_vars,
                        "window step measured index out of range");
            measured.push_back(s * n_vars + local);
            observed(at++) = step.observed(static_cast<int>(k));
        }
    }
    return condition(model_nt, make_partition(model_nt.dim(), std::move(measured)),
                     observed);
}

}  // namespace dsse
