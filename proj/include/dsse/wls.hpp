#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsse/common.hpp"
#include "dsse/complex_gaussian.hpp"
#include "dsse/correlation.hpp"
#include "dsse/estimator.hpp"
#include "dsse/network.hpp"

namespace dsse {

struct WlsOptions {
    bool correlated_weights = true;  // full W from the spatial correlation
    int max_iterations = 50;
    double tolerance = 1e-6;         // max absolute update, per-unit states
};

struct WlsResult {
    CVec voltages;        // complex bus voltages, state order
    RVec v_mag;           // |V| in volts
    RVec v_ang;           // radians
    int iterations = 0;
    bool converged = false;
    double residual_norm = 0.0;
    RMat cov_states;      // posterior covariance over (|V|/|vref|, angle) states
    RVec var_mag;         // delta-method variance of |V| (volt^2)
    RVec var_ang;         // variance of angle (rad^2)
    double quality = 0.0; // ln(1/trace) of the composite (Re,Im) voltage cov
};

/// Iterative Gauss-Newton WLS on x = (|V|, angle) per non-reference bus and
/// phase, minimizing (z - h(x))^T W (z - h(x)). Measurements are magnitude
/// and angle pairs of injected currents, branch currents and bus voltages;
/// the reference voltage is the known datum of h. W is the inverse of the
/// measurement covariance; with correlated_weights the injected-current
/// entries carry the full spatial covariance from the correlation matrix,
/// otherwise W is diagonal.
inline WlsResult wls_estimate(const RadialNetwork& net, const MeasurementStep& step,
                              const CorrelationMatrix* spatial_cr = nullptr,
                              WlsOptions options = {}) {
    const int p = net.phase_count();
    const int sd = net.state_dim();
    const int nx = 2 * sd;

    require_dim(static_cast<int>(step.vref.value.size()) == p,
                "reference voltage needs one value per phase");
    CVec vref(p);
    for (int ph = 0; ph < p; ++ph) vref(ph) = step.vref.value[ph];

    // i_inj(v) = rhs0 - lap * v  (reduced nodal equations)
    CMat lap = CMat::Zero(sd, sd);
    CVec rhs0 = CVec::Zero(sd);
    for (int b = 0; b < net.branch_count(); ++b) {
        const Branch& br = net.branches()[b];
        CMat y = br.impedance.inverse();
        bool from_ref = br.from_bus == net.reference_bus();
        bool to_ref = br.to_bus == net.reference_bus();
        if (from_ref || to_ref) {
            int k = net.order_of(from_ref ? br.to_bus : br.from_bus);
            lap.block(k * p, k * p, p, p) += y;
            rhs0.segment(k * p, p) += y * vref;
        } else {
            int a = net.order_of(br.from_bus);
            int c = net.order_of(br.to_bus);
            lap.block(a * p, a * p, p, p) += y;
            lap.block(c * p, c * p, p, p) += y;
            lap.block(a * p, c * p, p, p) -= y;
            lap.block(c * p, a * p, p, p) -= y;
        }
    }
    FlowMatrices fm = build_flow_matrices(net);

    struct Row {
        StateKind kind;
        int pos;      // state-order element index
        cxd value;
        double eps;
        bool is_injection;
    };
    std::vector<Row> rows;
    for (const auto& e : step.entries) {
        int pos = net.order_of(e.target.element) * p + e.target.phase;
        rows.push_back({e.target.kind, pos, e.value, e.epsilon_pct,
                        e.target.kind == StateKind::injected_current});
    }
    const int nz = 2 * static_cast<int>(rows.size());
    if (nz < nx)
        throw ObservabilityError(
            "WLS under-determined: " + std::to_string(nz) + " measurement rows for " +
            std::to_string(nx) + " states; add pseudo measurements");

    // Measurement covariance, first in rectangular (Re, Im) coordinates, then
    // transformed per entry to (magnitude, angle). The rectangular form also
    // weights the fallback iterations below.
    RMat sigma_rect = RMat::Zero(nz, nz);
    auto polar_jac = [](cxd q) {
        double m = std::abs(q);
        if (m < 1e-12)
            throw NumericalError("WLS: zero-magnitude measurement, angle undefined");
        RMat j(2, 2);
        j << q.real() / m, q.imag() / m, -q.imag() / (m * m), q.real() / (m * m);
        return j;
    };
    std::vector<RMat> jz(rows.size());
    for (size_t k = 0; k < rows.size(); ++k) jz[k] = polar_jac(rows[k].value);

    if (options.correlated_weights && spatial_cr != nullptr) {
        // Full covariance over injection entries from the spatial correlation.
        std::vector<int> inj_rows;
        CVec sds(sd);
        sds.setZero();
        for (size_t k = 0; k < rows.size(); ++k)
            if (rows[k].is_injection) {
                inj_rows.push_back(static_cast<int>(k));
                sds(rows[k].pos) = sd_from_error(rows[k].value, rows[k].eps);
            }
        CorrelationMatrix spatial = detail::slice_time_steps(*spatial_cr, 1);
        require_dim(spatial.n_vars == sd, "correlation variables != network states");
        auto [gam, cc] = assemble_complex_covariance(sds, spatial, false);
        RealCompositeCovariance kk = real_composite_from_complex(gam, cc);
        for (int a : inj_rows)
            for (int b : inj_rows) {
                int pa = rows[a].pos, pb = rows[b].pos;
                sigma_rect.block(2 * a, 2 * b, 2, 2) << kk.rr(pa, pb), kk.ri(pa, pb),
                    kk.ir(pa, pb), kk.ii(pa, pb);
            }
    }
    for (size_t k = 0; k < rows.size(); ++k) {
        if (options.correlated_weights && spatial_cr != nullptr && rows[k].is_injection)
            continue;
        cxd sdv = sd_from_error(rows[k].value, rows[k].eps);
        sigma_rect.block(2 * k, 2 * k, 2, 2) << sdv.real() * sdv.real(), 0.0, 0.0,
            sdv.imag() * sdv.imag();
    }
    RMat sigma_polar = RMat::Zero(nz, nz);
    for (size_t a = 0; a < rows.size(); ++a)
        for (size_t b = 0; b < rows.size(); ++b)
            sigma_polar.block(2 * a, 2 * b, 2, 2) =
                jz[a] * sigma_rect.block(2 * a, 2 * b, 2, 2) * jz[b].transpose();
    // floor to keep W finite for near-exact measurements
    for (int k = 0; k < nz; ++k) {
        sigma_rect(k, k) = std::max(sigma_rect(k, k), 1e-18);
        sigma_polar(k, k) = std::max(sigma_polar(k, k), 1e-18);
    }
    auto invert_cov = [&](const RMat& s) {
        Eigen::LDLT<RMat> ldlt(s);
        if (ldlt.info() != Eigen::Success)
            throw NumericalError("WLS: measurement covariance not factorizable");
        return RMat(ldlt.solve(RMat::Identity(nz, nz)));
    };
    RMat w_rect = invert_cov(sigma_rect);
    RMat w_polar = invert_cov(sigma_polar);

    // Flat start at the reference voltage, magnitudes normalized per phase.
    RVec nm(sd);
    for (int k = 0; k < sd; ++k) nm(k) = std::abs(vref(k % p));
    RVec x_mag = RVec::Ones(sd);
    RVec x_ang(sd);
    for (int k = 0; k < sd; ++k) x_ang(k) = std::arg(vref(k % p));

    RVec z_polar(nz);
    for (size_t k = 0; k < rows.size(); ++k) {
        z_polar(2 * k) = std::abs(rows[k].value);
        z_polar(2 * k + 1) = std::arg(rows[k].value);
    }

    bool any_branch = false;
    for (const Row& r : rows) any_branch |= r.kind == StateKind::branch_current;
    double z_scale = 0.0;
    for (size_t k = 0; k < rows.size(); ++k)
        z_scale = std::max(z_scale, z_polar(2 * k));

    WlsResult res;
    RMat jac(nz, nx);
    RVec resid(nz);
    double last_resid = 0.0;
    bool last_polar = false;
    for (int it = 1; it <= options.max_iterations; ++it) {
        res.iterations = it;
        CVec phasor(sd), v(sd);
        for (int k = 0; k < sd; ++k) {
            phasor(k) = std::exp(cxd(0.0, x_ang(k)));
            v(k) = nm(k) * x_mag(k) * phasor(k);
        }
        CVec inj = rhs0 - lap * v;
        CVec ibr = fm.bibc * inj;

        // Complex sensitivities of injections w.r.t. the two state groups:
        // d inj / d mag = -lap * diag(nm .* phasor), d inj / d ang = -lap * diag(j v).
        CMat s_mag = -lap * (nm.cast<cxd>().cwiseProduct(phasor)).asDiagonal();
        CMat s_ang = -lap * (cxd(0.0, 1.0) * v).asDiagonal();
        CMat b_mag, b_ang;
        if (any_branch) {
            b_mag = fm.bibc * s_mag;
            b_ang = fm.bibc * s_ang;
        }

        // The polar current rows degenerate where a current sits at zero
        // (flat start makes every injection zero); such iterations run on
        // rectangular rows with the rectangular weights instead.
        std::vector<cxd> q_of(rows.size());
        bool use_polar = true;
        for (size_t k = 0; k < rows.size(); ++k) {
            switch (rows[k].kind) {
                case StateKind::injected_current: q_of[k] = inj(rows[k].pos); break;
                case StateKind::branch_current: q_of[k] = ibr(rows[k].pos); break;
                case StateKind::bus_voltage: q_of[k] = v(rows[k].pos); break;
            }
            if (rows[k].kind != StateKind::bus_voltage &&
                std::abs(q_of[k]) < 1e-6 * z_scale)
                use_polar = false;
        }
        last_polar = use_polar;

        for (size_t k = 0; k < rows.size(); ++k) {
            cxd q = q_of[k];
            Eigen::RowVectorXcd dq_dmag = Eigen::RowVectorXcd::Zero(sd);
            Eigen::RowVectorXcd dq_dang = Eigen::RowVectorXcd::Zero(sd);
            switch (rows[k].kind) {
                case StateKind::injected_current:
                    dq_dmag = s_mag.row(rows[k].pos);
                    dq_dang = s_ang.row(rows[k].pos);
                    break;
                case StateKind::branch_current:
                    dq_dmag = b_mag.row(rows[k].pos);
                    dq_dang = b_ang.row(rows[k].pos);
                    break;
                case StateKind::bus_voltage:
                    dq_dmag(rows[k].pos) = nm(rows[k].pos) * phasor(rows[k].pos);
                    dq_dang(rows[k].pos) = cxd(0.0, 1.0) * q;
                    break;
            }
            if (use_polar) {
                double m = std::max(std::abs(q), 1e-12);
                resid(2 * k) = z_polar(2 * k) - m;
                resid(2 * k + 1) = wrap_angle(z_polar(2 * k + 1) - std::arg(q));
                cxd cq = std::conj(q);
                for (int s = 0; s < sd; ++s) {
                    jac(2 * k, s) = (cq * dq_dmag(s)).real() / m;
                    jac(2 * k, sd + s) = (cq * dq_dang(s)).real() / m;
                    jac(2 * k + 1, s) = (cq * dq_dmag(s)).imag() / (m * m);
                    jac(2 * k + 1, sd + s) = (cq * dq_dang(s)).imag() / (m * m);
                }
            } else {
                resid(2 * k) = rows[k].value.real() - q.real();
                resid(2 * k + 1) = rows[k].value.imag() - q.imag();
                for (int s = 0; s < sd; ++s) {
                    jac(2 * k, s) = dq_dmag(s).real();
                    jac(2 * k, sd + s) = dq_dang(s).real();
                    jac(2 * k + 1, s) = dq_dmag(s).imag();
                    jac(2 * k + 1, sd + s) = dq_dang(s).imag();
                }
            }
        }

        const RMat& w = use_polar ? w_polar : w_rect;
        RMat jtw = jac.transpose() * w;
        RMat normal = jtw * jac;
        Eigen::LDLT<RMat> ldlt(normal);
        RVec d_abs = ldlt.vectorD().cwiseAbs();
        if (ldlt.info() != Eigen::Success ||
            d_abs.minCoeff() < 1e-14 * d_abs.maxCoeff())
            throw ObservabilityError("WLS normal matrix singular: states unobservable");
        RVec dx = ldlt.solve(jtw * resid);

        x_mag += dx.head(sd);
        x_ang += dx.tail(sd);
        last_resid = std::sqrt(std::max(0.0, resid.dot(w * resid)));
        if (use_polar && dx.cwiseAbs().maxCoeff() < options.tolerance) {
            res.converged = true;
            break;
        }
        if (!dx.allFinite()) break;
    }

    res.voltages.resize(sd);
    res.v_mag.resize(sd);
    res.v_ang.resize(sd);
    for (int k = 0; k < sd; ++k) {
        res.v_mag(k) = nm(k) * x_mag(k);
        res.v_ang(k) = wrap_angle(x_ang(k));
        res.voltages(k) = res.v_mag(k) * std::exp(cxd(0.0, res.v_ang(k)));
    }
    res.residual_norm = last_resid;

    // Posterior covariance of the states and its delta-method conversions.
    const RMat& w_final = last_polar ? w_polar : w_rect;
    RMat jtw = jac.transpose() * w_final;
    RMat normal = jtw * jac;
    res.cov_states = normal.ldlt().solve(RMat::Identity(nx, nx));
    res.var_mag.resize(sd);
    res.var_ang.resize(sd);
    double tr_composite = 0.0;
    for (int k = 0; k < sd; ++k) {
        double vm = res.cov_states(k, k) * nm(k) * nm(k);
        double va = res.cov_states(sd + k, sd + k);
        res.var_mag(k) = std::max(0.0, vm);
        res.var_ang(k) = std::max(0.0, va);
        // composite (Re, Im) covariance trace = var(|V|) + |V|^2 var(ang)
        // to first order (rotation-invariant trace of J Cov J^T)
        tr_composite += vm + res.v_mag(k) * res.v_mag(k) * va;
    }
    res.quality = tr_composite > 0.0 ? std::log(1.0 / tr_composite)
                                     : std::numeric_limits<double>::infinity();
    return res;
}

}  // namespace dsse
