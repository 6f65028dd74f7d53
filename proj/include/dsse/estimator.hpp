#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsse/common.hpp"
#include "dsse/conditioning.hpp"
#include "dsse/complex_gaussian.hpp"
#include "dsse/correlation.hpp"
#include "dsse/network.hpp"

namespace dsse {

enum class StateKind { injected_current, branch_current, bus_voltage };
enum class EstimatorMode { cs, cst };

inline const char* to_string(StateKind k) {
    switch (k) {
        case StateKind::injected_current: return "injected_current";
        case StateKind::branch_current: return "branch_current";
        default: return "bus_voltage";
    }
}

inline const char* to_string(EstimatorMode m) {
    return m == EstimatorMode::cs ? "CS" : "CST";
}

/// A state address: bus id for injections and voltages, downstream bus id
/// for branch currents.
struct Target {
    StateKind kind = StateKind::injected_current;
    std::string element;
    int phase = 0;

    bool operator<(const Target& o) const {
        return std::tie(kind, element, phase) < std::tie(o.kind, o.element, o.phase);
    }
};

struct MeasurementEntry {
    Target target;
    cxd value{};
    double epsilon_pct = 0.0;
    bool is_real_measurement = false;
};

struct ReferenceVoltage {
    std::vector<cxd> value;  // one entry per phase
    double epsilon_pct = 3.0;
};

struct MeasurementStep {
    std::vector<MeasurementEntry> entries;
    ReferenceVoltage vref;
};

/// Per-time-step measurement data. Step 0 is the oldest step of the window.
struct MeasurementSet {
    std::vector<MeasurementStep> steps;

    void validate() const {
        for (size_t s = 0; s < steps.size(); ++s) {
            std::map<Target, int> seen;
            for (const auto& e : steps[s].entries) {
                if (e.epsilon_pct < 0.0)
                    throw NumericalError("negative epsilon in measurement set");
                if (++seen[e.target] > 1)
                    throw StructuralError("duplicate measurement target " +
                                          e.target.element + " at step " +
                                          std::to_string(s));
            }
        }
    }
};

struct EstimatorOptions {
    EstimatorMode mode = EstimatorMode::cst;
    int nt = 3;
    bool full_covariance = false;   // keep full gamma/c over all IBV states
    bool quality_all_states = false;
    double vref_epsilon_pct = 3.0;  // used when a step omits its own value
};

/// Posterior over [injected currents; branch currents; bus voltages] for all
/// window steps, with per-state composite variance information.
struct StateEstimate {
    EstimatorMode mode = EstimatorMode::cs;
    int nt = 1;
    int state_dim = 0;    // p * (n - 1)
    int phase_count = 1;

    CVec mu_ibv;
    RVec gamma_diag;      // Re diag of gamma_IBV (diagonal of a Hermitian)
    CVec c_diag;          // diag of C_IBV
    RVec var_mag;
    RVec var_ang;
    std::optional<CMat> gamma_ibv;
    std::optional<CMat> c_ibv;
    long conditioning_calls = 0;

    int dim() const { return 3 * nt * state_dim; }

    /// Flat index: section (0 inj, 1 branch, 2 voltage), window step, element.
    int index(int section, int step, int elem) const {
        return section * nt * state_dim + step * state_dim + elem;
    }

    /// Voltage vector of the given window step.
    CVec voltages(int step) const {
        return mu_ibv.segment(index(2, step, 0), state_dim);
    }
};

/// Delta-method variance of magnitude and angle per state from the per-state
/// 2x2 composite covariance: VAR(|X|) = x^T K x / |x|^2 and
/// VAR(angle X) = xp^T K xp / |x|^4 with x = [Re, Im], xp = [-Im, Re].
inline std::pair<RVec, RVec> magnitude_angle_variance(const CVec& mean,
                                                      const RVec& gamma_diag,
                                                      const CVec& c_diag,
                                                      bool strict = true) {
    const int n = static_cast<int>(mean.size());
    require_dim(gamma_diag.size() == n && c_diag.size() == n,
                "magnitude_angle_variance: diagonal lengths mismatch");
    RVec vmag(n), vang(n);
    for (int s = 0; s < n; ++s) {
        double kuu = 0.5 * (gamma_diag(s) + c_diag(s).real());
        double kvv = 0.5 * (gamma_diag(s) - c_diag(s).real());
        double kuv = 0.5 * c_diag(s).imag();
        double r = mean(s).real(), i = mean(s).imag();
        double nrm2 = r * r + i * i;
        if (nrm2 == 0.0) {
            if (strict)
                throw NumericalError("angle variance undefined for zero-mean state " +
                                     std::to_string(s));
            // no usable linearization point: spread of both parts, flat angle
            vmag(s) = std::max(0.0, kuu + kvv);
            vang(s) = kPi * kPi / 3.0;
            continue;
        }
        vmag(s) = (r * r * kuu + 2.0 * r * i * kuv + i * i * kvv) / nrm2;
        vang(s) = (i * i * kuu - 2.0 * r * i * kuv + r * r * kvv) / (nrm2 * nrm2);
        vmag(s) = std::max(0.0, vmag(s));
        vang(s) = std::max(0.0, vang(s));
    }
    return {vmag, vang};
}

inline std::pair<RVec, RVec> magnitude_angle_variance(const StateEstimate& est) {
    return magnitude_angle_variance(est.mu_ibv, est.gamma_diag, est.c_diag);
}

/// Quality index ln(1 / trace(composite covariance)); by default over the
/// bus-voltage block only. Higher is better; +inf for a zero trace.
inline double quality(const StateEstimate& est, bool all_states = false) {
    double tr = 0.0;
    int lo = all_states ? 0 : est.index(2, 0, 0);
    for (int s = lo; s < est.dim(); ++s) tr += est.gamma_diag(s);
    if (tr <= 0.0) return std::numeric_limits<double>::infinity();
    return std::log(1.0 / tr);
}

/// Prior over the stacked injected currents for nt window steps: mean from
/// the pseudo values, covariance assembled from error-percentage SDs and the
/// correlation matrix. This is the offline product of the pipeline.
inline ComplexGaussian build_prior(const RadialNetwork& net,
                                   const MeasurementSet& pseudo,
                                   const CorrelationMatrix& cr, int nt) {
    const int sd = net.state_dim();
    const int p = net.phase_count();
    require_dim(nt >= 1, "nt must be >= 1");
    require_dim(static_cast<int>(pseudo.steps.size()) >= nt,
                "pseudo set covers fewer steps than nt");
    require_dim(cr.nt == nt && cr.n_vars == sd,
                "correlation matrix sized " + std::to_string(cr.n_vars) + "x" +
                    std::to_string(cr.nt) + " steps, need " + std::to_string(sd) +
                    "x" + std::to_string(nt));
    pseudo.validate();

    ComplexGaussian prior;
    prior.mean.resize(sd * nt);
    CVec sds(sd * nt);
    // align pseudo steps to the last nt entries of the set
    const int first = static_cast<int>(pseudo.steps.size()) - nt;
    for (int s = 0; s < nt; ++s) {
        std::vector<char> have(sd, 0);
        for (const auto& e : pseudo.steps[first + s].entries) {
            if (e.target.kind != StateKind::injected_current) continue;
            int pos = net.order_of(e.target.element) * p + e.target.phase;
            prior.mean(s * sd + pos) = e.value;
            sds(s * sd + pos) = sd_from_error(e.value, e.epsilon_pct);
            have[pos] = 1;
        }
        for (int k = 0; k < sd; ++k)
            if (!have[k])
                throw ObservabilityError(
                    "no pseudo injection for bus " + net.ordered_buses()[k / p] +
                    " phase " + std::to_string(k % p) + " at window step " +
                    std::to_string(s));
    }
    auto [gamma, c] = assemble_complex_covariance(sds, cr);
    prior.gamma = std::move(gamma);
    prior.c = std::move(c);
    return prior;
}

namespace detail {

/// Extract the leading nt_eff-step submatrix of a correlation matrix.
inline CorrelationMatrix slice_time_steps(const CorrelationMatrix& cr, int nt_eff) {
    require_dim(nt_eff >= 1 && nt_eff <= cr.nt, "window larger than correlation nt");
    if (nt_eff == cr.nt) return cr;
    CorrelationMatrix out;
    out.nt = nt_eff;
    out.n_vars = cr.n_vars;
    out.blocks.resize(out.dim(), out.dim());
    const int nv = cr.n_vars;
    for (int px = 0; px < 2; ++px)
        for (int py = 0; py < 2; ++py)
            for (int s1 = 0; s1 < nt_eff; ++s1)
                for (int s2 = 0; s2 < nt_eff; ++s2)
                    out.blocks.block(out.index(px, s1, 0), out.index(py, s2, 0), nv, nv) =
                        cr.blocks.block(cr.index(px, s1, 0), cr.index(py, s2, 0), nv, nv);
    return out;
}

}  // namespace detail

/// Offline half of the estimator: flow matrices, stacked prior over
/// [injections; reference voltages], the measurement template rows, and the
/// joint prior used by the real-time conditioning pass. Immutable once built
/// and shareable across scenario steps.
class EstimatorContext {
public:
    EstimatorContext(const RadialNetwork& net, const CorrelationMatrix& cr,
                     const MeasurementSet& pseudo, const MeasurementSet& realtime_template,
                     EstimatorOptions options)
        : net_(net), options_(options) {
        if (options_.mode == EstimatorMode::cs && options_.nt != 1)
            throw DimensionError("CS mode requires nt = 1");
        nt_ = options_.nt;
        p_ = net.phase_count();
        sd_ = net.state_dim();
        fm_ = build_flow_matrices(net);

        CorrelationMatrix crw = detail::slice_time_steps(cr, nt_);
        ComplexGaussian inj_prior = build_prior(net, pseudo, crw, nt_);

        // x = [stacked injections; per-step per-phase reference voltage]
        const int ni = sd_ * nt_;
        const int nr = p_ * nt_;
        xdim_ = ni + nr;
        x_prior_.mean = CVec::Zero(xdim_);
        x_prior_.gamma = CMat::Zero(xdim_, xdim_);
        x_prior_.c = CMat::Zero(xdim_, xdim_);
        x_prior_.mean.head(ni) = inj_prior.mean;
        x_prior_.gamma.topLeftCorner(ni, ni) = inj_prior.gamma;
        x_prior_.c.topLeftCorner(ni, ni) = inj_prior.c;

        const int first = static_cast<int>(pseudo.steps.size()) - nt_;
        for (int s = 0; s < nt_; ++s) {
            const auto& vr = pseudo.steps[first + s].vref;
            require_dim(static_cast<int>(vr.value.size()) == p_,
                        "reference voltage needs one value per phase");
            double eps = vr.epsilon_pct >= 0.0 ? vr.epsilon_pct : options_.vref_epsilon_pct;
            for (int ph = 0; ph < p_; ++ph) {
                int k = ni + s * p_ + ph;
                x_prior_.mean(k) = vr.value[ph];
                cxd sdv = sd_from_error(vr.value[ph], eps);
                double sr = std::abs(sdv.real()), si = std::abs(sdv.imag());
                x_prior_.gamma(k, k) = sr * sr + si * si;
                x_prior_.c(k, k) = sr * sr - si * si;
            }
        }

        build_measurement_template(realtime_template);
        build_joint_prior();
        build_state_map();

        // Offline conditioning: the posterior covariance and the conditional
        // mean gains do not depend on the observed values, so everything but
        // the mean update happens once here. The real-time pass is the
        // widely linear mean correction plus the delta-method variances.
        ComplexGaussian posterior;
        if (measured_count() > 0) {
            const int m = measured_count();
            std::vector<int> measured(m);
            for (int k = 0; k < m; ++k) measured[k] = xdim_ + k;
            Partition part = make_partition(xdim_ + m, measured);
            auto gains = conditioning_gains(joint_prior_, part);
            posterior = condition(joint_prior_, part, joint_prior_.mean.tail(m));
            a_ibv_ = t_map_ * gains.a;
            b_ibv_ = t_map_ * gains.b;
        } else {
            posterior = x_prior_;
            ++conditioning_invocations();
        }
        mu_o_ = joint_prior_.mean.tail(measured_count());
        template_ = propagate(posterior);
        mu_ibv_prior_ = t_map_ * x_prior_.mean;
    }

    const RadialNetwork& net() const { return net_; }
    const FlowMatrices& flow_matrices() const { return fm_; }
    const EstimatorOptions& options() const { return options_; }
    int nt() const { return nt_; }
    int measured_count() const { return static_cast<int>(template_order_.size()); }

    /// Template order of measured targets: (window step, entry target).
    const std::vector<std::pair<int, Target>>& template_order() const {
        return template_order_;
    }

    /// Real-time pass: one joint conditioning on the window's observed
    /// values, then state propagation. `realtime` must carry the same
    /// targets per step as the template used to build the context.
    StateEstimate run(const MeasurementSet& realtime) const {
        CVec observed(measured_count());
        require_dim(static_cast<int>(realtime.steps.size()) == nt_,
                    "real-time window has " + std::to_string(realtime.steps.size()) +
                        " steps, context expects " + std::to_string(nt_));
        for (int k = 0; k < measured_count(); ++k) {
            auto [step, target] = template_order_[k];
            const MeasurementEntry* found = nullptr;
            for (const auto& e : realtime.steps[step].entries)
                if (!(e.target < target) && !(target < e.target)) found = &e;
            if (!found)
                throw ObservabilityError("real-time window missing target " +
                                         target.element + " at step " +
                                         std::to_string(step));
            observed(k) = found->value;
        }
        return run_with_observed(observed);
    }

    StateEstimate run_with_observed(const CVec& observed) const {
        require_dim(static_cast<int>(observed.size()) == measured_count(),
                    "observed vector does not match the measurement template");
        StateEstimate est = template_;
        if (measured_count() > 0) {
            CVec d = observed - mu_o_;
            est.mu_ibv = mu_ibv_prior_ + a_ibv_ * d + b_ibv_ * d.conjugate();
        } else {
            est.mu_ibv = mu_ibv_prior_;
        }
        auto [vm, va] =
            magnitude_angle_variance(est.mu_ibv, est.gamma_diag, est.c_diag, false);
        est.var_mag = std::move(vm);
        est.var_ang = std::move(va);
        return est;
    }

private:
    void build_measurement_template(const MeasurementSet& realtime) {
        realtime.validate();
        require_dim(static_cast<int>(realtime.steps.size()) <= nt_,
                    "real-time set has more steps than the window");
        // align to the last nt_ steps; missing leading steps mean no data
        const int offset = nt_ - static_cast<int>(realtime.steps.size());
        const int ni = sd_ * nt_;
        std::vector<CVec> rows;
        for (size_t s = 0; s < realtime.steps.size(); ++s)
            for (const auto& e : realtime.steps[s].entries) {
                if (!e.is_real_measurement) continue;
                int step = offset + static_cast<int>(s);
                int pos = net_.order_of(e.target.element) * p_ + e.target.phase;
                CVec row = CVec::Zero(xdim_);
                switch (e.target.kind) {
                    case StateKind::injected_current:
                        row(step * sd_ + pos) = 1.0;
                        break;
                    case StateKind::branch_current:
                        row.segment(step * sd_, sd_) = fm_.bibc.row(pos).transpose();
                        break;
                    case StateKind::bus_voltage:
                        row.segment(step * sd_, sd_) = -fm_.dlf.row(pos).transpose();
                        row(ni + step * p_ + e.target.phase) = 1.0;
                        break;
                }
                template_order_.push_back({step, e.target});
                // meter noise SDs taken at the prior mean of the target
                cxd mu = row.cwiseProduct(x_prior_.mean).sum();
                cxd sdv = sd_from_error(mu, e.epsilon_pct);
                double sr = std::abs(sdv.real()), si = std::abs(sdv.imag());
                meter_gamma_.push_back(sr * sr + si * si);
                meter_c_.push_back(sr * sr - si * si);
                rows.push_back(std::move(row));
            }
        m_rows_ = CMat::Zero(rows.size(), xdim_);
        for (size_t r = 0; r < rows.size(); ++r) m_rows_.row(r) = rows[r].transpose();
    }

    void build_joint_prior() {
        const int m = measured_count();
        joint_prior_.mean.resize(xdim_ + m);
        joint_prior_.gamma.resize(xdim_ + m, xdim_ + m);
        joint_prior_.c.resize(xdim_ + m, xdim_ + m);
        joint_prior_.mean.head(xdim_) = x_prior_.mean;
        joint_prior_.mean.tail(m) = m_rows_ * x_prior_.mean;
        CMat gx_mh = x_prior_.gamma * m_rows_.adjoint();
        CMat cx_mt = x_prior_.c * m_rows_.transpose();
        joint_prior_.gamma.topLeftCorner(xdim_, xdim_) = x_prior_.gamma;
        joint_prior_.gamma.topRightCorner(xdim_, m) = gx_mh;
        joint_prior_.gamma.bottomLeftCorner(m, xdim_) = gx_mh.adjoint();
        joint_prior_.gamma.bottomRightCorner(m, m) = m_rows_ * gx_mh;
        joint_prior_.c.topLeftCorner(xdim_, xdim_) = x_prior_.c;
        joint_prior_.c.topRightCorner(xdim_, m) = cx_mt;
        joint_prior_.c.bottomLeftCorner(m, xdim_) = cx_mt.transpose();
        joint_prior_.c.bottomRightCorner(m, m) = m_rows_ * cx_mt;
        for (int k = 0; k < m; ++k) {
            joint_prior_.gamma(xdim_ + k, xdim_ + k) += meter_gamma_[k];
            joint_prior_.c(xdim_ + k, xdim_ + k) += meter_c_[k];
        }
    }

    void build_state_map() {
        // Complex map from x to the stacked IBV vector.
        const int ni = sd_ * nt_;
        t_map_ = CMat::Zero(3 * ni, xdim_);
        for (int s = 0; s < nt_; ++s) {
            t_map_.block(s * sd_, s * sd_, sd_, sd_).setIdentity();
            t_map_.block(ni + s * sd_, s * sd_, sd_, sd_) = fm_.bibc;
            t_map_.block(2 * ni + s * sd_, s * sd_, sd_, sd_) = -fm_.dlf;
            for (int k = 0; k < sd_; ++k)
                t_map_(2 * ni + s * sd_ + k, ni + s * p_ + (k % p_)) = 1.0;
        }
    }

    StateEstimate propagate(const ComplexGaussian& x_post) const {
        StateEstimate est;
        est.mode = options_.mode;
        est.nt = nt_;
        est.state_dim = sd_;
        est.phase_count = p_;
        est.conditioning_calls = 1;
        est.mu_ibv = t_map_ * x_post.mean;

        const int dim = est.dim();
        est.gamma_diag.resize(dim);
        est.c_diag.resize(dim);
        if (options_.full_covariance) {
            CMat g_full = t_map_ * x_post.gamma * t_map_.adjoint();
            CMat c_full = t_map_ * x_post.c * t_map_.transpose();
            est.gamma_diag = g_full.diagonal().real();
            est.c_diag = c_full.diagonal();
            est.gamma_ibv = std::move(g_full);
            est.c_ibv = std::move(c_full);
        } else {
            // Rows of the map touch one step's injection block plus, for
            // voltage rows, one reference column; exploit that per step.
            const int ni = sd_ * nt_;
            for (int s = 0; s < nt_; ++s) {
                auto gb = x_post.gamma.block(s * sd_, s * sd_, sd_, sd_);
                auto cb = x_post.c.block(s * sd_, s * sd_, sd_, sd_);
                for (int k = 0; k < sd_; ++k) {
                    est.gamma_diag(est.index(0, s, k)) = gb(k, k).real();
                    est.c_diag(est.index(0, s, k)) = cb(k, k);
                }
                CMat bg = fm_.bibc * gb;
                CMat bc = fm_.bibc * cb;
                CMat dg = fm_.dlf * gb;
                CMat dc = fm_.dlf * cb;
                for (int k = 0; k < sd_; ++k) {
                    est.gamma_diag(est.index(1, s, k)) =
                        (bg.row(k) * fm_.bibc.row(k).adjoint()).value().real();
                    est.c_diag(est.index(1, s, k)) =
                        (bc.row(k) * fm_.bibc.row(k).transpose()).value();
                }
                // voltage rows: -dlf + reference selector
                for (int k = 0; k < sd_; ++k) {
                    int rcol = ni + s * p_ + (k % p_);
                    cxd g_dd = (dg.row(k) * fm_.dlf.row(k).adjoint()).value();
                    cxd c_dd = (dc.row(k) * fm_.dlf.row(k).transpose()).value();
                    cxd g_dr = (fm_.dlf.row(k) *
                                x_post.gamma.col(rcol).segment(s * sd_, sd_))
                                   .value();
                    cxd g_rd = (x_post.gamma.row(rcol).segment(s * sd_, sd_) *
                                fm_.dlf.row(k).adjoint())
                                   .value();
                    cxd c_dr = (fm_.dlf.row(k) *
                                x_post.c.col(rcol).segment(s * sd_, sd_))
                                   .value();
                    est.gamma_diag(est.index(2, s, k)) =
                        (g_dd - g_dr - g_rd + x_post.gamma(rcol, rcol)).real();
                    est.c_diag(est.index(2, s, k)) =
                        c_dd - 2.0 * c_dr + x_post.c(rcol, rcol);
                }
            }
        }
        auto [vm, va] = magnitude_angle_variance(est.mu_ibv, est.gamma_diag, est.c_diag, false);
        est.var_mag = std::move(vm);
        est.var_ang = std::move(va);
        return est;
    }

    const RadialNetwork& net_;
    EstimatorOptions options_;
    int nt_ = 1, p_ = 1, sd_ = 0, xdim_ = 0;
    FlowMatrices fm_;
    ComplexGaussian x_prior_;
    ComplexGaussian joint_prior_;
    CMat m_rows_;
    std::vector<double> meter_gamma_, meter_c_;
    std::vector<std::pair<int, Target>> template_order_;
    CMat t_map_;
    CMat a_ibv_, b_ibv_;    // precomposed mean-update gains into IBV space
    CVec mu_o_;             // prior mean of the observation variables
    CVec mu_ibv_prior_;     // propagated prior mean
    StateEstimate template_;  // cached posterior covariance diagonals
};

/// Propagate a stacked-injection model to all IBV states: the map
/// [I; BIBC_nt; -DLF_nt] applied to mean and covariance, with the
/// reference-voltage covariance added to the voltage block.
inline StateEstimate propagate_states(const ComplexGaussian& model,
                                      const FlowMatrices& fm,
                                      const RadialNetwork& net,
                                      const std::vector<std::vector<cxd>>& vref_per_step,
                                      double vref_epsilon_pct, int nt,
                                      bool full_covariance = true) {
    require_dim(model.dim() == net.state_dim() * nt,
                "model dimension != state_dim * nt");
    require_dim(static_cast<int>(vref_per_step.size()) == nt,
                "need one reference voltage per step");
    const int p = net.phase_count();
    const int sd = net.state_dim();
    const int ni = sd * nt;
    const int nr = p * nt;
    ComplexGaussian x;
    x.mean = CVec::Zero(ni + nr);
    x.gamma = CMat::Zero(ni + nr, ni + nr);
    x.c = CMat::Zero(ni + nr, ni + nr);
    x.mean.head(ni) = model.mean;
    x.gamma.topLeftCorner(ni, ni) = model.gamma;
    x.c.topLeftCorner(ni, ni) = model.c;
    for (int s = 0; s < nt; ++s)
        for (int ph = 0; ph < p; ++ph) {
            int k = ni + s * p + ph;
            x.mean(k) = vref_per_step[s][ph];
            cxd sdv = sd_from_error(vref_per_step[s][ph], vref_epsilon_pct);
            double sr = std::abs(sdv.real()), si = std::abs(sdv.imag());
            x.gamma(k, k) = sr * sr + si * si;
            x.c(k, k) = sr * sr - si * si;
        }

    CMat t = CMat::Zero(3 * ni, ni + nr);
    for (int s = 0; s < nt; ++s) {
        t.block(s * sd, s * sd, sd, sd).setIdentity();
        t.block(ni + s * sd, s * sd, sd, sd) = fm.bibc;
        t.block(2 * ni + s * sd, s * sd, sd, sd) = -fm.dlf;
        for (int k = 0; k < sd; ++k) t(2 * ni + s * sd + k, ni + s * p + (k % p)) = 1.0;
    }

    StateEstimate est;
    est.mode = EstimatorMode::cs;
    est.nt = nt;
    est.state_dim = sd;
    est.phase_count = p;
    est.conditioning_calls = 0;
    est.mu_ibv = t * x.mean;
    CMat g_full = t * x.gamma * t.adjoint();
    CMat c_full = t * x.c * t.transpose();
    est.gamma_diag = g_full.diagonal().real();
    est.c_diag = c_full.diagonal();
    if (full_covariance) {
        est.gamma_ibv = std::move(g_full);
        est.c_ibv = std::move(c_full);
    }
    auto [vm, va] = magnitude_angle_variance(est.mu_ibv, est.gamma_diag, est.c_diag, false);
    est.var_mag = std::move(vm);
    est.var_ang = std::move(va);
    return est;
}

enum class AngleReference { power_flow, reference_bus };

/// Injected currents from complex power pseudo data. Bus voltage angles come
/// either from a backward/forward sweep power flow run on the pseudo data
/// (default) or from the reference-bus phasor. The direct formulation is
/// linear in injected current, so everything downstream is constant-current.
inline CVec pseudo_currents_from_power(const RadialNetwork& net,
                                       const FlowMatrices& fm, const CVec& power_va,
                                       const CVec& vref,
                                       AngleReference mode = AngleReference::power_flow,
                                       int max_sweeps = 40, double tol = 1e-10) {
    const int p = net.phase_count();
    const int sd = net.state_dim();
    require_dim(power_va.size() == sd, "power vector length != state dimension");
    require_dim(vref.size() == p, "vref needs one entry per phase");
    CVec v(sd);
    for (int k = 0; k < sd; ++k) v(k) = vref(k % p);
    CVec current = CVec::Zero(sd);
    if (mode == AngleReference::reference_bus) {
        for (int k = 0; k < sd; ++k) current(k) = std::conj(power_va(k) / v(k));
        return current;
    }
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        for (int k = 0; k < sd; ++k) current(k) = std::conj(power_va(k) / v(k));
        CVec v_next(sd);
        CVec drop = fm.dlf * current;
        for (int k = 0; k < sd; ++k) v_next(k) = vref(k % p) - drop(k);
        double step = (v_next - v).cwiseAbs().maxCoeff();
        v = v_next;
        if (step < tol * vref.cwiseAbs().maxCoeff()) break;
    }
    for (int k = 0; k < sd; ++k) current(k) = std::conj(power_va(k) / v(k));
    return current;
}

/// One-shot estimate: offline context build plus a single real-time
/// conditioning pass over the rolling window. CS forces nt = 1; CST uses the
/// last nt steps of the pseudo and real-time sets.
inline StateEstimate estimate(const RadialNetwork& net, const CorrelationMatrix& cr,
                              const MeasurementSet& pseudo,
                              const MeasurementSet& realtime,
                              EstimatorOptions options = {}) {
    EstimatorContext ctx(net, cr, pseudo, realtime, options);
    MeasurementSet window = realtime;
    if (static_cast<int>(window.steps.size()) < options.nt) {
        // pad missing leading steps with empty entries
        MeasurementSet padded;
        padded.steps.resize(options.nt - window.steps.size());
        for (auto& s : window.steps) padded.steps.push_back(std::move(s));
        window = std::move(padded);
    }
    return ctx.run(window);
}

}  // namespace dsse
