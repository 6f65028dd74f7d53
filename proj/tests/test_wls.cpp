#include "doctest.h"

#include "dsse/scenario.hpp"
#include "dsse/wls.hpp"
#include "test_util.hpp"

using namespace dsse;

namespace {

MeasurementStep full_current_step(const NetworkBundle& b, const CVec& currents,
                                  double eps) {
    MeasurementStep step;
    step.vref.value.assign(1, cxd(b.net.base_voltage(), 0.0));
    step.vref.epsilon_pct = 0.3;
    const int p = b.net.phase_count();
    for (int k = 0; k < b.net.state_dim(); ++k)
        step.entries.push_back(
            {{StateKind::injected_current, b.net.ordered_buses()[k / p], k % p},
             currents(k),
             eps,
             true});
    return step;
}

}  // namespace

TEST_CASE("recovers an exact power-flow solution") {
    auto b = make_six_bus();
    CVec truth = 0.85 * b.nominal;
    auto step = full_current_step(b, truth, 1.0);
    auto res = wls_estimate(b.net, step);
    CHECK(res.converged);
    CHECK(res.iterations <= 10);
    auto fm = build_flow_matrices(b.net);
    auto [ibr, v] = direct_power_flow(fm, truth, CVec::Ones(1) * 2400.0);
    CHECK((res.voltages - v).cwiseAbs().maxCoeff() < 1e-8 * 2400.0);
    // weighted norm: residuals are at working precision relative to sigma
    CHECK(res.residual_norm < 1e-2);
}

TEST_CASE("under-determined measurement sets are rejected") {
    auto b = make_six_bus();
    MeasurementStep step;
    step.vref.value.assign(1, cxd(2400.0, 0.0));
    CHECK_THROWS_AS(wls_estimate(b.net, step), ObservabilityError);

    // one current only: still under-determined
    step.entries.push_back(
        {{StateKind::injected_current, "a1", 0}, b.nominal(0), 3.0, true});
    CHECK_THROWS_AS(wls_estimate(b.net, step), ObservabilityError);
}

TEST_CASE("agrees with the conditional estimator on noise-free data") {
    auto b = make_six_bus();
    CVec truth = 0.7 * b.nominal;
    auto fm = build_flow_matrices(b.net);
    auto [ibr, v_true] = direct_power_flow(fm, truth, CVec::Ones(1) * 2400.0);

    auto res = wls_estimate(b.net, full_current_step(b, truth, 3.0));
    CHECK((res.voltages - v_true).cwiseAbs().maxCoeff() < 1e-6 * 2400.0);

    auto cr = parametric_cr(b.group, b.bus_of_vars(), 1, b.cr_params, false);
    MeasurementSet pseudo;
    pseudo.steps.resize(1);
    pseudo.steps[0] = full_current_step(b, b.nominal, 50.0);
    for (auto& e : pseudo.steps[0].entries) e.is_real_measurement = false;
    pseudo.steps[0].vref.epsilon_pct = 0.0;
    MeasurementSet realtime;
    realtime.steps.resize(1);
    realtime.steps[0] = full_current_step(b, truth, 0.0);
    realtime.steps[0].vref.epsilon_pct = 0.0;
    EstimatorOptions opt;
    opt.mode = EstimatorMode::cs;
    opt.nt = 1;
    opt.vref_epsilon_pct = 0.0;
    auto est = estimate(b.net, cr, pseudo, realtime, opt);
    CHECK((est.voltages(0) - v_true).cwiseAbs().maxCoeff() < 1e-6 * 2400.0);
    CHECK((res.voltages - est.voltages(0)).cwiseAbs().maxCoeff() < 1e-6 * 2400.0);
}

TEST_CASE("correlated and diagonal weights both converge on pseudo-heavy sets") {
    auto b = make_six_bus();
    testutil::Rng rng(4);
    CVec truth(5);
    for (int k = 0; k < 5; ++k) truth(k) = 0.6 * b.nominal(k) * (1.0 + 0.05 * rng.normal());

    MeasurementStep step;
    step.vref.value.assign(1, cxd(2400.0, 0.0));
    step.vref.epsilon_pct = 0.3;
    step.entries.push_back(
        {{StateKind::injected_current, "a1", 0}, truth(0), 3.0, true});
    for (int k = 1; k < 5; ++k)
        step.entries.push_back(
            {{StateKind::injected_current, b.net.ordered_buses()[k], 0},
             b.nominal(k),
             50.0,
             false});

    auto cr = parametric_cr(b.group, b.bus_of_vars(), 1, b.cr_params, false);
    WlsOptions diag_opt;
    diag_opt.correlated_weights = false;
    auto res_corr = wls_estimate(b.net, step, &cr);
    auto res_diag = wls_estimate(b.net, step, &cr, diag_opt);
    CHECK(res_corr.converged);
    CHECK(res_diag.converged);
    CHECK(res_corr.iterations <= 10);
    CHECK(res_diag.iterations <= 10);
    CHECK(res_corr.quality > -1e12);

    // pseudo bias dominates either way: both land near the pseudo solution
    auto fm = build_flow_matrices(b.net);
    CVec pseudo_inj = b.nominal;
    pseudo_inj(0) = truth(0);
    auto [ibr, v_pseudo] = direct_power_flow(fm, pseudo_inj, CVec::Ones(1) * 2400.0);
    CHECK((res_diag.voltages - v_pseudo).cwiseAbs().maxCoeff() < 0.02 * 2400.0);
}

TEST_CASE("flat start converges on every bundled network") {
    for (const char* name : {"six_bus", "lv23"}) {
        auto b = builtin_bundle(name);
        auto step = full_current_step(b, b.nominal, 10.0);
        if (b.net.phase_count() > 1) {
            step.vref.value.clear();
            for (int ph = 0; ph < 3; ++ph)
                step.vref.value.push_back(b.net.base_voltage() *
                                          std::exp(cxd(0.0, -2.0 * kPi * ph / 3.0)));
        }
        auto res = wls_estimate(b.net, step);
        CHECK(res.converged);
        CHECK(res.iterations <= 10);
    }
}

TEST_CASE("variance outputs are nonnegative and finite") {
    auto b = make_six_bus();
    auto res = wls_estimate(b.net, full_current_step(b, b.nominal, 20.0));
    for (int k = 0; k < res.var_mag.size(); ++k) {
        CHECK(res.var_mag(k) >= 0.0);
        CHECK(res.var_ang(k) >= 0.0);
        CHECK(std::isfinite(res.var_mag(k)));
    }
    CHECK(std::isfinite(res.quality));
}
