#include "doctest.h"

#include "dsse/conditioning.hpp"
#include "test_util.hpp"

using namespace dsse;

namespace {

ComplexGaussian block_diag_model() {
    // two independent scalar variables
    ComplexGaussian g;
    g.mean.resize(2);
    g.mean << cxd(1.0, 2.0), cxd(-3.0, 0.5);
    g.gamma = CMat::Zero(2, 2);
    g.gamma(0, 0) = 4.0;
    g.gamma(1, 1) = 9.0;
    g.c = CMat::Zero(2, 2);
    g.c(0, 0) = cxd(1.0, 0.5);
    g.c(1, 1) = cxd(-2.0, 1.0);
    return g;
}

}  // namespace

TEST_CASE("independent blocks are unchanged by conditioning") {
    auto g = block_diag_model();
    CVec obs(1);
    obs << cxd(5.0, 5.0);
    auto post = condition(g, make_partition(2, {0}), obs);
    CHECK(std::abs(post.mean(0) - g.mean(1)) < 1e-12);
    CHECK(std::abs(post.gamma(0, 0) - g.gamma(1, 1)) < 1e-12);
    CHECK(std::abs(post.c(0, 0) - g.c(1, 1)) < 1e-12);
}

TEST_CASE("observing the prior mean leaves the mean, shrinks the variance") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto g = testutil::random_gaussian(seed + 2, 6);
        auto part = make_partition(6, {0, 3});
        CVec obs(2);
        obs << g.mean(0), g.mean(3);
        auto post = condition(g, part, obs);
        for (int i = 0; i < 4; ++i) {
            CHECK(std::abs(post.mean(i) - g.mean(part.unmeasured[i])) < 1e-10);
            CHECK(post.gamma(i, i).real() <=
                  g.gamma(part.unmeasured[i], part.unmeasured[i]).real() + 1e-10);
        }
    }
}

TEST_CASE("textbook proper case") {
    ComplexGaussian g;
    g.mean.resize(2);
    g.mean << cxd(0.5, -1.0), cxd(2.0, 1.0);
    g.gamma.resize(2, 2);
    g.gamma << cxd(2.0, 0.0), cxd(1.0, 0.0), cxd(1.0, 0.0), cxd(2.0, 0.0);
    g.c = CMat::Zero(2, 2);
    CVec obs(1);
    obs << g.mean(0) + cxd(1.0, 0.0);
    auto post = condition(g, make_partition(2, {0}), obs);
    CHECK(std::abs(post.mean(0) - (g.mean(1) + cxd(0.5, 0.0))) < 1e-12);
    CHECK(std::abs(post.gamma(0, 0) - cxd(1.5, 0.0)) < 1e-12);
    CHECK(std::abs(post.c(0, 0)) < 1e-12);
}

TEST_CASE("gains reduce to the proper-case formula when C = 0") {
    testutil::Rng rng(42);
    const int n = 5;
    RMat r(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) r(i, j) = rng.normal();
    ComplexGaussian g;
    g.mean = CVec::Zero(n);
    g.gamma = (r * r.transpose()).cast<cxd>() + 0.1 * CMat::Identity(n, n);
    g.c = CMat::Zero(n, n);
    auto part = make_partition(n, {0, 1});
    auto gains = conditioning_gains(g, part);
    CHECK(gains.b.cwiseAbs().maxCoeff() < 1e-10);
    CMat g11(2, 2), g21(3, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) g11(i, j) = g.gamma(part.measured[i], part.measured[j]);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j)
            g21(i, j) = g.gamma(part.unmeasured[i], part.measured[j]);
    CMat a_expected = g21 * g11.inverse();
    CHECK((gains.a - a_expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("uncorrelated blocks give zero gains") {
    auto g = block_diag_model();
    auto gains = conditioning_gains(g, make_partition(2, {0}));
    CHECK(gains.a.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(gains.b.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gains predict the oracle posterior mean") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        const int n = 4 + static_cast<int>(seed % 4);
        auto g = testutil::random_gaussian(seed + 50, n);
        std::vector<int> measured{0, n - 1};
        auto part = make_partition(n, measured);
        auto gains = conditioning_gains(g, part);
        testutil::Rng rng(seed + 1);
        for (int trial = 0; trial < 100; ++trial) {
            CVec obs(2);
            obs << g.mean(0) + rng.cnormal(), g.mean(n - 1) + rng.cnormal();
            CVec d(2);
            d << obs(0) - g.mean(0), obs(1) - g.mean(n - 1);
            CVec mu1(static_cast<int>(part.unmeasured.size()));
            for (size_t i = 0; i < part.unmeasured.size(); ++i)
                mu1(static_cast<int>(i)) = g.mean(part.unmeasured[i]);
            CVec predicted = mu1 + gains.a * d + gains.b * d.conjugate();
            auto oracle =
                testutil::oracle_condition(g, part.measured, part.unmeasured, obs);
            for (size_t i = 0; i < part.unmeasured.size(); ++i) {
                cxd om(oracle.mean(static_cast<int>(i)),
                       oracle.mean(static_cast<int>(part.unmeasured.size() + i)));
                CHECK(std::abs(predicted(static_cast<int>(i)) - om) < 1e-9);
            }
        }
    }
}

TEST_CASE("composite and closed-form routes agree with the oracle") {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        const int n = 2 + static_cast<int>(seed % 9);
        auto g = testutil::random_gaussian(seed + 700, n);
        testutil::Rng rng(seed);
        int m = 1 + static_cast<int>(seed % std::max(1, n - 1));
        std::vector<int> measured;
        for (int i = 0; i < n && static_cast<int>(measured.size()) < m; ++i)
            if (rng.uniform() < 0.5 || n - i <= m - static_cast<int>(measured.size()))
                measured.push_back(i);
        auto part = make_partition(n, measured);
        CVec obs(static_cast<int>(measured.size()));
        for (int i = 0; i < obs.size(); ++i)
            obs(i) = g.mean(measured[i]) + rng.cnormal();

        auto post = condition(g, part, obs);
        auto post2 = condition_closed_form(g, part, obs);
        auto oracle = testutil::oracle_condition(g, part.measured, part.unmeasured, obs);

        const int u = static_cast<int>(part.unmeasured.size());
        for (int i = 0; i < u; ++i) {
            cxd om(oracle.mean(i), oracle.mean(u + i));
            CHECK(std::abs(post.mean(i) - om) < 1e-9);
            CHECK(std::abs(post2.mean(i) - om) < 1e-9);
        }
        auto k = real_composite_from_complex(post.gamma, post.c);
        RMat composite = k.to_matrix();
        CHECK((composite - oracle.cov).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((post.gamma - post2.gamma).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((post.c - post2.c).cwiseAbs().maxCoeff() < 1e-9);

        // posterior structure
        CHECK((post.gamma - post.gamma.adjoint()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((post.c - post.c.transpose()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(post.augmented_min_eigenvalue() >= -1e-9);
        for (int i = 0; i < u; ++i)
            CHECK(post.gamma(i, i).real() <=
                  g.gamma(part.unmeasured[i], part.unmeasured[i]).real() + 1e-10);
    }
}

TEST_CASE("deterministic linear relation collapses the posterior variance") {
    // y2 = 2 y1 - 0.5 conj(y1): composite covariance is an exact linear image
    testutil::Rng rng(9);
    RMat s1(2, 2);
    s1 << 2.0, 0.3, 0.3, 1.0;
    RMat l(2, 2);
    l << 2.0 - 0.5, 0.0, 0.0, 2.0 + 0.5;  // Re2 = 1.5 Re1, Im2 = 2.5 Im1
    RMat cov(4, 4);
    cov.topLeftCorner(2, 2) = s1;
    cov.topRightCorner(2, 2) = s1 * l.transpose();
    cov.bottomLeftCorner(2, 2) = l * s1;
    cov.bottomRightCorner(2, 2) = l * s1 * l.transpose();
    // reorder from [Re1 Im1 Re2 Im2] to composite [Re1 Re2 Im1 Im2]
    std::vector<int> perm{0, 2, 1, 3};
    RMat reordered(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) reordered(i, j) = cov(perm[i], perm[j]);
    RealCompositeCovariance k;
    k.rr = reordered.topLeftCorner(2, 2);
    k.ri = reordered.topRightCorner(2, 2);
    k.ir = reordered.bottomLeftCorner(2, 2);
    k.ii = reordered.bottomRightCorner(2, 2);
    auto [gamma, c] = complex_from_real_composite(k);
    ComplexGaussian g;
    g.mean = CVec::Zero(2);
    g.gamma = gamma;
    g.c = c;
    CVec obs(1);
    obs << cxd(0.7, -0.2);
    auto post = condition(g, make_partition(2, {0}), obs);
    CHECK(post.gamma(0, 0).real() <= 1e-8);
    CHECK(std::abs(post.mean(0) - (2.0 * obs(0) - 0.5 * std::conj(obs(0)))) < 1e-8);
}

TEST_CASE("degenerate measured block raises") {
    // duplicate the same physical variable twice and measure both
    ComplexGaussian g;
    g.mean = CVec::Zero(3);
    g.gamma.resize(3, 3);
    g.gamma << 1.0, 1.0, 0.2, 1.0, 1.0, 0.2, 0.2, 0.2, 1.0;
    g.c = CMat::Zero(3, 3);
    CVec obs(2);
    obs << cxd(0.1, 0.0), cxd(0.1, 0.0);
    CHECK_THROWS_AS(condition(g, make_partition(3, {0, 1}), obs), NumericalError);
}

TEST_CASE("temporal window is one joint update") {
    const int n_vars = 3, nt = 3;
    auto g = testutil::random_gaussian(321, n_vars * nt);
    testutil::Rng rng(5);
    std::vector<WindowStep> window(nt);
    std::vector<int> joint_idx;
    CVec joint_obs(nt);
    for (int s = 0; s < nt; ++s) {
        window[s].measured = {0};
        window[s].observed.resize(1);
        window[s].observed(0) = g.mean(s * n_vars) + rng.cnormal();
        joint_idx.push_back(s * n_vars);
        joint_obs(s) = window[s].observed(0);
    }
    auto post_t = condition_temporal(g, window, nt);
    auto post_j = condition(g, make_partition(g.dim(), joint_idx), joint_obs);
    CHECK((post_t.mean - post_j.mean).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((post_t.gamma - post_j.gamma).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((post_t.c - post_j.c).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("temporal window with nt = 1 is condition itself") {
    auto g = testutil::random_gaussian(654, 4);
    std::vector<WindowStep> window(1);
    window[0].measured = {1, 2};
    window[0].observed.resize(2);
    window[0].observed << g.mean(1) + cxd(0.3, 0.1), g.mean(2) - cxd(0.2, 0.4);
    auto post_t = condition_temporal(g, window, 1);
    auto post_d =
        condition(g, make_partition(4, {1, 2}), window[0].observed);
    CHECK((post_t.mean - post_d.mean).cwiseAbs().maxCoeff() == 0.0);
    CHECK((post_t.gamma - post_d.gamma).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero temporal correlation reduces to current-step conditioning") {
    // two steps, block-diagonal across time
    const int n_vars = 2, nt = 2;
    auto step_model = testutil::random_gaussian(111, n_vars);
    ComplexGaussian g;
    g.mean.resize(n_vars * nt);
    g.gamma = CMat::Zero(4, 4);
    g.c = CMat::Zero(4, 4);
    for (int s = 0; s < nt; ++s) {
        g.mean.segment(s * n_vars, n_vars) = step_model.mean;
        g.gamma.block(s * n_vars, s * n_vars, n_vars, n_vars) = step_model.gamma;
        g.c.block(s * n_vars, s * n_vars, n_vars, n_vars) = step_model.c;
    }
    std::vector<WindowStep> window(nt);
    window[0].measured = {0};
    window[0].observed.resize(1);
    window[0].observed(0) = step_model.mean(0) + cxd(1.0, -0.5);
    window[1].measured = {0};
    window[1].observed.resize(1);
    window[1].observed(0) = step_model.mean(0) + cxd(-0.7, 0.2);

    auto post = condition_temporal(g, window, nt);
    // current step's unmeasured variable (local index 1 of step 2)
    auto single = condition(step_model, make_partition(n_vars, {0}),
                            window[1].observed);
    // post unmeasured ordering: step0 var1 then step1 var1
    CHECK(std::abs(post.mean(1) - single.mean(0)) < 1e-10);
    CHECK(std::abs(post.gamma(1, 1) - single.gamma(0, 0)) < 1e-10);
}

TEST_CASE("conditioning counter increments once per call") {
    auto g = block_diag_model();
    long before = conditioning_invocations();
    CVec obs(1);
    obs << cxd(0.0, 0.0);
    condition(g, make_partition(2, {0}), obs);
    CHECK(conditioning_invocations() == before + 1);
}
