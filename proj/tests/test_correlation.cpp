#include "doctest.h"

#include "dsse/correlation.hpp"
#include "test_util.hpp"

using namespace dsse;

namespace {

// Straight-line scalar evaluation of the correlation coefficient, kept
// independent of the library path.
double corr_oracle(const RVec& a, const RVec& b, int lag) {
    int len = static_cast<int>(a.size()) - lag;
    double ma = 0, mb = 0;
    for (int t = 0; t < len; ++t) ma += a(t), mb += b(t + lag);
    ma /= len;
    mb /= len;
    double num = 0, va = 0, vb = 0;
    for (int t = 0; t < len; ++t) {
        num += (a(t) - ma) * (b(t + lag) - mb);
        va += (a(t) - ma) * (a(t) - ma);
        vb += (b(t + lag) - mb) * (b(t + lag) - mb);
    }
    return (num / (len - 1)) / (std::sqrt(va / (len - 1)) * std::sqrt(vb / (len - 1)));
}

RVec noise(uint64_t seed, int n) {
    testutil::Rng rng(seed);
    RVec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("self correlation is one, negated is minus one") {
    RVec a = noise(3, 64);
    CHECK(empirical_correlation(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    RVec b = -a;
    CHECK(empirical_correlation(a, b) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("matches the scalar evaluation on short fixed-seed series") {
    RVec a = noise(11, 10), b = noise(12, 10);
    for (int lag : {0, 1, 3})
        CHECK(std::abs(empirical_correlation(a, b, lag) - corr_oracle(a, b, lag)) <
              1e-12);
}

TEST_CASE("zero-variance series is an error") {
    RVec a = RVec::Ones(16), b = noise(5, 16);
    CHECK_THROWS_AS(empirical_correlation(a, b), NumericalError);
}

TEST_CASE("values stay inside [-1, 1]") {
    for (uint64_t s = 0; s < 20; ++s) {
        RVec a = noise(s, 40), b = noise(s + 1000, 40);
        for (int lag : {0, 1, 5}) {
            double r = empirical_correlation(a, b, lag);
            CHECK(r <= 1.0);
            CHECK(r >= -1.0);
        }
    }
}

TEST_CASE("cr matrix dimensions and unit diagonal") {
    std::vector<RVec> p, q;
    for (int v = 0; v < 5; ++v) {
        p.push_back(noise(v + 1, 200));
        q.push_back(noise(v + 50, 200));
    }
    auto cr = build_cr_matrix(p, q, 3);
    CHECK(cr.dim() == 30);
    CHECK(cr.blocks.rows() == 30);
    for (int i = 0; i < 30; ++i)
        CHECK(cr.blocks(i, i) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((cr.blocks - cr.blocks.transpose()).cwiseAbs().maxCoeff() == 0.0);
    CHECK_NOTHROW(cr.validate());
}

TEST_CASE("independent white noise decorrelates with length") {
    std::vector<RVec> p, q;
    for (int v = 0; v < 3; ++v) {
        p.push_back(noise(v + 7, 10000));
        q.push_back(noise(v + 77, 10000));
    }
    auto cr = build_cr_matrix(p, q, 2);
    for (int i = 0; i < cr.dim(); ++i)
        for (int j = 0; j < cr.dim(); ++j)
            if (i != j) CHECK(std::abs(cr.blocks(i, j)) < 0.1);
}

TEST_CASE("lag blocks hold pairwise lagged correlations") {
    std::vector<RVec> p, q;
    for (int v = 0; v < 4; ++v) {
        RVec base = noise(v + 21, 400);
        // smooth a little so lag-1 structure is nontrivial
        RVec s(400);
        s(0) = base(0);
        for (int t = 1; t < 400; ++t) s(t) = 0.7 * s(t - 1) + base(t);
        p.push_back(s);
        q.push_back(noise(v + 210, 400));
    }
    auto cr = build_cr_matrix(p, q, 2);
    // (newest, older) PP sub-block: entry (a, b) correlates a now with b one
    // step earlier.
    for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
            double expect = empirical_correlation(p[b], p[a], 1);
            CHECK(cr.blocks(cr.index(0, 1, a), cr.index(0, 0, b)) ==
                  doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("nearest pd: identity is a fixed point") {
    CorrelationMatrix cr;
    cr.nt = 1;
    cr.n_vars = 3;
    cr.blocks = RMat::Identity(6, 6);
    auto out = nearest_pd_correlation(cr);
    CHECK((out.blocks - cr.blocks).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nearest pd: invalid 2x2 shrinks onto the boundary") {
    CorrelationMatrix cr;
    cr.nt = 1;
    cr.n_vars = 1;
    cr.blocks.resize(2, 2);
    cr.blocks << 1.0, 1.2, 1.2, 1.0;
    auto out = nearest_pd_correlation(cr, 1e-10, 2000);
    CHECK(std::abs(out.blocks(0, 1) - 1.0) < 1e-6);
    CHECK(std::abs(out.blocks(0, 0) - 1.0) < 1e-12);
    CHECK(out.min_eigenvalue() >= -1e-10);
}

TEST_CASE("nearest pd: PSD inputs pass through, indefinite inputs repaired") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        testutil::Rng rng(seed + 3000);
        const int n = 4 + static_cast<int>(seed % 5);
        RMat r(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) r(i, j) = rng.normal();
        RMat s = r * r.transpose();
        RVec d = s.diagonal().cwiseSqrt();
        RMat corr = d.cwiseInverse().asDiagonal() * s * d.cwiseInverse().asDiagonal();
        corr.diagonal().setOnes();
        CorrelationMatrix cr;
        cr.nt = 1;
        cr.n_vars = n;
        cr.blocks = corr;

        auto same = nearest_pd_correlation(cr);
        CHECK((same.blocks - corr).cwiseAbs().maxCoeff() < 1e-10);

        // break PSD-ness by pushing off-diagonals outward
        CorrelationMatrix bad = cr;
        bad.blocks = 1.6 * corr;
        bad.blocks.diagonal().setOnes();
        auto fixed = nearest_pd_correlation(bad);
        CHECK(fixed.min_eigenvalue() >= -1e-10);
        for (int i = 0; i < n; ++i)
            CHECK(fixed.blocks(i, i) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK((fixed.blocks - fixed.blocks.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
}
