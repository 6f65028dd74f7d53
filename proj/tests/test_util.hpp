#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsse/complex_gaussian.hpp"
#include "dsse/network.hpp"

namespace testutil {

// Deterministic generator independent of the library's RNG.
struct Rng {
    uint64_t state;
    explicit Rng(uint64_t seed) : state(seed + 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int uniform_int(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }
    double normal() {
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * dsse::kPi * u2);
    }
    dsse::cxd cnormal() { return {normal(), normal()}; }
};

inline dsse::RadialNetwork random_radial_network(uint64_t seed, int n_buses,
                                                 int phases = 1) {
    Rng rng(seed * 7919 + 13);
    std::vector<dsse::Bus> buses;
    buses.push_back({"ref"});
    for (int i = 1; i < n_buses; ++i) buses.push_back({"b" + std::to_string(i)});
    std::vector<dsse::Branch> branches;
    for (int i = 1; i < n_buses; ++i) {
        int parent = rng.uniform_int(0, i - 1);
        dsse::CMat z(phases, phases);
        for (int a = 0; a < phases; ++a)
            for (int b = a; b < phases; ++b) {
                if (a == b)
                    z(a, b) = dsse::cxd(rng.uniform(0.2, 2.0), rng.uniform(0.3, 2.5));
                else
                    z(a, b) = z(b, a) = dsse::cxd(0.0, rng.uniform(0.05, 0.3));
            }
        branches.push_back({buses[parent].id, buses[i].id, z});
    }
    return dsse::RadialNetwork(buses, branches, "ref", 2400.0, phases);
}

/// Random valid improper complex Gaussian built from a random PSD real
/// composite, so the augmented-covariance validity condition holds by
/// construction.
inline dsse::ComplexGaussian random_gaussian(uint64_t seed, int dim,
                                             double jitter = 1e-3) {
    Rng rng(seed * 31337 + 7);
    dsse::RMat r(2 * dim, 2 * dim);
    for (int i = 0; i < 2 * dim; ++i)
        for (int j = 0; j < 2 * dim; ++j) r(i, j) = rng.normal();
    dsse::RMat s = r * r.transpose() / (2.0 * dim);
    s += jitter * dsse::RMat::Identity(2 * dim, 2 * dim);
    dsse::RealCompositeCovariance k;
    k.rr = s.topLeftCorner(dim, dim);
    k.ri = s.topRightCorner(dim, dim);
    k.ir = s.bottomLeftCorner(dim, dim);
    k.ii = s.bottomRightCorner(dim, dim);
    auto [gamma, c] = dsse::complex_from_real_composite(k);
    dsse::ComplexGaussian g;
    g.gamma = std::move(gamma);
    g.c = std::move(c);
    g.mean.resize(dim);
    for (int i = 0; i < dim; ++i) g.mean(i) = rng.cnormal();
    return g;
}

/// Hand-rolled conditioning of the real composite Gaussian; the independent oracle
/// used against the library implementations. Plain inverse, no shortcuts.
struct CompositeOracle {
    dsse::RVec mean;
    dsse::RMat cov;
};

inline CompositeOracle oracle_condition(const dsse::ComplexGaussian& g,
                                        const std::vector<int>& measured,
                                        const std::vector<int>& unmeasured,
                                        const dsse::CVec& observed) {
    const int n = g.dim();
    dsse::RVec mean(2 * n);
    mean.head(n) = g.mean.real();
    mean.tail(n) = g.mean.imag();
    dsse::RMat cov(2 * n, 2 * n);
    cov.topLeftCorner(n, n) = 0.5 * (g.gamma + g.c).real();
    cov.topRightCorner(n, n) = 0.5 * (g.c - g.gamma).imag();
    cov.bottomLeftCorner(n, n) = 0.5 * (g.gamma + g.c).imag();
    cov.bottomRightCorner(n, n) = 0.5 * (g.gamma - g.c).real();

    std::vector<int> r1, r2;
    for (int i : measured) r1.push_back(i);
    for (int i : measured) r1.push_back(n + i);
    for (int i : unmeasured) r2.push_back(i);
    for (int i : unmeasured) r2.push_back(n + i);

    const int m = static_cast<int>(r1.size());
    const int u = static_cast<int>(r2.size());
    dsse::RMat s11(m, m), s21(u, m), s22(u, u);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) s11(a, b) = cov(r1[a], r1[b]);
    for (int a = 0; a < u; ++a)
        for (int b = 0; b < m; ++b) s21(a, b) = cov(r2[a], r1[b]);
    for (int a = 0; a < u; ++a)
        for (int b = 0; b < u; ++b) s22(a, b) = cov(r2[a], r2[b]);

    dsse::RVec obs(m), m1(m), m2(u);
    const int mm = m / 2;
    for (int i = 0; i < mm; ++i) {
        obs(i) = observed(i).real();
        obs(mm + i) = observed(i).imag();
    }
    for (int a = 0; a < m; ++a) m1(a) = mean(r1[a]);
    for (int a = 0; a < u; ++a) m2(a) = mean(r2[a]);

    dsse::RMat s11_inv = s11.inverse();
    CompositeOracle out;
    out.mean = m2 + s21 * s11_inv * (obs - m1);
    out.cov = s22 - s21 * s11_inv * s21.transpose();
    return out;
}

}  // namespace testutil
