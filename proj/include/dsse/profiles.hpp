#pragma once

#include <string>
#include <vector>

#include "dsse/common.hpp"
#include "dsse/correlation.hpp"
#include "dsse/rng.hpp"

namespace dsse {

/// Synthetic community of load areas: every house follows the daily base
/// shape scaled by a mix of one shared noise process and its own
/// idiosyncratic process, minus local PV. Aggregating more customers per
/// area damps the idiosyncratic part, which is what drives the rising
/// spatial/temporal correlation with community size.
struct CommunitySpec {
    int n_areas = 2;
    int customers_per_area = 1;
    std::vector<double> base_profile;   // one day, per sample; empty = builtin
    double noise_sd = 0.8;              // per-house relative noise
    double common_component_weight = 0.3;  // fraction of noise shared
    double pv_penetration = 0.0;        // [0, 0.25] of mean house load
    double sample_interval_min = 1.0;
    int n_days = 7;
    uint64_t seed = 1;

    void validate() const {
        if (n_areas < 1 || customers_per_area < 1)
            throw DimensionError("community needs at least one area and customer");
        if (common_component_weight < 0.0 || common_component_weight > 1.0)
            throw NumericalError("common_component_weight outside [0, 1]");
        if (pv_penetration < 0.0 || pv_penetration > 0.25)
            throw NumericalError("pv_penetration outside [0, 0.25]");
        if (noise_sd < 0.0) throw NumericalError("noise_sd negative");
        if (sample_interval_min <= 0.0) throw NumericalError("bad sample interval");
    }
};

namespace shapes {

/// Double-peak residential day, mean load around two thirds of peak.
inline double residential(double minute_of_day) {
    double h = minute_of_day / 60.0;
    auto bump = [](double h, double center, double width) {
        double d = (h - center) / width;
        return std::exp(-d * d);
    };
    return 0.50 + 0.26 * bump(h, 8.0, 2.1) + 0.46 * bump(h, 19.0, 2.9);
}

/// Flat-top working-hours industrial day.
inline double industrial(double minute_of_day) {
    double h = minute_of_day / 60.0;
    double rise = 1.0 / (1.0 + std::exp(-(h - 7.0) * 2.0));
    double fall = 1.0 / (1.0 + std::exp((h - 17.5) * 2.0));
    return 0.3 + 0.8 * rise * fall;
}

/// Clear-sky PV bell around noon.
inline double pv(double minute_of_day) {
    double h = minute_of_day / 60.0;
    if (h < 5.5 || h > 18.5) return 0.0;
    double d = (h - 12.0) / 3.4;
    return std::exp(-d * d);
}

}  // namespace shapes

namespace detail {

struct Ar1 {
    double phi;
    double sd;
    double value = 0.0;

    void init(RandomStream& rng) { value = sd * rng.normal(); }
    double step(RandomStream& rng) {
        value = phi * value + sd * std::sqrt(1.0 - phi * phi) * rng.normal();
        return value;
    }
};

}  // namespace detail

/// Generate one area group's complex (P + jQ) profiles. Byte-for-byte
/// reproducible for a fixed spec. An optional externally supplied shared
/// series lets several groups ride one common driver (cross-group
/// correlation); pass nullptr for a self-contained community.
inline std::vector<LoadProfile> gen_synthetic_profiles(
    const CommunitySpec& spec, const std::vector<double>* global_noise = nullptr,
    double global_weight = 0.0) {
    spec.validate();
    const int per_day = static_cast<int>(1440.0 / spec.sample_interval_min);
    const int total = per_day * spec.n_days;

    std::vector<double> base(total);
    for (int t = 0; t < total; ++t) {
        double minute = std::fmod(t * spec.sample_interval_min, 1440.0);
        base[t] = spec.base_profile.empty()
                      ? shapes::residential(minute)
                      : spec.base_profile[static_cast<size_t>(
                            minute / 1440.0 * spec.base_profile.size())];
    }

    RandomStream root(spec.seed);
    RandomStream shared_rng = root.child("shared");
    detail::Ar1 shared{0.97, spec.noise_sd};
    shared.init(shared_rng);
    std::vector<double> shared_series(total);
    for (int t = 0; t < total; ++t) shared_series[t] = shared.step(shared_rng);

    RandomStream cloud_rng = root.child("cloud");
    detail::Ar1 cloud{0.995, 1.0};
    cloud.init(cloud_rng);
    std::vector<double> cloud_series(total);
    for (int t = 0; t < total; ++t)
        cloud_series[t] = 0.65 + 0.35 * std::tanh(cloud.step(cloud_rng));

    const double w = spec.common_component_weight;
    std::vector<LoadProfile> areas;
    areas.reserve(spec.n_areas);
    for (int a = 0; a < spec.n_areas; ++a) {
        CVec sum = CVec::Zero(total);
        RandomStream area_rng = root.child("area").child(static_cast<uint64_t>(a));
        for (int hse = 0; hse < spec.customers_per_area; ++hse) {
            RandomStream rng = area_rng.child(static_cast<uint64_t>(hse));
            detail::Ar1 idio{0.25, spec.noise_sd};
            idio.init(rng);
            double pf = rng.uniform(0.90, 0.98);
            double tan_phi = std::tan(std::acos(pf));
            double pv_cap = spec.pv_penetration > 0.0
                                ? spec.pv_penetration * rng.uniform(0.8, 1.2)
                                : 0.0;
            detail::Ar1 qnoise{0.4, 0.12};
            qnoise.init(rng);
            for (int t = 0; t < total; ++t) {
                double mix = w * shared_series[t] + (1.0 - w) * idio.step(rng);
                if (global_noise)
                    mix = (1.0 - global_weight) * mix +
                          global_weight * (*global_noise)[t];
                double p_load = base[t] * std::max(0.02, 1.0 + mix);
                double minute = std::fmod(t * spec.sample_interval_min, 1440.0);
                double p_net = p_load - pv_cap * shapes::pv(minute) * cloud_series[t];
                double q = p_load * tan_phi * (1.0 + qnoise.step(rng));
                sum(t) += cxd(p_net, q);
            }
        }
        LoadProfile lp;
        lp.area_id = "area" + std::to_string(a + 1);
        lp.interval_min = spec.sample_interval_min;
        lp.samples = sum;
        areas.push_back(std::move(lp));
    }
    return areas;
}

/// Shared global driver for multi-group generation, with the same
/// statistics as the per-community shared noise.
inline std::vector<double> gen_global_noise(uint64_t seed, int total_samples,
                                            double sd = 0.8) {
    RandomStream rng = RandomStream(seed).child("global");
    detail::Ar1 g{0.97, sd};
    g.init(rng);
    std::vector<double> out(total_samples);
    for (int t = 0; t < total_samples; ++t) out[t] = g.step(rng);
    return out;
}

/// Mean pairwise spatial correlation (lag 0, real parts) across areas.
inline double mean_spatial_correlation(const std::vector<LoadProfile>& areas) {
    double sum = 0.0;
    int count = 0;
    for (size_t a = 0; a < areas.size(); ++a)
        for (size_t b = a + 1; b < areas.size(); ++b) {
            sum += empirical_correlation(areas[a].real_part(), areas[b].real_part());
            ++count;
        }
    if (count == 0) throw DimensionError("need at least two areas");
    return sum / count;
}

/// Mean lag-k temporal autocorrelation (real parts) across areas.
inline double mean_temporal_correlation(const std::vector<LoadProfile>& areas,
                                        int lag = 1) {
    double sum = 0.0;
    for (const auto& a : areas) {
        RVec re = a.real_part();
        sum += empirical_correlation(re, re, lag);
    }
    return sum / static_cast<double>(areas.size());
}

}  // namespace dsse
