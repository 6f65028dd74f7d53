#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsse/common.hpp"
#include "dsse/correlation.hpp"
#include "dsse/estimator.hpp"
#include "dsse/network.hpp"
#include "dsse/profiles.hpp"
#include "dsse/rng.hpp"
#include "dsse/wls.hpp"

namespace dsse {

/// Variance decomposition of the latent load model behind both the
/// parametric correlation matrices and the scenario truth generator:
/// a global driver shared by every area, a per-group driver, a per-bus
/// driver (multi-phase), and a fast idiosyncratic remainder.
struct LatentCorrelationParams {
    double within_group = 0.85;
    double cross_group = 0.65;
    double within_bus = 0.90;  // only used when phases share a bus
    double pq_idio = 0.6;      // instantaneous P-Q coupling of the idio part
    double phi_slow = 0.42;    // per-window-step decay of the shared drivers
    double phi_fast = 0.0;    // decay of the idiosyncratic part

    struct Split {
        double v_global, v_group, v_bus, v_idio;
    };
    Split split(bool multiphase) const {
        Split s;
        s.v_global = cross_group;
        s.v_group = within_group - cross_group;
        s.v_bus = multiphase ? within_bus - within_group : 0.0;
        s.v_idio = 1.0 - s.v_global - s.v_group - s.v_bus;
        if (s.v_global < 0.0 || s.v_group < 0.0 || s.v_bus < 0.0 || s.v_idio <= 0.0)
            throw NumericalError("inconsistent correlation parameters");
        return s;
    }
};

/// Analytic CR matrix of the latent model: PSD by construction since it is
/// the correlation of a well-defined stationary process. The correlations
/// describe the real/imaginary parts of the injected currents, so when a
/// nominal current vector is given its component signs orient each entry
/// (loads with negative imaginary parts anti-correlate in the cross
/// quadrants even though the underlying load moves are positively coupled).
inline CorrelationMatrix parametric_cr(const std::vector<std::string>& group_of_var,
                                       const std::vector<int>& bus_of_var, int nt,
                                       const LatentCorrelationParams& params,
                                       bool multiphase,
                                       const CVec* nominal = nullptr) {
    const int nv = static_cast<int>(group_of_var.size());
    require_dim(static_cast<int>(bus_of_var.size()) == nv,
                "group/bus labels must cover every variable");
    require_dim(nominal == nullptr || static_cast<int>(nominal->size()) == nv,
                "nominal current vector must cover every variable");
    auto s = params.split(multiphase);
    auto sign_of = [&](int part, int v) {
        if (!nominal) return 1.0;
        double c = part == 0 ? (*nominal)(v).real() : (*nominal)(v).imag();
        return c < 0.0 ? -1.0 : 1.0;
    };

    CorrelationMatrix cr;
    cr.nt = nt;
    cr.n_vars = nv;
    cr.blocks.resize(cr.dim(), cr.dim());
    for (int px = 0; px < 2; ++px)
        for (int py = 0; py < 2; ++py)
            for (int s1 = 0; s1 < nt; ++s1)
                for (int s2 = 0; s2 < nt; ++s2) {
                    int lag = std::abs(s1 - s2);
                    double slow = std::pow(params.phi_slow, lag);
                    double fast = std::pow(params.phi_fast, lag);
                    for (int a = 0; a < nv; ++a)
                        for (int b = 0; b < nv; ++b) {
                            double r = s.v_global * slow;
                            if (group_of_var[a] == group_of_var[b])
                                r += s.v_group * slow;
                            if (bus_of_var[a] == bus_of_var[b]) r += s.v_bus * slow;
                            if (a == b)
                                r += (px == py ? 1.0 : params.pq_idio) * s.v_idio * fast;
                            r *= sign_of(px, a) * sign_of(py, b);
                            cr.blocks(cr.index(px, s1, a), cr.index(py, s2, b)) = r;
                        }
                }
    return cr;
}

/// A bundled test network with its nominal loading, group labels and
/// default meter placements.
struct NetworkBundle {
    std::string name;
    RadialNetwork net;
    CVec nominal;                     // per-state injected current, A
    std::vector<std::string> group;   // per-state group label
    std::vector<Target> meters_primary;
    std::vector<Target> meters_secondary;  // added in the two-meter scenario
    LatentCorrelationParams cr_params;

    std::vector<int> bus_of_vars() const {
        std::vector<int> v(net.state_dim());
        for (int k = 0; k < net.state_dim(); ++k) v[k] = k / net.phase_count();
        return v;
    }
};

namespace detail {

/// Rescale all branch impedances so the mean nominal voltage drop hits the
/// target fraction of the reference magnitude.
inline RadialNetwork calibrate_drop(const RadialNetwork& net, const CVec& nominal,
                                    double target_mean_drop) {
    auto fm = build_flow_matrices(net);
    const int p = net.phase_count();
    CVec vref(p);
    for (int ph = 0; ph < p; ++ph)
        vref(ph) = net.base_voltage() * std::exp(cxd(0.0, -2.0 * kPi * ph / 3.0));
    auto [ibr, v] = direct_power_flow(fm, nominal, vref);
    double drop = 0.0;
    for (int k = 0; k < v.size(); ++k)
        drop += std::abs(std::abs(vref(k % p)) - std::abs(v(k))) /
                std::abs(vref(k % p));
    drop /= static_cast<double>(v.size());
    double scale = target_mean_drop / drop;
    std::vector<Branch> branches = net.branches();
    for (auto& br : branches) br.impedance *= scale;
    return RadialNetwork(net.buses(), std::move(branches), net.reference_bus(),
                         net.base_voltage(), net.phase_count());
}

}  // namespace detail

/// Six-bus feeder with the five study areas: residential a1/a2/a4,
/// industrial a3/a5, meter on a1 (second meter on a3). Impedances are
/// synthetic, calibrated for a heavily loaded feeder.
inline NetworkBundle make_six_bus() {
    std::vector<Bus> buses{{"ref"}, {"a1"}, {"a2"}, {"a3"}, {"a4"}, {"a5"}};
    const char* ids[] = {"ref", "a1", "a2", "a3", "a4", "a5"};
    std::vector<Branch> branches;
    for (int i = 0; i < 5; ++i) {
        CMat z(1, 1);
        z << cxd(1.0, 0.6);
        branches.push_back({ids[i], ids[i + 1], z});
    }
    NetworkBundle b{.name = "six_bus",
                    .net = RadialNetwork(buses, branches, "ref", 2400.0, 1),
                    .nominal = CVec(5),
                    .group = {"residential", "residential", "industrial",
                              "residential", "industrial"},
                    .meters_primary = {{StateKind::injected_current, "a1", 0}},
                    .meters_secondary = {{StateKind::injected_current, "a3", 0}},
                    .cr_params = {}};
    b.nominal << cxd(18.9, -6.7), cxd(13.4, -12.7), cxd(14.8, -10.9),
        cxd(16.8, -14.9), cxd(17.7, -14.9);
    b.net = detail::calibrate_drop(b.net, b.nominal, 0.135);
    return b;
}

/// 123-bus radial feeder shaped after the familiar medium-voltage test
/// feeder: a 30-bus trunk and eight laterals, one residential region and
/// three industrial pockets, six meters (buses n2/n48/n69 residential,
/// n28/n77/n109 industrial).
inline NetworkBundle make_feeder123() {
    std::vector<Bus> buses{{"n1"}};
    std::vector<Branch> branches;
    RandomStream layout(20230901);  // fixed layout jitter, deterministic
    auto add_bus = [&](const std::string& parent) {
        std::string id = "n" + std::to_string(buses.size() + 1);
        CMat z(1, 1);
        z << cxd(0.10, 0.21) * layout.uniform(0.7, 1.3);
        branches.push_back({parent, id, z});
        buses.push_back({id});
        return id;
    };
    std::vector<std::string> trunk{"n1"};
    for (int i = 0; i < 30; ++i) trunk.push_back(add_bus(trunk.back()));
    const int lateral_at[] = {3, 6, 9, 12, 15, 18, 21, 24};
    const int lateral_len[] = {12, 10, 14, 12, 10, 12, 10, 12};
    for (int l = 0; l < 8; ++l) {
        std::string at = trunk[lateral_at[l]];
        for (int i = 0; i < lateral_len[l]; ++i) at = add_bus(at);
    }

    RadialNetwork net(buses, branches, "n1", 2400.0, 1);
    const int sd = net.state_dim();
    NetworkBundle b{.name = "feeder123",
                    .net = net,
                    .nominal = CVec(sd),
                    .group = std::vector<std::string>(sd, "residential"),
                    .meters_primary = {},
                    .meters_secondary = {},
                    .cr_params = {}};

    auto bus_number = [](const std::string& id) { return std::stoi(id.substr(1)); };
    RandomStream loads(77001);
    for (int k = 0; k < sd; ++k) {
        int n = bus_number(net.ordered_buses()[k]);
        bool industrial = (n >= 22 && n <= 31) || (n >= 71 && n <= 79) ||
                          (n >= 102 && n <= 111);
        b.group[k] = industrial ? "industrial" : "residential";
        double scale = loads.uniform(0.85, 1.15);
        b.nominal(k) = industrial ? cxd(9.0, -4.5) * scale : cxd(3.0, -1.2) * scale;
    }
    for (const char* id : {"n2", "n48", "n69", "n28", "n77", "n109"})
        b.meters_primary.push_back({StateKind::injected_current, id, 0});
    b.net = detail::calibrate_drop(b.net, b.nominal, 0.08);
    return b;
}

/// Five copies of the 123-bus feeder in parallel on one reference bus.
inline NetworkBundle make_feeder123_parallel(int copies = 5) {
    NetworkBundle base = make_feeder123();
    std::vector<Bus> buses{{"ref"}};
    std::vector<Branch> branches;
    NetworkBundle b{.name = "feeder123x" + std::to_string(copies),
                    .net = base.net,  // replaced below
                    .nominal = CVec(copies * base.net.state_dim()),
                    .group = {},
                    .meters_primary = {},
                    .meters_secondary = {},
                    .cr_params = base.cr_params};
    for (int c = 0; c < copies; ++c) {
        std::string prefix = "f" + std::to_string(c + 1) + ".";
        for (const Bus& bus : base.net.buses())
            if (bus.id != base.net.reference_bus()) buses.push_back({prefix + bus.id});
        for (const Branch& br : base.net.branches()) {
            std::string from = br.from_bus == base.net.reference_bus()
                                   ? "ref"
                                   : prefix + br.from_bus;
            branches.push_back({from, prefix + br.to_bus, br.impedance});
        }
        for (const Target& t : base.meters_primary)
            b.meters_primary.push_back({t.kind, prefix + t.element, t.phase});
    }
    b.net = RadialNetwork(buses, branches, "ref", base.net.base_voltage(), 1);
    b.group.resize(b.net.state_dim());
    for (int k = 0; k < b.net.state_dim(); ++k) {
        const std::string& id = b.net.ordered_buses()[k];
        std::string inner = id.substr(id.find('.') + 1);
        int k0 = base.net.order_of(inner);
        b.nominal(k) = base.nominal(k0);
        // feeders are distinct communities: distinct group labels per copy
        b.group[k] = id.substr(0, id.find('.')) + "/" + base.group[k0];
    }
    return b;
}

/// 23-bus three-phase LV network with mutual phase coupling and unbalanced
/// loads; meters on buses 1 and 10. R/X near one so the R/X-ratio study can
/// raise resistance 30% while holding |Z|.
inline NetworkBundle make_lv23() {
    std::vector<Bus> buses{{"tx"}};
    std::vector<Branch> branches;
    auto section = [&](const std::string& from, const std::string& to) {
        CMat z(3, 3);
        cxd self(0.08, 0.08), mutual(0.0, 0.025);
        z << self, mutual, mutual, mutual, self, mutual, mutual, mutual, self;
        branches.push_back({from, to, z});
        buses.push_back({to});
    };
    // trunk b1..b10, laterals b11..b16 (off b4) and b17..b22 (off b8)
    std::string prev = "tx";
    for (int i = 1; i <= 10; ++i) {
        section(prev, "b" + std::to_string(i));
        prev = "b" + std::to_string(i);
    }
    prev = "b4";
    for (int i = 11; i <= 16; ++i) {
        section(prev, "b" + std::to_string(i));
        prev = "b" + std::to_string(i);
    }
    prev = "b8";
    for (int i = 17; i <= 22; ++i) {
        section(prev, "b" + std::to_string(i));
        prev = "b" + std::to_string(i);
    }

    RadialNetwork net(buses, branches, "tx", 230.0, 3);
    const int sd = net.state_dim();
    NetworkBundle b{.name = "lv23",
                    .net = net,
                    .nominal = CVec(sd),
                    .group = std::vector<std::string>(sd, "rc_a"),
                    .meters_primary = {},
                    .meters_secondary = {},
                    .cr_params = {}};
    b.cr_params.within_bus = 0.90;
    RandomStream loads(88002);
    const double phase_mix[3] = {1.2, 0.95, 0.85};  // unbalance
    for (int k = 0; k < sd; ++k) {
        int bus = k / 3, ph = k % 3;
        // pf ~ 0.95 lagging
        double amps = 16.0 * phase_mix[ph] * loads.uniform(0.8, 1.2);
        cxd unit = std::exp(cxd(0.0, -2.0 * kPi * ph / 3.0));
        b.nominal(k) = amps * cxd(1.0, -1.0 / 3.0) * unit;
        b.group[k] = bus < 10 ? "rc_a" : "rc_b";
    }
    for (int ph = 0; ph < 3; ++ph) {
        b.meters_primary.push_back({StateKind::injected_current, "b1", ph});
        b.meters_primary.push_back({StateKind::injected_current, "b10", ph});
    }
    b.meters_secondary.push_back({StateKind::injected_current, "b17", 0});
    b.meters_secondary.push_back({StateKind::injected_current, "b17", 1});
    b.meters_secondary.push_back({StateKind::injected_current, "b17", 2});
    b.net = detail::calibrate_drop(b.net, b.nominal, 0.05);
    return b;
}

inline NetworkBundle builtin_bundle(const std::string& name) {
    if (name == "six_bus") return make_six_bus();
    if (name == "feeder123") return make_feeder123();
    if (name == "feeder123x5") return make_feeder123_parallel(5);
    if (name == "lv23") return make_lv23();
    throw ParseError("unknown builtin network: " + name +
                     " (expected six_bus, feeder123, feeder123x5 or lv23)");
}

struct ScenarioConfig {
    std::string network = "six_bus";  // builtin name (or see custom_bundle)
    std::string correlation_source = "parametric";  // parametric | generated | file
    std::string correlation_file;
    bool add_secondary_meters = false;
    /// Metered targets per step; unset means the network's default meters,
    /// an empty list runs on pseudo data alone.
    std::optional<std::vector<Target>> meters;
    /// Set to run a scenario on a user-supplied network instead of a builtin.
    std::optional<NetworkBundle> custom_bundle;
    std::vector<double> loading = {0.8, 0.6, 0.4};
    std::vector<std::string> modes = {"WLS", "CS", "CST"};
    int nt = 3;
    double epsilon_real = 3.0;
    double epsilon_pseudo = 50.0;
    double epsilon_vref = 0.3;
    double rx_scale = 1.0;
    double truth_noise_sd = 0.035;
    uint64_t seed = 1;
    int bench_repeats = 11;

    void validate() const {
        if (loading.empty()) throw ParseError("loading schedule empty");
        for (double f : loading)
            if (!(f > 0.0)) throw ParseError("loading factors must be positive");
        if (nt < 1 || nt > 10) throw ParseError("nt outside [1, 10]");
        if (modes.empty()) throw ParseError("no estimation modes requested");
        for (const auto& m : modes)
            if (m != "WLS" && m != "CS" && m != "CST")
                throw ParseError("unknown mode " + m);
    }
};

struct MetricsRow {
    std::string mode;
    int step = 0;          // 1-based loading level
    double loading = 1.0;
    double amve_pct = 0.0;
    double aave_deg = 0.0;
    double mmve_pct = 0.0;
    double mave_deg = 0.0;
    double quality = 0.0;
    double time_s = 0.0;
    int iterations = 1;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;

    const MetricsRow& row(const std::string& mode, int step) const {
        for (const auto& r : rows)
            if (r.mode == mode && r.step == step) return r;
        throw DimensionError("no metrics row for " + mode + " step " +
                             std::to_string(step));
    }
};

/// One exported state row of an estimate CSV.
struct ExportRow {
    int step;
    StateKind kind;
    std::string element;
    int phase;
    cxd mean;
    double var_mag;
    double var_ang;
};

struct EstimateTable {
    std::string mode;
    int step = 0;  // scenario step the estimate belongs to
    std::vector<ExportRow> rows;
};

struct ScenarioResult {
    MetricsReport report;
    std::vector<EstimateTable> estimates;
};

inline MetricsRow error_metrics(const CVec& estimated, const CVec& truth) {
    require_dim(estimated.size() == truth.size(), "voltage vectors differ in size");
    MetricsRow m;
    for (int k = 0; k < truth.size(); ++k) {
        double tv = std::abs(truth(k));
        if (tv == 0.0) throw NumericalError("zero true voltage in metrics");
        double mag = 100.0 * std::abs(std::abs(estimated(k)) - tv) / tv;
        double ang = std::abs(wrap_angle(std::arg(estimated(k)) - std::arg(truth(k)))) *
                     180.0 / kPi;
        m.amve_pct += mag / static_cast<double>(truth.size());
        m.aave_deg += ang / static_cast<double>(truth.size());
        m.mmve_pct = std::max(m.mmve_pct, mag);
        m.mave_deg = std::max(m.mave_deg, ang);
    }
    return m;
}

/// Quality over the current (newest) window step's voltage block, the
/// figure comparable across CS, CST and WLS.
inline double quality_current_step(const StateEstimate& est) {
    double tr = 0.0;
    for (int k = 0; k < est.state_dim; ++k)
        tr += est.gamma_diag(est.index(2, est.nt - 1, k));
    return tr > 0.0 ? std::log(1.0 / tr) : std::numeric_limits<double>::infinity();
}

namespace detail {

/// Simulated latent process of the truth deviations, evolving with the same
/// decomposition and decay the parametric CR encodes.
class TruthProcess {
public:
    TruthProcess(const NetworkBundle& bundle, const LatentCorrelationParams& params,
                 RandomStream rng)
        : bundle_(bundle),
          params_(params),
          split_(params.split(bundle.net.phase_count() > 1)),
          rng_(rng) {
        const int sd = bundle.net.state_dim();
        for (int k = 0; k < sd; ++k) {
            if (group_index_.find(bundle.group[k]) == group_index_.end())
                group_index_[bundle.group[k]] = static_cast<int>(group_index_.size());
        }
        g_group_.assign(group_index_.size(), 0.0);
        g_bus_.assign(sd / bundle.net.phase_count(), 0.0);
        e_p_.assign(sd, 0.0);
        e_q_.assign(sd, 0.0);
        // stationary start
        c_ = rng_.normal();
        for (auto& g : g_group_) g = rng_.normal();
        for (auto& u : g_bus_) u = rng_.normal();
        for (auto& e : e_p_) e = rng_.normal();
        for (int k = 0; k < sd; ++k)
            e_q_[k] = params_.pq_idio * e_p_[k] +
                      std::sqrt(1.0 - params_.pq_idio * params_.pq_idio) * rng_.normal();
        initialized_ = false;
    }

    /// Advance one window step and return (eta_p, eta_q) per state variable.
    std::pair<RVec, RVec> step() {
        const double ps = params_.phi_slow, pf = params_.phi_fast;
        auto ar = [&](double prev, double phi) {
            return phi * prev + std::sqrt(1.0 - phi * phi) * rng_.normal();
        };
        if (initialized_) {
            c_ = ar(c_, ps);
            for (auto& g : g_group_) g = ar(g, ps);
            for (auto& u : g_bus_) u = ar(u, ps);
            for (size_t k = 0; k < e_p_.size(); ++k) {
                double xi_p = rng_.normal();
                double xi_q = params_.pq_idio * xi_p +
                              std::sqrt(1.0 - params_.pq_idio * params_.pq_idio) *
                                  rng_.normal();
                e_p_[k] = pf * e_p_[k] + std::sqrt(1.0 - pf * pf) * xi_p;
                e_q_[k] = pf * e_q_[k] + std::sqrt(1.0 - pf * pf) * xi_q;
            }
        }
        initialized_ = true;

        const int sd = bundle_.net.state_dim();
        const int p = bundle_.net.phase_count();
        RVec eta_p(sd), eta_q(sd);
        for (int k = 0; k < sd; ++k) {
            double common = std::sqrt(split_.v_global) * c_ +
                            std::sqrt(split_.v_group) *
                                g_group_[group_index_.at(bundle_.group[k])] +
                            std::sqrt(split_.v_bus) * g_bus_[k / p];
            eta_p(k) = common + std::sqrt(split_.v_idio) * e_p_[k];
            eta_q(k) = common + std::sqrt(split_.v_idio) * e_q_[k];
        }
        return {eta_p, eta_q};
    }

private:
    const NetworkBundle& bundle_;
    LatentCorrelationParams params_;
    LatentCorrelationParams::Split split_;
    RandomStream rng_;
    std::map<std::string, int> group_index_;
    double c_ = 0.0;
    std::vector<double> g_group_, g_bus_;
    std::vector<double> e_p_, e_q_;
    bool initialized_ = false;
};

inline double median_seconds(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace detail

/// Correlation matrix for a scenario from the configured source.
inline CorrelationMatrix scenario_correlation(const NetworkBundle& bundle,
                                              const ScenarioConfig& cfg) {
    if (cfg.correlation_source == "parametric")
        return parametric_cr(bundle.group, bundle.bus_of_vars(), cfg.nt,
                             bundle.cr_params, bundle.net.phase_count() > 1,
                             &bundle.nominal);
    if (cfg.correlation_source == "generated") {
        // Long historical run of grouped communities sharing one global
        // driver, then empirical CR and a PSD repair.
        const int days = 5;
        const int total = days * 1440;
        auto global = gen_global_noise(cfg.seed ^ 0xabcdef, total, 1.0);
        std::map<std::string, std::vector<int>> by_group;
        for (int k = 0; k < bundle.net.state_dim(); ++k)
            by_group[bundle.group[k]].push_back(k);
        std::vector<RVec> p(bundle.net.state_dim()), q(bundle.net.state_dim());
        uint64_t gi = 0;
        for (auto& [name, vars] : by_group) {
            CommunitySpec spec;
            spec.n_areas = static_cast<int>(vars.size());
            spec.customers_per_area = 20;
            spec.noise_sd = 1.0;
            spec.common_component_weight = 0.35;
            spec.n_days = days;
            spec.seed = cfg.seed * 1000 + gi++;
            if (name.find("industrial") != std::string::npos) {
                spec.base_profile.resize(1440);
                for (int m = 0; m < 1440; ++m)
                    spec.base_profile[m] = shapes::industrial(m);
            }
            auto areas = gen_synthetic_profiles(spec, &global, 0.55);
            for (size_t i = 0; i < vars.size(); ++i) {
                // current convention: Re tracks P, Im tracks -Q (lagging loads
                // draw currents with negative imaginary parts)
                p[vars[i]] = areas[i].real_part();
                q[vars[i]] = -areas[i].imag_part();
            }
        }
        auto cr = build_cr_matrix(p, q, cfg.nt);
        return nearest_pd_correlation(cr);
    }
    throw ParseError("correlation source must be parametric, generated or file; "
                     "load files through the io helpers");
}

/// Run the full case-study procedure: per loading level build the truth,
/// synthesize measurements, run every requested estimator and collect the
/// error/quality/timing table plus per-state estimates.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg,
                                   const CorrelationMatrix* cr_override = nullptr) {
    cfg.validate();
    NetworkBundle bundle =
        cfg.custom_bundle ? *cfg.custom_bundle : builtin_bundle(cfg.network);
    if (cfg.rx_scale != 1.0)
        bundle.net = perturb_rx_ratio(bundle.net, cfg.rx_scale);

    const RadialNetwork& net = bundle.net;
    const int p = net.phase_count();
    const int sd = net.state_dim();
    const int n_steps = static_cast<int>(cfg.loading.size());

    CorrelationMatrix cr =
        cr_override ? *cr_override : scenario_correlation(bundle, cfg);
    require_dim(cr.n_vars == sd && cr.nt >= cfg.nt,
                "scenario correlation matrix does not fit the network/window");

    std::vector<Target> meters = cfg.meters ? *cfg.meters : bundle.meters_primary;
    if (cfg.add_secondary_meters)
        for (const auto& t : bundle.meters_secondary) meters.push_back(t);
    for (const auto& t : meters)
        if (!net.has_bus(t.element))
            throw ParseError("metered element not in network: " + t.element);

    // Reference voltage: the regulated setpoint, one phasor per phase.
    std::vector<cxd> vref_value(p);
    for (int ph = 0; ph < p; ++ph)
        vref_value[ph] =
            net.base_voltage() * std::exp(cxd(0.0, -2.0 * kPi * ph / 3.0));
    CVec vref_vec(p);
    for (int ph = 0; ph < p; ++ph) vref_vec(ph) = vref_value[ph];

    // Truth per level and synthetic measured values for the metered targets.
    RandomStream root(cfg.seed);
    detail::TruthProcess truth_process(bundle, bundle.cr_params, root.child("truth"));
    auto fm = build_flow_matrices(net);

    std::vector<CVec> truth_inj(n_steps), truth_volts(n_steps), truth_branch(n_steps);
    std::vector<std::vector<cxd>> measured(n_steps);
    RandomStream meter_rng = root.child("meters");
    for (int step = 0; step < n_steps; ++step) {
        auto [eta_p, eta_q] = truth_process.step();
        CVec inj(sd);
        for (int k = 0; k < sd; ++k)
            inj(k) = cfg.loading[step] *
                     cxd(bundle.nominal(k).real() * (1.0 + cfg.truth_noise_sd * eta_p(k)),
                         bundle.nominal(k).imag() * (1.0 + cfg.truth_noise_sd * eta_q(k)));
        truth_inj[step] = inj;
        auto [ibr, volts] = direct_power_flow(fm, inj, vref_vec);
        truth_branch[step] = ibr;
        truth_volts[step] = volts;
        for (const Target& t : meters) {
            int pos = net.order_of(t.element) * p + t.phase;
            cxd true_val;
            switch (t.kind) {
                case StateKind::injected_current: true_val = inj(pos); break;
                case StateKind::branch_current: true_val = ibr(pos); break;
                case StateKind::bus_voltage: true_val = volts(pos); break;
            }
            cxd sdv = sd_from_error(true_val, cfg.epsilon_real);
            measured[step].push_back(true_val +
                                     cxd(std::abs(sdv.real()) * meter_rng.normal(),
                                         std::abs(sdv.imag()) * meter_rng.normal()));
        }
    }

    // Pseudo data: nominal loading for every injection, every window step.
    auto pseudo_window = [&](int window_len) {
        MeasurementSet set;
        set.steps.resize(window_len);
        for (int s = 0; s < window_len; ++s) {
            set.steps[s].vref.value = vref_value;
            set.steps[s].vref.epsilon_pct = cfg.epsilon_vref;
            for (int k = 0; k < sd; ++k)
                set.steps[s].entries.push_back(
                    {{StateKind::injected_current, net.ordered_buses()[k / p], k % p},
                     bundle.nominal(k),
                     cfg.epsilon_pseudo,
                     false});
        }
        return set;
    };
    auto realtime_window = [&](int first_step, int window_len) {
        MeasurementSet set;
        set.steps.resize(window_len);
        for (int s = 0; s < window_len; ++s) {
            set.steps[s].vref.value = vref_value;
            set.steps[s].vref.epsilon_pct = cfg.epsilon_vref;
            for (size_t mi = 0; mi < meters.size(); ++mi)
                set.steps[s].entries.push_back({meters[mi],
                                                measured[first_step + s][mi],
                                                cfg.epsilon_real, true});
        }
        return set;
    };

    ScenarioResult result;
    auto add_estimate_rows = [&](const std::string& mode, int step,
                                 const StateEstimate& est) {
        EstimateTable table{mode, step + 1, {}};
        int last = est.nt - 1;
        for (int section = 0; section < 3; ++section) {
            StateKind kind = section == 0 ? StateKind::injected_current
                             : section == 1 ? StateKind::branch_current
                                            : StateKind::bus_voltage;
            for (int k = 0; k < sd; ++k) {
                int idx = est.index(section, last, k);
                table.rows.push_back({step + 1, kind, net.ordered_buses()[k / p],
                                      k % p, est.mu_ibv(idx), est.var_mag(idx),
                                      est.var_ang(idx)});
            }
        }
        result.estimates.push_back(std::move(table));
    };

    for (const std::string& mode : cfg.modes) {
        if (mode == "WLS") {
            for (int step = 0; step < n_steps; ++step) {
                MeasurementStep merged;
                merged.vref.value = vref_value;
                merged.vref.epsilon_pct = cfg.epsilon_vref;
                std::map<std::string, size_t> meter_of;
                for (size_t mi = 0; mi < meters.size(); ++mi)
                    if (meters[mi].kind == StateKind::injected_current)
                        meter_of[meters[mi].element + "#" +
                                 std::to_string(meters[mi].phase)] = mi + 1;
                for (int k = 0; k < sd; ++k) {
                    std::string key = net.ordered_buses()[k / p] + "#" +
                                      std::to_string(k % p);
                    auto it = meter_of.find(key);
                    if (it != meter_of.end())
                        merged.entries.push_back(
                            {{StateKind::injected_current, net.ordered_buses()[k / p],
                              k % p},
                             measured[step][it->second - 1],
                             cfg.epsilon_real,
                             true});
                    else
                        merged.entries.push_back(
                            {{StateKind::injected_current, net.ordered_buses()[k / p],
                              k % p},
                             bundle.nominal(k),
                             cfg.epsilon_pseudo,
                             false});
                }
                // non-injection meters appended as extra rows
                for (size_t mi = 0; mi < meters.size(); ++mi)
                    if (meters[mi].kind != StateKind::injected_current)
                        merged.entries.push_back({meters[mi], measured[step][mi],
                                                  cfg.epsilon_real, true});

                WlsResult wres;
                std::vector<double> times;
                for (int rep = 0; rep < cfg.bench_repeats; ++rep) {
                    auto t0 = std::chrono::steady_clock::now();
                    wres = wls_estimate(net, merged, &cr);
                    auto t1 = std::chrono::steady_clock::now();
                    times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                MetricsRow row = error_metrics(wres.voltages, truth_volts[step]);
                row.mode = mode;
                row.step = step + 1;
                row.loading = cfg.loading[step];
                row.quality = wres.quality;
                row.time_s = detail::median_seconds(times);
                row.iterations = wres.iterations;
                result.report.rows.push_back(row);

                EstimateTable table{mode, step + 1, {}};
                for (int k = 0; k < sd; ++k)
                    table.rows.push_back({step + 1, StateKind::bus_voltage,
                                          net.ordered_buses()[k / p], k % p,
                                          wres.voltages(k), wres.var_mag(k),
                                          wres.var_ang(k)});
                result.estimates.push_back(std::move(table));
            }
        } else {
            const bool cst = mode == "CST";
            const int max_window = cst ? cfg.nt : 1;
            // one offline context per window length, reused across the schedule
            std::vector<EstimatorContext> ctx;
            for (int len = 1; len <= max_window; ++len) {
                EstimatorOptions opt;
                opt.mode = cst ? EstimatorMode::cst : EstimatorMode::cs;
                opt.nt = len;
                opt.vref_epsilon_pct = cfg.epsilon_vref;
                ctx.emplace_back(net, cr, pseudo_window(len), realtime_window(0, len),
                                 opt);
            }
            for (int step = 0; step < n_steps; ++step) {
                int window_len = std::min(step + 1, max_window);
                int first = step + 1 - window_len;
                MeasurementSet window = realtime_window(first, window_len);
                const EstimatorContext& c = ctx[window_len - 1];
                StateEstimate est;
                std::vector<double> times;
                for (int rep = 0; rep < cfg.bench_repeats; ++rep) {
                    auto t0 = std::chrono::steady_clock::now();
                    est = c.run(window);
                    auto t1 = std::chrono::steady_clock::now();
                    times.push_back(std::chrono::duration<double>(t1 - t0).count());
                }
                MetricsRow row =
                    error_metrics(est.voltages(est.nt - 1), truth_volts[step]);
                row.mode = mode;
                row.step = step + 1;
                row.loading = cfg.loading[step];
                row.quality = quality_current_step(est);
                row.time_s = detail::median_seconds(times);
                row.iterations = static_cast<int>(est.conditioning_calls);
                result.report.rows.push_back(row);
                add_estimate_rows(mode, step, est);
            }
        }
    }
    return result;
}

}  // namespace dsse
