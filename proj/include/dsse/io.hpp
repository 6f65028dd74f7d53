#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dsse/correlation.hpp"
#include "dsse/estimator.hpp"
#include "dsse/network.hpp"
#include "dsse/profiles.hpp"
#include "dsse/scenario.hpp"

namespace dsse::io {

using nlohmann::json;

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path);
    out << text;
}

// ---------------------------------------------------------------------------
// networks

inline CMat parse_impedance(const json& branch, int p) {
    auto read_part = [&](const char* key) {
        RMat m(p, p);
        const json& v = branch.at(key);
        if (v.is_number()) {
            if (p != 1) throw ParseError("scalar impedance in a multi-phase network");
            m(0, 0) = v.get<double>();
        } else {
            if (static_cast<int>(v.size()) != p)
                throw ParseError("impedance matrix row count != phase_count");
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < p; ++j) m(i, j) = v.at(i).at(j).get<double>();
        }
        return m;
    };
    RMat r = read_part("resistance");
    RMat x = read_part("reactance");
    CMat z(p, p);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) z(i, j) = cxd(r(i, j), x(i, j));
    return z;
}

inline RadialNetwork load_network_json(const std::string& path) {
    json j = read_json_file(path);
    try {
        int p = j.value("phase_count", 1);
        std::vector<Bus> buses;
        for (const auto& b : j.at("buses"))
            buses.push_back({b.is_string() ? b.get<std::string>()
                                           : b.at("id").get<std::string>()});
        std::vector<Branch> branches;
        for (const auto& br : j.at("branches"))
            branches.push_back({br.at("from").get<std::string>(),
                                br.at("to").get<std::string>(),
                                parse_impedance(br, p)});
        return RadialNetwork(buses, branches, j.at("reference_bus").get<std::string>(),
                             j.at("base_voltage_v").get<double>(), p);
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline void save_network_json(const std::string& path, const RadialNetwork& net) {
    json j;
    j["phase_count"] = net.phase_count();
    j["base_voltage_v"] = net.base_voltage();
    j["reference_bus"] = net.reference_bus();
    for (const Bus& b : net.buses()) j["buses"].push_back({{"id", b.id}});
    for (const Branch& br : net.branches()) {
        json e{{"from", br.from_bus}, {"to", br.to_bus}};
        const int p = net.phase_count();
        if (p == 1) {
            e["resistance"] = br.impedance(0, 0).real();
            e["reactance"] = br.impedance(0, 0).imag();
        } else {
            for (int i = 0; i < p; ++i) {
                json rrow = json::array(), xrow = json::array();
                for (int jj = 0; jj < p; ++jj) {
                    rrow.push_back(br.impedance(i, jj).real());
                    xrow.push_back(br.impedance(i, jj).imag());
                }
                e["resistance"].push_back(rrow);
                e["reactance"].push_back(xrow);
            }
        }
        j["branches"].push_back(e);
    }
    write_text_file(path, j.dump(2) + "\n");
}

/// Single-phase branch list: header then one `from,to,r_ohm,x_ohm` row per
/// branch. Reference bus is the first `from` entry; base voltage passed in.
inline RadialNetwork load_network_csv(const std::string& path,
                                      double base_voltage_v) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    std::vector<Branch> branches;
    std::vector<Bus> buses;
    std::vector<std::string> seen;
    auto note_bus = [&](const std::string& id) {
        for (const auto& s : seen)
            if (s == id) return;
        seen.push_back(id);
        buses.push_back({id});
    };
    std::string reference;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string from, to, r, x;
        if (!std::getline(ss, from, ',') || !std::getline(ss, to, ',') ||
            !std::getline(ss, r, ',') || !std::getline(ss, x, ','))
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected from,to,r_ohm,x_ohm");
        if (reference.empty()) reference = from;
        note_bus(from);
        note_bus(to);
        CMat z(1, 1);
        try {
            z << cxd(std::stod(r), std::stod(x));
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": bad number");
        }
        branches.push_back({from, to, z});
    }
    return RadialNetwork(buses, branches, reference, base_voltage_v, 1);
}

// ---------------------------------------------------------------------------
// load profiles (one column per area, header row with area ids)

inline void save_profiles_csv(const std::string& path_p, const std::string& path_q,
                              const std::vector<LoadProfile>& areas) {
    if (areas.empty()) throw DimensionError("no profiles to write");
    for (int part = 0; part < 2; ++part) {
        std::ostringstream out;
        out << std::setprecision(17);
        for (size_t a = 0; a < areas.size(); ++a)
            out << (a ? "," : "") << areas[a].area_id;
        out << "\n";
        for (int t = 0; t < areas[0].samples.size(); ++t) {
            for (size_t a = 0; a < areas.size(); ++a) {
                double v = part == 0 ? areas[a].samples(t).real()
                                     : areas[a].samples(t).imag();
                out << (a ? "," : "") << v;
            }
            out << "\n";
        }
        write_text_file(part == 0 ? path_p : path_q, out.str());
    }
}

inline std::vector<LoadProfile> load_profiles_csv(const std::string& path_p,
                                                  const std::string& path_q,
                                                  double interval_min = 1.0) {
    auto read_table = [](const std::string& path, std::vector<std::string>& header) {
        std::ifstream in(path);
        if (!in) throw ParseError("cannot open " + path);
        std::string line;
        if (!std::getline(in, line)) throw ParseError(path + ": empty file");
        std::stringstream hs(line);
        std::string cell;
        header.clear();
        while (std::getline(hs, cell, ',')) header.push_back(cell);
        std::vector<std::vector<double>> cols(header.size());
        int line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            std::stringstream ss(line);
            for (size_t c = 0; c < header.size(); ++c) {
                if (!std::getline(ss, cell, ','))
                    throw ParseError(path + ":" + std::to_string(line_no) +
                                     ": short row");
                try {
                    cols[c].push_back(std::stod(cell));
                } catch (const std::exception&) {
                    throw ParseError(path + ":" + std::to_string(line_no) +
                                     ": bad number");
                }
            }
        }
        return cols;
    };
    std::vector<std::string> hp, hq;
    auto p = read_table(path_p, hp);
    auto q = read_table(path_q, hq);
    if (hp != hq || p.size() != q.size())
        throw ParseError("P and Q profile files disagree on areas");
    std::vector<LoadProfile> areas;
    for (size_t a = 0; a < hp.size(); ++a) {
        if (p[a].size() != q[a].size())
            throw ParseError("P and Q profile files disagree on length");
        LoadProfile lp;
        lp.area_id = hp[a];
        lp.interval_min = interval_min;
        lp.samples.resize(static_cast<int>(p[a].size()));
        for (size_t t = 0; t < p[a].size(); ++t)
            lp.samples(static_cast<int>(t)) = cxd(p[a][t], q[a][t]);
        areas.push_back(std::move(lp));
    }
    return areas;
}

// ---------------------------------------------------------------------------
// correlation matrices

inline void save_cr_csv(const std::string& path, const CorrelationMatrix& cr) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "# n_vars=" << cr.n_vars << " nt=" << cr.nt << "\n";
    for (int i = 0; i < cr.dim(); ++i) {
        for (int j = 0; j < cr.dim(); ++j) out << (j ? "," : "") << cr.blocks(i, j);
        out << "\n";
    }
    write_text_file(path, out.str());
}

inline CorrelationMatrix load_cr_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("# n_vars=", 0) != 0)
        throw ParseError(path + ": missing '# n_vars=<n> nt=<n>' header");
    CorrelationMatrix cr;
    if (std::sscanf(line.c_str(), "# n_vars=%d nt=%d", &cr.n_vars, &cr.nt) != 2)
        throw ParseError(path + ": bad header: " + line);
    const int dim = cr.dim();
    cr.blocks.resize(dim, dim);
    for (int i = 0; i < dim; ++i) {
        if (!std::getline(in, line))
            throw ParseError(path + ": expected " + std::to_string(dim) + " rows");
        std::stringstream ss(line);
        std::string cell;
        for (int j = 0; j < dim; ++j) {
            if (!std::getline(ss, cell, ','))
                throw ParseError(path + ": short row " + std::to_string(i + 1));
            cr.blocks(i, j) = std::stod(cell);
        }
    }
    return cr;
}

// ---------------------------------------------------------------------------
// measurements

inline StateKind parse_state_kind(const std::string& kind) {
    if (kind == "injected_current") return StateKind::injected_current;
    if (kind == "branch_current") return StateKind::branch_current;
    if (kind == "bus_voltage") return StateKind::bus_voltage;
    throw ParseError("unknown measurement kind " + kind);
}

inline MeasurementSet load_measurements_json(const std::string& path) {
    json j = read_json_file(path);
    MeasurementSet set;
    try {
        for (const auto& js : j.at("steps")) {
            MeasurementStep step;
            if (js.contains("vref")) {
                const auto& v = js.at("vref");
                step.vref.epsilon_pct = v.value("epsilon_pct", 3.0);
                if (v.contains("phases"))
                    for (const auto& ph : v.at("phases"))
                        step.vref.value.push_back(
                            cxd(ph.at("re").get<double>(), ph.at("im").get<double>()));
                else
                    step.vref.value.push_back(
                        cxd(v.at("re").get<double>(), v.at("im").get<double>()));
            }
            for (const auto& je : js.value("entries", json::array())) {
                MeasurementEntry e;
                e.target.kind = parse_state_kind(je.at("kind").get<std::string>());
                e.target.element = je.at("element").get<std::string>();
                e.target.phase = je.value("phase", 0);
                e.value = cxd(je.at("re").get<double>(), je.at("im").get<double>());
                e.epsilon_pct = je.at("epsilon_pct").get<double>();
                e.is_real_measurement = je.value("real", false);
                step.entries.push_back(e);
            }
            set.steps.push_back(std::move(step));
        }
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    set.validate();
    return set;
}

// ---------------------------------------------------------------------------
// estimates and metrics

inline void save_estimate_csv(const std::string& path,
                              const std::vector<ExportRow>& rows) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "step,kind,element,phase,mean_re,mean_im,var_mag,var_ang\n";
    for (const auto& r : rows)
        out << r.step << "," << to_string(r.kind) << "," << r.element << ","
            << r.phase << "," << r.mean.real() << "," << r.mean.imag() << ","
            << r.var_mag << "," << r.var_ang << "\n";
    write_text_file(path, out.str());
}

/// JSON estimate export; full posterior matrices only on request (large).
inline void save_estimate_json(const std::string& path, const StateEstimate& est,
                               const RadialNetwork& net, bool full_matrices = false) {
    json j;
    j["mode"] = to_string(est.mode);
    j["nt"] = est.nt;
    const int p = net.phase_count();
    for (int section = 0; section < 3; ++section) {
        StateKind kind = section == 0   ? StateKind::injected_current
                         : section == 1 ? StateKind::branch_current
                                        : StateKind::bus_voltage;
        for (int s = 0; s < est.nt; ++s)
            for (int k = 0; k < est.state_dim; ++k) {
                int idx = est.index(section, s, k);
                j["states"].push_back({{"step", s + 1},
                                       {"kind", to_string(kind)},
                                       {"element", net.ordered_buses()[k / p]},
                                       {"phase", k % p},
                                       {"mean_re", est.mu_ibv(idx).real()},
                                       {"mean_im", est.mu_ibv(idx).imag()},
                                       {"var_mag", est.var_mag(idx)},
                                       {"var_ang", est.var_ang(idx)}});
            }
    }
    if (full_matrices && est.gamma_ibv && est.c_ibv) {
        for (int i = 0; i < est.dim(); ++i) {
            json grow = json::array(), crow = json::array();
            for (int k = 0; k < est.dim(); ++k) {
                grow.push_back({(*est.gamma_ibv)(i, k).real(),
                                (*est.gamma_ibv)(i, k).imag()});
                crow.push_back({(*est.c_ibv)(i, k).real(), (*est.c_ibv)(i, k).imag()});
            }
            j["gamma_ibv"].push_back(grow);
            j["c_ibv"].push_back(crow);
        }
    }
    write_text_file(path, j.dump(2) + "\n");
}

inline void save_metrics_csv(const std::string& path, const MetricsReport& report) {
    std::ostringstream out;
    out << "mode,step,loading,amve_pct,aave_deg,mmve_pct,mave_deg,quality,time_s,"
           "iterations\n";
    out << std::setprecision(10);
    for (const auto& r : report.rows)
        out << r.mode << "," << r.step << "," << r.loading << "," << r.amve_pct << ","
            << r.aave_deg << "," << r.mmve_pct << "," << r.mave_deg << ","
            << r.quality << "," << r.time_s << "," << r.iterations << "\n";
    write_text_file(path, out.str());
}

inline void save_metrics_json(const std::string& path, const MetricsReport& report) {
    json j = json::array();
    for (const auto& r : report.rows)
        j.push_back({{"mode", r.mode},
                     {"step", r.step},
                     {"loading", r.loading},
                     {"amve_pct", r.amve_pct},
                     {"aave_deg", r.aave_deg},
                     {"mmve_pct", r.mmve_pct},
                     {"mave_deg", r.mave_deg},
                     {"quality", r.quality},
                     {"time_s", r.time_s},
                     {"iterations", r.iterations}});
    write_text_file(path, j.dump(2) + "\n");
}

inline CommunitySpec load_community_json(const std::string& path) {
    json j = read_json_file(path);
    CommunitySpec spec;
    try {
        spec.n_areas = j.value("n_areas", spec.n_areas);
        spec.customers_per_area = j.value("customers_per_area", spec.customers_per_area);
        if (j.contains("base_profile"))
            spec.base_profile = j.at("base_profile").get<std::vector<double>>();
        else if (j.value("base_shape", std::string("residential")) == "industrial") {
            spec.base_profile.resize(1440);
            for (int m = 0; m < 1440; ++m)
                spec.base_profile[m] = shapes::industrial(m);
        }
        spec.noise_sd = j.value("noise_sd", spec.noise_sd);
        spec.common_component_weight =
            j.value("common_component_weight", spec.common_component_weight);
        spec.pv_penetration = j.value("pv_penetration", spec.pv_penetration);
        spec.sample_interval_min = j.value("sample_interval_min", spec.sample_interval_min);
        spec.n_days = j.value("n_days", spec.n_days);
        spec.seed = j.value("seed", spec.seed);
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    spec.validate();
    return spec;
}

inline ScenarioConfig load_scenario_json(const std::string& path) {
    json j = read_json_file(path);
    ScenarioConfig cfg;
    try {
        cfg.network = j.value("network", cfg.network);
        cfg.correlation_source = j.value("correlation_source", cfg.correlation_source);
        cfg.correlation_file = j.value("correlation_file", cfg.correlation_file);
        cfg.add_secondary_meters =
            j.value("add_secondary_meters", cfg.add_secondary_meters);
        if (j.contains("loading"))
            cfg.loading = j.at("loading").get<std::vector<double>>();
        if (j.contains("modes"))
            cfg.modes = j.at("modes").get<std::vector<std::string>>();
        cfg.nt = j.value("nt", cfg.nt);
        cfg.epsilon_real = j.value("epsilon_real", cfg.epsilon_real);
        cfg.epsilon_pseudo = j.value("epsilon_pseudo", cfg.epsilon_pseudo);
        cfg.epsilon_vref = j.value("epsilon_vref", cfg.epsilon_vref);
        cfg.rx_scale = j.value("rx_scale", cfg.rx_scale);
        cfg.truth_noise_sd = j.value("truth_noise_sd", cfg.truth_noise_sd);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.bench_repeats = j.value("bench_repeats", cfg.bench_repeats);
        if (j.contains("meters")) {
            std::vector<Target> meters;
            for (const auto& jm : j.at("meters"))
                meters.push_back({parse_state_kind(jm.at("kind").get<std::string>()),
                                  jm.at("element").get<std::string>(),
                                  jm.value("phase", 0)});
            cfg.meters = std::move(meters);
        }
        if (j.contains("network_file")) {
            // user-supplied network: the scenario json carries the group labels
            // and nominal injections the builtin bundles would otherwise provide
            NetworkBundle bundle{.name = j.at("network_file").get<std::string>(),
                                 .net = load_network_json(
                                     j.at("network_file").get<std::string>()),
                                 .nominal = CVec(),
                                 .group = {},
                                 .meters_primary = cfg.meters.value_or(
                                     std::vector<Target>{}),
                                 .meters_secondary = {},
                                 .cr_params = {}};
            const int p = bundle.net.phase_count();
            bundle.nominal = CVec::Zero(bundle.net.state_dim());
            bundle.group.assign(bundle.net.state_dim(), "default");
            if (j.contains("groups"))
                for (int k = 0; k < bundle.net.state_dim(); ++k) {
                    const std::string& bus = bundle.net.ordered_buses()[k / p];
                    if (j.at("groups").contains(bus))
                        bundle.group[k] = j.at("groups").at(bus).get<std::string>();
                }
            for (const auto& jn : j.at("nominal")) {
                int pos = bundle.net.order_of(jn.at("element").get<std::string>()) * p +
                          jn.value("phase", 0);
                bundle.nominal(pos) =
                    cxd(jn.at("re").get<double>(), jn.at("im").get<double>());
            }
            for (int k = 0; k < bundle.net.state_dim(); ++k)
                if (bundle.nominal(k) == cxd(0.0, 0.0))
                    throw ParseError(path + ": nominal injection missing for " +
                                     bundle.net.ordered_buses()[k / p] + " phase " +
                                     std::to_string(k % p));
            if (j.contains("cr_params")) {
                const auto& jp = j.at("cr_params");
                bundle.cr_params.within_group =
                    jp.value("within_group", bundle.cr_params.within_group);
                bundle.cr_params.cross_group =
                    jp.value("cross_group", bundle.cr_params.cross_group);
                bundle.cr_params.within_bus =
                    jp.value("within_bus", bundle.cr_params.within_bus);
                bundle.cr_params.pq_idio = jp.value("pq_idio", bundle.cr_params.pq_idio);
                bundle.cr_params.phi_slow =
                    jp.value("phi_slow", bundle.cr_params.phi_slow);
                bundle.cr_params.phi_fast =
                    jp.value("phi_fast", bundle.cr_params.phi_fast);
            }
            cfg.custom_bundle = std::move(bundle);
        }
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace dsse::io
