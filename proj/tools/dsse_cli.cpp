// Command-line front end: synthetic data generation, correlation matrices,
// one-shot estimates, case-study scenarios and benchmarks.

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"

#include "dsse/io.hpp"
#include "dsse/profiles.hpp"
#include "dsse/scenario.hpp"

namespace fs = std::filesystem;
using namespace dsse;

namespace {

RadialNetwork load_network_arg(const std::string& arg, double base_voltage) {
    if (fs::exists(arg)) {
        if (arg.size() > 4 && arg.substr(arg.size() - 4) == ".csv")
            return io::load_network_csv(arg, base_voltage);
        return io::load_network_json(arg);
    }
    return builtin_bundle(arg).net;
}

void print_metrics(const MetricsReport& report) {
    std::cout << std::left << std::setw(6) << "mode" << std::setw(6) << "step"
              << std::setw(9) << "loading" << std::setw(11) << "AMVE(%)"
              << std::setw(11) << "AAVE(deg)" << std::setw(11) << "MMVE(%)"
              << std::setw(11) << "MAVE(deg)" << std::setw(10) << "quality"
              << std::setw(11) << "time(s)" << "iters\n";
    for (const auto& r : report.rows)
        std::cout << std::left << std::setw(6) << r.mode << std::setw(6) << r.step
                  << std::setw(9) << std::setprecision(3) << r.loading
                  << std::setw(11) << std::setprecision(4) << r.amve_pct
                  << std::setw(11) << r.aave_deg << std::setw(11) << r.mmve_pct
                  << std::setw(11) << r.mave_deg << std::setw(10) << r.quality
                  << std::setw(11) << std::setprecision(4) << r.time_s
                  << r.iterations << "\n";
}

int run_gen_data(const std::string& spec_path, const std::string& out_dir,
                 uint64_t seed_override, bool has_seed) {
    CommunitySpec spec = io::load_community_json(spec_path);
    if (has_seed) spec.seed = seed_override;
    auto areas = gen_synthetic_profiles(spec);
    fs::create_directories(out_dir);
    io::save_profiles_csv((fs::path(out_dir) / "profiles_p.csv").string(),
                          (fs::path(out_dir) / "profiles_q.csv").string(), areas);
    std::cout << "wrote " << areas.size() << " area profiles, "
              << areas[0].samples.size() << " samples each, to " << out_dir << "\n";
    return 0;
}

int run_corr(const std::string& p_path, const std::string& q_path, int nt,
             const std::string& out, bool nearest_pd) {
    auto areas = io::load_profiles_csv(p_path, q_path);
    std::vector<RVec> ps, qs;
    for (const auto& a : areas) {
        ps.push_back(a.real_part());
        qs.push_back(a.imag_part());
    }
    auto cr = build_cr_matrix(ps, qs, nt);
    if (nearest_pd) cr = nearest_pd_correlation(cr);
    io::save_cr_csv(out, cr);
    std::cout << "wrote " << cr.dim() << "x" << cr.dim() << " correlation matrix to "
              << out << " (min eigenvalue " << cr.min_eigenvalue() << ")\n";
    return 0;
}

int run_estimate(const std::string& network, const std::string& cr_path,
                 const std::string& pseudo_path, const std::string& real_path,
                 const std::string& mode, int nt, const std::string& out,
                 const std::string& json_out, bool json_full, double base_voltage) {
    RadialNetwork net = load_network_arg(network, base_voltage);
    CorrelationMatrix cr = io::load_cr_csv(cr_path);
    MeasurementSet pseudo = io::load_measurements_json(pseudo_path);
    MeasurementSet realtime = real_path.empty()
                                  ? MeasurementSet{}
                                  : io::load_measurements_json(real_path);
    if (realtime.steps.empty()) realtime.steps.resize(nt);

    if (mode == "wls") {
        // merge: real entries replace pseudo entries on the same target
        MeasurementStep merged = pseudo.steps.back();
        for (const auto& e : realtime.steps.back().entries) {
            bool replaced = false;
            for (auto& pe : merged.entries)
                if (!(pe.target < e.target) && !(e.target < pe.target)) {
                    pe = e;
                    replaced = true;
                }
            if (!replaced) merged.entries.push_back(e);
        }
        auto res = wls_estimate(net, merged, &cr);
        std::vector<ExportRow> rows;
        const int p = net.phase_count();
        for (int k = 0; k < net.state_dim(); ++k)
            rows.push_back({1, StateKind::bus_voltage, net.ordered_buses()[k / p],
                            k % p, res.voltages(k), res.var_mag(k), res.var_ang(k)});
        io::save_estimate_csv(out, rows);
        std::cout << "WLS: " << res.iterations << " iterations, "
                  << (res.converged ? "converged" : "NOT converged") << ", quality "
                  << res.quality << "; wrote " << rows.size() << " rows to " << out
                  << "\n";
        return res.converged ? 0 : 3;
    }

    EstimatorOptions opt;
    opt.mode = mode == "cs" ? EstimatorMode::cs : EstimatorMode::cst;
    opt.nt = mode == "cs" ? 1 : nt;
    opt.full_covariance = json_full;
    auto est = estimate(net, cr, pseudo, realtime, opt);

    std::vector<ExportRow> rows;
    const int p = net.phase_count();
    for (int section = 0; section < 3; ++section) {
        StateKind kind = section == 0   ? StateKind::injected_current
                         : section == 1 ? StateKind::branch_current
                                        : StateKind::bus_voltage;
        for (int s = 0; s < est.nt; ++s)
            for (int k = 0; k < est.state_dim; ++k) {
                int idx = est.index(section, s, k);
                rows.push_back({s + 1, kind, net.ordered_buses()[k / p], k % p,
                                est.mu_ibv(idx), est.var_mag(idx), est.var_ang(idx)});
            }
    }
    io::save_estimate_csv(out, rows);
    std::cout << "wrote " << rows.size() << " state rows to " << out
              << " (quality " << quality(est) << ")\n";
    if (!json_out.empty()) io::save_estimate_json(json_out, est, net, json_full);
    return 0;
}

int run_scenario_cmd(const std::string& config_path, const std::string& out_dir,
                     const ScenarioConfig& overrides,
                     const std::vector<std::string>& mode_override, bool has_seed,
                     bool has_nt, bool has_rx) {
    ScenarioConfig cfg = io::load_scenario_json(config_path);
    if (!mode_override.empty()) cfg.modes = mode_override;
    if (has_seed) cfg.seed = overrides.seed;
    if (has_nt) cfg.nt = overrides.nt;
    if (has_rx) cfg.rx_scale = overrides.rx_scale;
    cfg.validate();

    ScenarioResult res;
    if (cfg.correlation_source == "file") {
        if (cfg.correlation_file.empty())
            throw ParseError("correlation_source=file needs correlation_file");
        auto cr = io::load_cr_csv(cfg.correlation_file);
        res = run_scenario(cfg, &cr);
    } else {
        res = run_scenario(cfg);
    }
    print_metrics(res.report);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        io::save_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), res.report);
        io::save_metrics_json((fs::path(out_dir) / "metrics.json").string(),
                              res.report);
        for (const auto& table : res.estimates)
            io::save_estimate_csv((fs::path(out_dir) /
                                   ("estimate_" + table.mode + "_step" +
                                    std::to_string(table.step) + ".csv"))
                                      .string(),
                                  table.rows);
        std::cout << "wrote metrics and per-state estimates to " << out_dir << "\n";
    }
    return 0;
}

int run_bench(const std::string& network, bool full, uint64_t seed,
              const std::string& out) {
    std::vector<std::string> nets;
    if (!network.empty())
        nets.push_back(network);
    else {
        nets = {"six_bus", "feeder123", "lv23"};
        if (full) nets.push_back("feeder123x5");
    }
    MetricsReport all;
    for (const auto& name : nets) {
        ScenarioConfig cfg;
        cfg.network = name;
        cfg.seed = seed;
        cfg.bench_repeats = 11;
        std::cout << "== " << name << " ==\n";
        auto res = run_scenario(cfg);
        print_metrics(res.report);
        for (auto row : res.report.rows) {
            row.mode = name + "/" + row.mode;
            all.rows.push_back(row);
        }
    }
    if (!out.empty()) io::save_metrics_csv(out, all);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distribution system state estimation toolkit"};
    app.require_subcommand(1);

    // gen-data
    std::string spec_path, out_dir = "out";
    uint64_t seed = 1;
    auto* gen = app.add_subcommand("gen-data",
                                   "Generate synthetic correlated load profiles");
    gen->add_option("--spec", spec_path, "CommunitySpec JSON")->required();
    gen->add_option("--out", out_dir, "Output directory");
    auto* gen_seed = gen->add_option("--seed", seed, "Override the seed in the spec file");

    // corr
    std::string p_path, q_path, cr_out = "cr.csv";
    int nt = 3;
    bool nearest_pd = false;
    auto* corr = app.add_subcommand("corr", "Correlation matrix from profiles");
    corr->add_option("--p", p_path, "Real-part profile CSV")->required();
    corr->add_option("--q", q_path, "Imaginary-part profile CSV")->required();
    corr->add_option("--nt", nt, "Window steps");
    corr->add_option("--out", cr_out, "Output CSV");
    corr->add_flag("--nearest-pd", nearest_pd, "Repair to positive definite");

    // estimate
    std::string network, cr_path, pseudo_path, real_path, est_out = "estimate.csv";
    std::string est_json;
    std::string mode = "cst";
    bool json_full = false;
    double base_voltage = 2400.0;
    auto* est = app.add_subcommand("estimate", "One-shot state estimate");
    est->add_option("--network", network, "Builtin name or network file")->required();
    est->add_option("--cr", cr_path, "Correlation matrix CSV")->required();
    est->add_option("--pseudo", pseudo_path, "Pseudo measurement JSON")->required();
    est->add_option("--real", real_path, "Real-time measurement JSON");
    est->add_option("--mode", mode, "wls|cs|cst")
        ->check(CLI::IsMember({"wls", "cs", "cst"}));
    est->add_option("--nt", nt, "Window steps");
    est->add_option("--out", est_out, "Estimate CSV");
    est->add_option("--json", est_json, "Optional JSON export path");
    est->add_flag("--json-full", json_full, "Include full posterior matrices");
    est->add_option("--base-voltage", base_voltage,
                    "Base voltage for CSV networks (V)");

    // run-scenario
    std::string scenario_path, scen_out;
    std::vector<std::string> scen_modes;
    ScenarioConfig overrides;
    auto* scen = app.add_subcommand("run-scenario", "Run a case-study scenario");
    scen->add_option("--config", scenario_path, "ScenarioConfig JSON")->required();
    scen->add_option("--out", scen_out, "Output directory");
    scen->add_option("--mode", scen_modes, "Mode subset (wls/cs/cst)");
    auto* scen_seed = scen->add_option("--seed", overrides.seed, "Seed override");
    auto* scen_nt = scen->add_option("--nt", overrides.nt, "Window override");
    auto* scen_rx =
        scen->add_option("--rx-scale", overrides.rx_scale, "R/X scaling override");

    // bench
    std::string bench_net, bench_out;
    bool bench_full = false;
    auto* bench = app.add_subcommand("bench", "Estimator timing table");
    bench->add_option("--network", bench_net, "Single builtin network");
    bench->add_flag("--full", bench_full, "Include the 615-node composition");
    bench->add_option("--seed", seed, "Scenario seed");
    bench->add_option("--out", bench_out, "Metrics CSV output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return run_gen_data(spec_path, out_dir, seed, gen_seed->count() > 0);
        if (corr->parsed()) return run_corr(p_path, q_path, nt, cr_out, nearest_pd);
        if (est->parsed())
            return run_estimate(network, cr_path, pseudo_path, real_path, mode, nt,
                                est_out, est_json, json_full, base_voltage);
        if (scen->parsed()) {
            std::vector<std::string> modes;
            for (auto m : scen_modes) {
                for (auto& ch : m) ch = static_cast<char>(std::toupper(ch));
                modes.push_back(m);
            }
            return run_scenario_cmd(scenario_path, scen_out, overrides, modes,
                                    scen_seed->count() > 0, scen_nt->count() > 0,
                                    scen_rx->count() > 0);
        }
        if (bench->parsed()) return run_bench(bench_net, bench_full, seed, bench_out);
    } catch (const ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const StructuralError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const ObservabilityError& e) {
        std::cerr << "observability error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
