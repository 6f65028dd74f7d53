#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsse/common.hpp"

namespace dsse {

struct Bus {
    std::string id;
};

/// A series element between two buses. For phase_count p the impedance is a
/// symmetric p x p matrix in ohms; off-diagonals are mutual couplings.
struct Branch {
    std::string from_bus;
    std::string to_bus;
    CMat impedance;
};

/// Radial (tree) distribution network. Immutable after construction; all
/// operations on it are pure.
class RadialNetwork {
public:
    RadialNetwork(std::vector<Bus> buses, std::vector<Branch> branches,
                  std::string reference_bus, double base_voltage_v,
                  int phase_count = 1)
        : buses_(std::move(buses)),
          branches_(std::move(branches)),
          reference_bus_(std::move(reference_bus)),
          base_voltage_(base_voltage_v),
          phase_count_(phase_count) {
        validate_and_order();
    }

    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Branch>& branches() const { return branches_; }
    const std::string& reference_bus() const { return reference_bus_; }
    double base_voltage() const { return base_voltage_; }
    int phase_count() const { return phase_count_; }

    int bus_count() const { return static_cast<int>(buses_.size()); }
    int branch_count() const { return static_cast<int>(branches_.size()); }

    /// Non-reference buses in depth-first preorder from the reference bus.
    /// This fixes the state ordering used everywhere downstream: state index
    /// of (bus, phase) is order_of(bus) * phase_count + phase, and branch k
    /// is the upstream branch of ordered bus k.
    const std::vector<std::string>& ordered_buses() const { return order_; }

    /// Index of the branch feeding each ordered bus (into branches()).
    const std::vector<int>& upstream_branch() const { return upstream_branch_; }

    /// Position of a non-reference bus in the state ordering.
    int order_of(const std::string& bus_id) const {
        auto it = order_index_.find(bus_id);
        if (it == order_index_.end())
            throw StructuralError("unknown or reference bus in state lookup: " + bus_id);
        return it->second;
    }

    bool has_bus(const std::string& bus_id) const {
        return bus_index_.count(bus_id) > 0;
    }

    /// Parent bus id of a non-reference bus.
    const std::string& parent_of(const std::string& bus_id) const {
        return parent_.at(order_of(bus_id));
    }

    /// Number of scalar states per section: phase_count * (bus_count - 1).
    int state_dim() const { return phase_count_ * (bus_count() - 1); }

private:
    void validate_and_order() {
        if (buses_.empty()) throw StructuralError("network has no buses");
        const int n = bus_count();
        for (int i = 0; i < n; ++i) {
            if (!bus_index_.emplace(buses_[i].id, i).second)
                throw StructuralError("duplicate bus id: " + buses_[i].id);
        }
        if (!bus_index_.count(reference_bus_))
            throw StructuralError("reference bus not in bus list: " + reference_bus_);
        if (branch_count() != n - 1)
            throw StructuralError("not radial: " + std::to_string(branch_count()) +
                                  " branches for " + std::to_string(n) + " buses");
        if (phase_count_ != 1 && phase_count_ != 3)
            throw StructuralError("phase_count must be 1 or 3");

        const int p = phase_count_;
        std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor bus, branch)
        for (int b = 0; b < branch_count(); ++b) {
            const Branch& br = branches_[b];
            auto fi = bus_index_.find(br.from_bus);
            auto ti = bus_index_.find(br.to_bus);
            if (fi == bus_index_.end() || ti == bus_index_.end())
                throw StructuralError("branch " + br.from_bus + "-" + br.to_bus +
                                      " references unknown bus");
            if (br.impedance.rows() != p || br.impedance.cols() != p)
                throw StructuralError("branch " + br.from_bus + "-" + br.to_bus +
                                      " impedance is not " + std::to_string(p) + "x" +
                                      std::to_string(p));
            if (!br.impedance.isApprox(br.impedance.transpose(), 1e-12))
                throw StructuralError("branch " + br.from_bus + "-" + br.to_bus +
                                      " impedance not symmetric");
            for (int d = 0; d < p; ++d)
                if (std::abs(br.impedance(d, d)) == 0.0)
                    throw StructuralError("branch " + br.from_bus + "-" + br.to_bus +
                                          " has zero diagonal impedance");
            adj[fi->second].push_back({ti->second, b});
            adj[ti->second].push_back({fi->second, b});
        }

        // Depth-first preorder from the reference; children in branch input order.
        std::vector<bool> seen(n, false);
        int ref = bus_index_.at(reference_bus_);
        seen[ref] = true;
        struct Frame { int bus; size_t next; };
        std::vector<Frame> frames{{ref, 0}};
        while (!frames.empty()) {
            Frame& f = frames.back();
            if (f.next >= adj[f.bus].size()) {
                frames.pop_back();
                continue;
            }
            auto [v, b] = adj[f.bus][f.next++];
            if (seen[v]) continue;
            seen[v] = true;
            order_index_[buses_[v].id] = static_cast<int>(order_.size());
            order_.push_back(buses_[v].id);
            upstream_branch_.push_back(b);
            parent_.push_back(buses_[f.bus].id);
            frames.push_back({v, 0});
        }
        if (static_cast<int>(order_.size()) != n - 1) {
            for (int i = 0; i < n; ++i)
                if (!seen[i])
                    throw StructuralError("network disconnected: bus " + buses_[i].id +
                                          " unreachable from reference");
            throw StructuralError("network contains a loop");
        }
    }

    std::vector<Bus> buses_;
    std::vector<Branch> branches_;
    std::string reference_bus_;
    double base_voltage_;
    int phase_count_;

    std::map<std::string, int> bus_index_;
    std::map<std::string, int> order_index_;
    std::vector<std::string> order_;
    std::vector<int> upstream_branch_;
    std::vector<std::string> parent_;
};

/// Direct load-flow matrices of a radial network. dlf = bcbv * bibc maps
/// stacked injected currents to voltage drops.
struct FlowMatrices {
    CMat bibc;  // injected currents -> branch currents
    CMat bcbv;  // branch currents  -> voltage drops
    CMat dlf;   // injected currents -> voltage drops
};

/// Build BIBC/BCBV/DLF for a radial network. Row/column k blocks correspond
/// to ordered bus k (and its upstream branch).
inline FlowMatrices build_flow_matrices(const RadialNetwork& net) {
    const int p = net.phase_count();
    const int m = net.bus_count() - 1;
    const int dim = p * m;
    FlowMatrices fm;
    fm.bibc = CMat::Zero(dim, dim);
    fm.bcbv = CMat::Zero(dim, dim);

    // Path from reference to each ordered bus, as a list of bus positions.
    std::vector<std::vector<int>> path(m);
    for (int k = 0; k < m; ++k) {
        const std::string& parent = net.parent_of(net.ordered_buses()[k]);
        if (parent != net.reference_bus()) path[k] = path[net.order_of(parent)];
        path[k].push_back(k);
    }

    for (int k = 0; k < m; ++k) {
        // Branch k carries every injection at or below bus k: identity blocks
        // in the BIBC row of branch k for each bus whose path contains k.
        const CMat& z = net.branches()[net.upstream_branch()[k]].impedance;
        for (int j = 0; j < m; ++j) {
            bool downstream = std::find(path[j].begin(), path[j].end(), k) != path[j].end();
            if (!downstream) continue;
            fm.bibc.block(k * p, j * p, p, p) = CMat::Identity(p, p);
            // Voltage drop at bus j accumulates z over branches on its path.
            fm.bcbv.block(j * p, k * p, p, p) = z;
        }
    }
    fm.dlf = fm.bcbv * fm.bibc;
    return fm;
}

/// v = vref - dlf * injections, i_branch = bibc * injections. Positive
/// injection is load current drawn, so voltages drop under load. vref holds
/// one complex value per phase, broadcast to every bus.
inline std::pair<CVec, CVec> direct_power_flow(const FlowMatrices& fm,
                                               const CVec& injections,
                                               const CVec& vref) {
    const int dim = static_cast<int>(fm.bibc.rows());
    require_dim(injections.size() == dim, "injection vector length " +
                std::to_string(injections.size()) + " != " + std::to_string(dim));
    const int p = static_cast<int>(vref.size());
    require_dim(p > 0 && dim % p == 0, "vref length does not divide state dim");
    CVec vref_full(dim);
    for (int i = 0; i < dim; ++i) vref_full(i) = vref(i % p);
    CVec branch = fm.bibc * injections;
    CVec volts = vref_full - fm.dlf * injections;
    return {branch, volts};
}

/// Independent nodal (admittance) solve for the same problem; the dual route
/// used to cross-check the direct load flow. Builds the reduced Laplacian in
/// branch admittances and solves L v = y_ref * vref - i_inj.
inline std::pair<CVec, CVec> nodal_power_flow(const RadialNetwork& net,
                                              const CVec& injections,
                                              const CVec& vref) {
    const int p = net.phase_count();
    const int m = net.bus_count() - 1;
    const int dim = p * m;
    require_dim(injections.size() == dim, "injection vector length mismatch");
    require_dim(vref.size() == p, "vref must have one entry per phase");

    CMat lap = CMat::Zero(dim, dim);
    CVec rhs = -injections;
    for (int b = 0; b < net.branch_count(); ++b) {
        const Branch& br = net.branches()[b];
        CMat y = br.impedance.inverse();
        bool from_ref = br.from_bus == net.reference_bus();
        bool to_ref = br.to_bus == net.reference_bus();
        if (from_ref || to_ref) {
            int k = net.order_of(from_ref ? br.to_bus : br.from_bus);
            lap.block(k * p, k * p, p, p) += y;
            rhs.segment(k * p, p) += y * vref;
        } else {
            int a = net.order_of(br.from_bus);
            int c = net.order_of(br.to_bus);
            lap.block(a * p, a * p, p, p) += y;
            lap.block(c * p, c * p, p, p) += y;
            lap.block(a * p, c * p, p, p) -= y;
            lap.block(c * p, a * p, p, p) -= y;
        }
    }
    CVec volts = lap.partialPivLu().solve(rhs);

    CVec branch(dim);
    for (int k = 0; k < m; ++k) {
        const Branch& br = net.branches()[net.upstream_branch()[k]];
        const std::string& bus = net.ordered_buses()[k];
        const std::string& par = net.parent_of(bus);
        CVec v_par = par == net.reference_bus()
                         ? vref
                         : CVec(volts.segment(net.order_of(par) * p, p));
        CVec v_bus = volts.segment(k * p, p);
        branch.segment(k * p, p) =
            br.impedance.partialPivLu().solve((v_par - v_bus).eval());
    }
    return {branch, volts};
}

/// Scale every branch resistance by r_scale and recompute reactance so each
/// entry keeps its impedance magnitude (|Z| constant, R/X ratio changed).
inline RadialNetwork perturb_rx_ratio(const RadialNetwork& net, double r_scale) {
    if (!(r_scale > 0.0)) throw NumericalError("r_scale must be positive");
    std::vector<Branch> branches = net.branches();
    for (Branch& br : branches) {
        CMat z = br.impedance;
        for (int i = 0; i < z.rows(); ++i)
            for (int j = 0; j < z.cols(); ++j) {
                cxd zij = z(i, j);
                if (zij == cxd(0.0, 0.0)) continue;
                double mag = std::abs(zij);
                double r = r_scale * zij.real();
                if (std::abs(r) > mag * (1.0 + 1e-12))
                    throw NumericalError(
                        "perturb_rx_ratio: scaled resistance exceeds |Z| on branch " +
                        br.from_bus + "-" + br.to_bus);
                double x2 = mag * mag - r * r;
                double x = std::sqrt(std::max(0.0, x2));
                if (zij.imag() < 0.0) x = -x;
                z(i, j) = cxd(r, x);
            }
        br.impedance = z;
    }
    return RadialNetwork(net.buses(), std::move(branches), net.reference_bus(),
                         net.base_voltage(), net.phase_count());
}

}  // namespace dsse
