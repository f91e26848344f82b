#include "psv/grid.hpp"

#include "psv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace psv::grid {

const char* to_string(BusKind kind) {
    switch (kind) {
        case BusKind::Generator: return "generator";
        case BusKind::Load: return "load";
        case BusKind::Ess: return "ess";
        case BusKind::Junction: return "junction";
        case BusKind::Boundary: return "boundary-node";
    }
    return "junction";
}

BusKind bus_kind_from_string(const std::string& s) {
    if (s == "generator") return BusKind::Generator;
    if (s == "load") return BusKind::Load;
    if (s == "ess") return BusKind::Ess;
    if (s == "junction") return BusKind::Junction;
    if (s == "boundary-node") return BusKind::Boundary;
    throw Error(ErrorKind::Validation, "unknown bus kind '" + s + "'");
}

const char* to_string(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::GenOverload: return "generator-overload";
        case ViolationKind::GenUnderload: return "generator-underload";
        case ViolationKind::GenReactive: return "generator-reactive";
        case ViolationKind::ShedBounds: return "shed-bounds";
        case ViolationKind::EssBounds: return "ess-bounds";
        case ViolationKind::ConverterAcVoltage: return "converter-ac-voltage";
        case ViolationKind::FilterVoltage: return "filter-voltage";
        case ViolationKind::DcVoltage: return "dc-voltage";
        case ViolationKind::ConverterCurrent: return "converter-current";
        case ViolationKind::BranchOverload: return "branch-overload";
    }
    return "violation";
}

std::optional<std::size_t> NetworkModel::find_bus(const std::string& id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == id) return i;
    }
    return std::nullopt;
}

std::size_t NetworkModel::bus_index(const std::string& id) const {
    if (auto i = find_bus(id)) return *i;
    throw Error(ErrorKind::Model, "unknown bus '" + id + "'");
}

bool NetworkModel::branch_live(const Branch& b) const {
    return !open_branches.count(b.id) && !isolated_buses.count(b.from_bus) &&
           !isolated_buses.count(b.to_bus);
}

void NetworkModel::validate() const {
    std::set<std::string> seen;
    for (const auto& b : buses) {
        if (!seen.insert(b.id).second) throw Error(ErrorKind::Model, "duplicate bus '" + b.id + "'");
        if (b.p_min_kw > b.p_max_kw && !(b.p_max_kw < 0 && b.p_min_kw == 0)) {
            throw Error(ErrorKind::Model, "bus '" + b.id + "' has p_min above p_max");
        }
        if (!(b.v_min <= b.v_setpoint && b.v_setpoint <= b.v_max && b.v_min < b.v_max)) {
            throw Error(ErrorKind::Model, "bus '" + b.id + "' voltage band is inconsistent");
        }
    }
    std::set<std::string> branch_ids;
    for (const auto& br : branches) {
        if (!branch_ids.insert(br.id).second) {
            throw Error(ErrorKind::Model, "duplicate branch '" + br.id + "'");
        }
        if (!find_bus(br.from_bus) || !find_bus(br.to_bus)) {
            throw Error(ErrorKind::Model, "branch '" + br.id + "' has a dangling endpoint");
        }
        if (br.from_bus == br.to_bus) throw Error(ErrorKind::Model, "branch '" + br.id + "' is a self loop");
        if (!(br.r_mohm > 0)) throw Error(ErrorKind::Model, "branch '" + br.id + "' needs r > 0");
        if (!(br.rating_kva > 0)) throw Error(ErrorKind::Model, "branch '" + br.id + "' needs a rating");
    }
    for (const auto& id : isolated_buses) {
        if (!find_bus(id)) throw Error(ErrorKind::Model, "isolated bus '" + id + "' does not exist");
    }
}

// =============================================================================
// Topology
// =============================================================================

IncidenceMatrix build_incidence(const NetworkModel& network) {
    IncidenceMatrix m;
    for (const auto& b : network.buses) m.bus_ids.push_back(b.id);
    std::vector<const Branch*> live;
    for (const auto& br : network.branches) {
        if (!network.find_bus(br.from_bus) || !network.find_bus(br.to_bus)) {
            throw Error(ErrorKind::Model, "branch '" + br.id + "' has a dangling endpoint");
        }
        if (network.branch_live(br)) live.push_back(&br);
    }
    m.a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(live.size()),
                                static_cast<Eigen::Index>(network.buses.size()));
    for (std::size_t k = 0; k < live.size(); ++k) {
        const auto& br = *live[k];
        m.a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(network.bus_index(br.from_bus))) = 1.0;
        m.a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(network.bus_index(br.to_bus))) = -1.0;
        m.branch_ids.push_back(br.id);
    }
    return m;
}

std::vector<Island> find_islands(const NetworkModel& network, const std::set<std::string>& sources) {
    const std::size_t n = network.buses.size();
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (const auto& br : network.branches) {
        if (!network.branch_live(br)) continue;
        const auto a = find(network.bus_index(br.from_bus));
        const auto b = find(network.bus_index(br.to_bus));
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
    std::vector<Island> islands;
    std::vector<long> slot(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = find(i);
        if (slot[r] < 0) {
            slot[r] = static_cast<long>(islands.size());
            islands.emplace_back();
        }
        islands[static_cast<std::size_t>(slot[r])].buses.push_back(i);
    }
    for (auto& isl : islands) {
        auto eligible = [&](std::size_t i) {
            return sources.empty() || sources.count(network.buses[i].id) > 0;
        };
        for (std::size_t i : isl.buses) {
            if (network.buses[i].kind == BusKind::Generator && eligible(i)) {
                isl.slack = i;
                break;
            }
        }
        if (!isl.slack) {
            for (std::size_t i : isl.buses) {
                if (network.buses[i].kind == BusKind::Ess && eligible(i)) {
                    isl.slack = i;
                    break;
                }
            }
        }
    }
    return islands;
}

BusImpedanceMatrix build_zbus(const NetworkModel& network, double r_ref_mohm) {
    if (!(r_ref_mohm > 0)) throw Error(ErrorKind::Model, "reference resistance must be positive");
    BusImpedanceMatrix z;
    const auto islands = find_islands(network);
    std::vector<int> degree(network.buses.size(), 0);
    for (const auto& br : network.branches) {
        if (!network.branch_live(br)) continue;
        ++degree[network.bus_index(br.from_bus)];
        ++degree[network.bus_index(br.to_bus)];
    }
    bool any_slack = false;
    for (const auto& isl : islands) {
        if (isl.buses.size() == 1 && degree[isl.buses[0]] == 0 && !isl.slack) {
            z.isolated.push_back(network.buses[isl.buses[0]].id);
            continue;
        }
        if (!isl.slack) {
            throw Error(ErrorKind::Model, "island containing '" + network.buses[isl.buses[0]].id +
                                              "' has no slack reference");
        }
        any_slack = true;
        const auto m = static_cast<Eigen::Index>(isl.buses.size());
        std::vector<long> local(network.buses.size(), -1);
        for (std::size_t k = 0; k < isl.buses.size(); ++k) local[isl.buses[k]] = static_cast<long>(k);
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(m, m);
        for (const auto& br : network.branches) {
            if (!network.branch_live(br)) continue;
            const long a = local[network.bus_index(br.from_bus)];
            const long b = local[network.bus_index(br.to_bus)];
            if (a < 0 || b < 0) continue;
            const double g = 1.0 / br.r_mohm;
            y(a, a) += g;
            y(b, b) += g;
            y(a, b) -= g;
            y(b, a) -= g;
        }
        const long s = local[*isl.slack];
        y(s, s) += 1.0 / r_ref_mohm;
        Eigen::LLT<Eigen::MatrixXd> llt(y);
        if (llt.info() != Eigen::Success) throw Error(ErrorKind::Model, "singular nodal matrix");
        BusImpedanceMatrix::Block block;
        for (std::size_t i : isl.buses) block.buses.push_back(network.buses[i].id);
        block.slack = network.buses[*isl.slack].id;
        block.z_mohm = llt.solve(Eigen::MatrixXd::Identity(m, m));
        z.islands.push_back(std::move(block));
    }
    if (!any_slack) throw Error(ErrorKind::Model, "no live island has a slack reference");
    return z;
}

// =============================================================================
// Power flow
// =============================================================================

FlowSolution dc_power_flow(const NetworkModel& network, const std::vector<double>& injections_kw,
                           const FlowOptions& options) {
    const std::size_t n = network.buses.size();
    if (injections_kw.size() != n) {
        throw Error(ErrorKind::Model, "injection vector does not match bus count");
    }
    const double vb = network.base_voltage_v;

    FlowSolution sol;
    sol.islands = find_islands(network, options.sources);
    sol.bus_voltages.assign(n, 0.0);
    sol.bus_injections.assign(n, 0.0);
    sol.branch_flows.assign(network.branches.size(), 0.0);
    sol.branch_currents.assign(network.branches.size(), 0.0);

    // Conductances [S] and tie contributions per bus.
    std::vector<std::vector<std::pair<std::size_t, double>>> adj(n);
    for (const auto& br : network.branches) {
        if (!network.branch_live(br)) continue;
        const auto a = network.bus_index(br.from_bus);
        const auto b = network.bus_index(br.to_bus);
        const double g = 1e3 / br.r_mohm;
        adj[a].push_back({b, g});
        adj[b].push_back({a, g});
    }
    std::vector<double> tie_g(n, 0.0);
    std::vector<double> tie_gv(n, 0.0);  // sum g * V_source [S V]
    std::vector<double> shunt_g(n, 0.0);
    for (const auto& t : options.ties) {
        const auto i = network.bus_index(t.bus);
        if (!(t.r_ohm > 0)) throw Error(ErrorKind::Model, "tie resistance must be positive");
        tie_g[i] += 1.0 / t.r_ohm;
        tie_gv[i] += t.v_source_pu * vb / t.r_ohm;
        if (t.shunt_ohm > 0) shunt_g[i] += 1.0 / t.shunt_ohm;
    }

    std::vector<double> v(n, 0.0);
    double worst = 0.0;
    int iterations = 0;
    bool converged = true;
    const double tol_w = options.tolerance_kw * 1e3;

    for (const auto& isl : sol.islands) {
        bool has_tie = false;
        bool loaded = false;
        for (std::size_t i : isl.buses) {
            has_tie = has_tie || tie_g[i] > 0;
            loaded = loaded || injections_kw[i] != 0.0;
        }
        if (!isl.slack && !has_tie) {
            if (loaded) {
                throw Error(ErrorKind::Islanding, "island containing '" +
                                                      network.buses[isl.buses[0]].id +
                                                      "' carries load but has no source");
            }
            continue;  // de-energized
        }

        double v0 = vb;
        if (isl.slack) {
            const auto& id = network.buses[*isl.slack].id;
            auto it = options.slack_voltage_pu.find(id);
            v0 = (it != options.slack_voltage_pu.end() ? it->second : network.buses[*isl.slack].v_setpoint) * vb;
        } else {
            double gsum = 0.0;
            double gv = 0.0;
            for (std::size_t i : isl.buses) {
                gsum += tie_g[i];
                gv += tie_gv[i];
            }
            v0 = gv / gsum;
        }

        std::vector<std::size_t> unknown;
        std::vector<long> pos(n, -1);
        for (std::size_t i : isl.buses) {
            v[i] = v0;
            if (isl.slack && i == *isl.slack) continue;
            pos[i] = static_cast<long>(unknown.size());
            unknown.push_back(i);
        }

        auto power_w = [&](std::size_t i) {
            double acc = 0.0;
            for (const auto& [j, g] : adj[i]) acc += g * (v[i] - v[j]);
            acc += tie_g[i] * v[i] - tie_gv[i] + shunt_g[i] * v[i];
            return v[i] * acc;
        };

        const auto m = static_cast<Eigen::Index>(unknown.size());
        double best = std::numeric_limits<double>::infinity();
        bool ok = m == 0;
        int it = 0;
        Eigen::VectorXd f(m);
        Eigen::MatrixXd jac(m, m);
        for (; m > 0 && it <= options.max_iterations; ++it) {
            double mis = 0.0;
            for (Eigen::Index k = 0; k < m; ++k) {
                const auto i = unknown[static_cast<std::size_t>(k)];
                f(k) = power_w(i) - injections_kw[i] * 1e3;
                mis = std::max(mis, std::abs(f(k)));
            }
            if (!std::isfinite(mis)) break;
            best = std::min(best, mis);
            if (mis < tol_w) {
                ok = true;
                break;
            }
            if (it == options.max_iterations) break;
            jac.setZero();
            for (Eigen::Index k = 0; k < m; ++k) {
                const auto i = unknown[static_cast<std::size_t>(k)];
                double diag = 0.0;
                for (const auto& [j, g] : adj[i]) {
                    diag += g * (2.0 * v[i] - v[j]);
                    if (pos[j] >= 0) jac(k, pos[j]) -= v[i] * g;
                }
                diag += tie_g[i] * 2.0 * v[i] - tie_gv[i] + 2.0 * shunt_g[i] * v[i];
                jac(k, k) += diag;
            }
            const Eigen::VectorXd dx = jac.partialPivLu().solve(f);
            for (Eigen::Index k = 0; k < m; ++k) v[unknown[static_cast<std::size_t>(k)]] -= dx(k);
        }
        iterations = std::max(iterations, it);
        if (!ok) {
            converged = false;
            worst = std::max(worst, best);
            throw NumericError("power flow did not converge", best / 1e3);
        }
        for (std::size_t i : isl.buses) {
            sol.bus_voltages[i] = v[i] / vb;
            sol.bus_injections[i] = (isl.slack && i == *isl.slack) ? power_w(i) / 1e3 : injections_kw[i];
        }
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto i = unknown[static_cast<std::size_t>(k)];
            worst = std::max(worst, std::abs(power_w(i) / 1e3 - injections_kw[i]));
        }
    }

    const double i_base = network.base_power_kva * 1e3 / vb;
    double losses = 0.0;
    for (std::size_t k = 0; k < network.branches.size(); ++k) {
        const auto& br = network.branches[k];
        if (!network.branch_live(br)) continue;
        const auto a = network.bus_index(br.from_bus);
        const auto b = network.bus_index(br.to_bus);
        const double g = 1e3 / br.r_mohm;
        const double i_a = g * (v[a] - v[b]);
        sol.branch_flows[k] = v[a] * i_a / 1e3;
        sol.branch_currents[k] = i_a / i_base;
        losses += i_a * (v[a] - v[b]) / 1e3;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (shunt_g[i] > 0) losses += shunt_g[i] * v[i] * v[i] / 1e3;
    }
    sol.total_losses = losses;
    sol.converged = converged;
    sol.iterations = iterations;
    sol.max_mismatch_kw = worst;
    return sol;
}

double balance_residual_kw(const FlowSolution& flow) {
    double sum = 0.0;
    for (double p : flow.bus_injections) sum += p;
    return sum - flow.total_losses;
}

// =============================================================================
// Limits
// =============================================================================

bool ViolationReport::has(ViolationKind kind) const {
    return std::any_of(items.begin(), items.end(), [&](const Violation& v) { return v.kind == kind; });
}

ViolationReport check_limits(const NetworkModel& network, const FlowSolution& flow,
                             const OperatingPoint& point, const LimitOptions& options) {
    ViolationReport report;
    const double tol = options.tolerance;
    auto add = [&](ViolationKind kind, const std::string& element, double value, double limit) {
        report.items.push_back({kind, element, value, limit, std::abs(value - limit)});
    };
    auto bus_voltage = [&](const std::string& bus) -> double {
        auto i = network.find_bus(bus);
        return (i && *i < flow.bus_voltages.size()) ? flow.bus_voltages[*i] : 1.0;
    };

    auto check_unit = [&](const UnitPoint& u, ViolationKind over, ViolationKind under) {
        if (u.p_kw > u.p_max_kw + tol) add(over, u.id, u.p_kw, u.p_max_kw);
        if (u.p_kw < u.p_min_kw - tol) add(under, u.id, u.p_kw, u.p_min_kw);
        if (u.rating_kw > 0) {
            const double v = bus_voltage(u.bus);
            if (v > 0) {
                const double i = std::abs(u.p_kw) * 1e3 / (v * network.base_voltage_v);
                const double i_max = u.rating_kw * 1e3 * 1.25 / network.base_voltage_v;
                if (i > i_max + tol) add(ViolationKind::ConverterCurrent, u.id, i, i_max);
            }
        }
    };
    for (const auto& g : point.gens) {
        check_unit(g, ViolationKind::GenOverload, ViolationKind::GenUnderload);
        if (g.q_kvar > g.q_max_kvar + tol) add(ViolationKind::GenReactive, g.id, g.q_kvar, g.q_max_kvar);
        if (g.q_kvar < g.q_min_kvar - tol) add(ViolationKind::GenReactive, g.id, g.q_kvar, g.q_min_kvar);
    }
    if (point.ess) check_unit(*point.ess, ViolationKind::EssBounds, ViolationKind::EssBounds);
    for (const auto& s : point.sheds) {
        if (s.shed_kw < -tol) add(ViolationKind::ShedBounds, s.load_id, s.shed_kw, 0.0);
        if (s.shed_kw > s.demand_kw + tol) add(ViolationKind::ShedBounds, s.load_id, s.shed_kw, s.demand_kw);
    }

    for (const auto& c : point.converters) {
        const double vdc = bus_voltage(c.bus);
        if (vdc <= 0) continue;
        const double v2 = vdc * vdc;
        if (v2 < options.conv_v_min * options.conv_v_min - tol) {
            add(ViolationKind::ConverterAcVoltage, c.bus, vdc, options.conv_v_min);
        } else if (v2 > options.conv_v_max * options.conv_v_max + tol) {
            add(ViolationKind::ConverterAcVoltage, c.bus, vdc, options.conv_v_max);
        }
        if (c.rating_kva > 0) {
            const double p = c.p_kw / c.rating_kva;
            const double q = c.q_kvar / c.rating_kva;
            const double vr = vdc - (c.r_filter_pu * p + c.x_filter_pu * q) / vdc;
            const double vi = (c.x_filter_pu * p - c.r_filter_pu * q) / vdc;
            const double f2 = vr * vr + vi * vi;
            if (f2 < options.filter_v_min * options.filter_v_min - tol) {
                add(ViolationKind::FilterVoltage, c.bus, std::sqrt(f2), options.filter_v_min);
            } else if (f2 > options.filter_v_max * options.filter_v_max + tol) {
                add(ViolationKind::FilterVoltage, c.bus, std::sqrt(f2), options.filter_v_max);
            }
            const double s = std::hypot(c.p_kw, c.q_kvar);
            const double i = s * 1e3 / (vdc * network.base_voltage_v);
            const double i_max = c.rating_kva * 1e3 * 1.25 / network.base_voltage_v;
            if (i > i_max + tol) add(ViolationKind::ConverterCurrent, c.bus, i, i_max);
        }
    }

    for (const auto& isl : flow.islands) {
        for (std::size_t i : isl.buses) {
            const double v = flow.bus_voltages[i];
            if (v <= 0) continue;
            const auto& b = network.buses[i];
            if (v < b.v_min - tol) add(ViolationKind::DcVoltage, b.id, v, b.v_min);
            if (v > b.v_max + tol) add(ViolationKind::DcVoltage, b.id, v, b.v_max);
        }
    }
    for (std::size_t k = 0; k < network.branches.size() && k < flow.branch_flows.size(); ++k) {
        const auto& br = network.branches[k];
        const double limit = br.rating_kva * br.derating;
        const double s = std::abs(flow.branch_flows[k]);
        if (s > limit + tol) add(ViolationKind::BranchOverload, br.id, s, limit);
    }
    return report;
}

}  // namespace psv::grid
