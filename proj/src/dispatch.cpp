#include "psv/dispatch.hpp"

#include "psv/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace psv::dispatch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxSeedCombos = 512;

double unit_fuel(const GenUnit& g, double p) {
    if (p <= 0) return 0.0;
    return g.sfoc->s_min(p) * p / 1000.0;
}

double unit_marginal(const GenUnit& g, double p) {
    if (p <= 0) return g.sfoc->s_min(0.0) / 1000.0;
    return (g.sfoc->s_min_derivative(p) * p + g.sfoc->s_min(p)) / 1000.0;
}

// -----------------------------------------------------------------------------
// Gradient projection over linear constraints
// -----------------------------------------------------------------------------

struct LinearProgram {
    Eigen::MatrixXd a_eq;
    Eigen::VectorXd b_eq;
    Eigen::MatrixXd a_in;  ///< a_in x <= b_in, box rows included
    Eigen::VectorXd b_in;
    std::function<double(const Eigen::VectorXd&)> f;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
    bool linear = false;
};

struct RosenResult {
    Eigen::VectorXd x;
    double f = 0.0;
    int iterations = 0;
    bool capped = false;
};

bool independent(const Eigen::MatrixXd& n, const Eigen::RowVectorXd& r) {
    const double rn = r.norm();
    if (rn == 0) return false;
    if (n.rows() == 0) return true;
    const Eigen::MatrixXd nnt = n * n.transpose();
    const Eigen::VectorXd lam = nnt.ldlt().solve(n * r.transpose());
    const Eigen::RowVectorXd res = r - (n.transpose() * lam).transpose();
    return res.norm() > 1e-9 * rn;
}

Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& base, const Eigen::MatrixXd& src,
                           const std::vector<int>& rows) {
    Eigen::MatrixXd n(base.rows() + static_cast<Eigen::Index>(rows.size()), src.cols());
    if (base.rows() > 0) n.topRows(base.rows()) = base;
    for (std::size_t k = 0; k < rows.size(); ++k) n.row(base.rows() + static_cast<Eigen::Index>(k)) = src.row(rows[k]);
    return n;
}

double line_search(const LinearProgram& p, const Eigen::VectorXd& x, const Eigen::VectorXd& d,
                   double alpha_max) {
    const double dn = d.norm();
    auto dphi = [&](double a) { return p.grad(x + a * d).dot(d); };
    double cap = alpha_max;
    if (!std::isfinite(cap)) {
        cap = 100.0 / dn;
        while (dphi(cap) < 0 && cap * dn < 1e6) cap *= 2.0;
    }
    if (dphi(cap) <= 0) return cap;
    double lo = 0.0;
    double hi = cap;
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (dphi(mid) < 0) lo = mid;
        else hi = mid;
    }
    double a = 0.5 * (lo + hi);
    const double f0 = p.f(x);
    while (a > 0 && p.f(x + a * d) > f0) a *= 0.5;
    return a;
}

RosenResult rosen(const LinearProgram& p, Eigen::VectorXd x, int max_iterations) {
    RosenResult out;
    const auto m_in = p.a_in.rows();

    Eigen::MatrixXd eq(0, x.size());
    for (Eigen::Index i = 0; i < p.a_eq.rows(); ++i) {
        if (independent(eq, p.a_eq.row(i))) {
            eq.conservativeResize(eq.rows() + 1, Eigen::NoChange);
            eq.row(eq.rows() - 1) = p.a_eq.row(i);
        }
    }

    auto slack = [&](Eigen::Index i) { return p.b_in(i) - p.a_in.row(i).dot(x); };
    std::vector<int> active;
    for (Eigen::Index i = 0; i < m_in; ++i) {
        if (slack(i) <= 1e-9 * (1.0 + std::abs(p.b_in(i))) &&
            independent(stack_rows(eq, p.a_in, active), p.a_in.row(i))) {
            active.push_back(static_cast<int>(i));
        }
    }

    for (int iter = 0; iter < max_iterations; ++iter) {
        out.iterations = iter + 1;
        const Eigen::MatrixXd n = stack_rows(eq, p.a_in, active);
        const Eigen::VectorXd g = p.grad(x);
        Eigen::VectorXd d = -g;
        Eigen::VectorXd mu;
        if (n.rows() > 0) {
            const Eigen::VectorXd lam = (n * n.transpose()).ldlt().solve(n * g);
            d = -(g - n.transpose() * lam);
            mu = -lam;
        }
        const double dn = d.norm();
        const double gscale = std::max(1.0, g.norm());

        auto release = [&]() {
            int worst = -1;
            double worst_mu = -1e-10 * gscale;
            for (std::size_t k = 0; k < active.size(); ++k) {
                const double m = mu(eq.rows() + static_cast<Eigen::Index>(k));
                if (m < worst_mu) {
                    worst_mu = m;
                    worst = static_cast<int>(k);
                }
            }
            if (worst < 0) return false;
            active.erase(active.begin() + worst);
            return true;
        };

        if (dn <= 1e-11 * gscale) {
            if (release()) continue;
            out.x = x;
            out.f = p.f(x);
            return out;
        }

        double alpha_max = kInf;
        int block = -1;
        for (Eigen::Index i = 0; i < m_in; ++i) {
            if (std::find(active.begin(), active.end(), static_cast<int>(i)) != active.end()) continue;
            const double ad = p.a_in.row(i).dot(d);
            if (ad <= 1e-14 * dn * p.a_in.row(i).norm()) continue;
            const double t = std::max(0.0, slack(i)) / ad;
            if (t < alpha_max) {
                alpha_max = t;
                block = static_cast<int>(i);
            }
        }

        double alpha = 0.0;
        if (p.linear) {
            if (block < 0) throw Error(ErrorKind::Numeric, "unbounded feasibility subproblem");
            alpha = alpha_max;
        } else {
            alpha = line_search(p, x, d, alpha_max);
        }
        x += alpha * d;
        const bool blocked = block >= 0 && alpha >= alpha_max * (1.0 - 1e-12);
        if (blocked) active.push_back(block);
        if (!blocked && alpha * dn < 1e-10) {
            if (release()) continue;
            break;
        }
    }
    out.capped = out.iterations >= max_iterations;
    out.x = x;
    out.f = p.f(x);
    return out;
}

struct PhaseOne {
    Eigen::VectorXd x;
    double violation = 0.0;
};

/// Minimum-L1-violation point over the box via an artificial-variable program.
PhaseOne phase_one(const Eigen::MatrixXd& a_eq, const Eigen::VectorXd& b_eq,
                   const Eigen::MatrixXd& a_gen, const Eigen::VectorXd& b_gen,
                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, Eigen::VectorXd start,
                   int max_iterations) {
    const auto n = lo.size();
    const auto me = a_eq.rows();
    const auto mi = a_gen.rows();
    const auto nt = n + 2 * me + mi;
    for (Eigen::Index j = 0; j < n; ++j) start(j) = std::clamp(start(j), lo(j), hi(j));

    Eigen::VectorXd z = Eigen::VectorXd::Zero(nt);
    z.head(n) = start;
    for (Eigen::Index i = 0; i < me; ++i) {
        const double r = b_eq(i) - a_eq.row(i).dot(start);
        z(n + 2 * i) = std::max(r, 0.0);
        z(n + 2 * i + 1) = std::max(-r, 0.0);
    }
    for (Eigen::Index i = 0; i < mi; ++i) z(n + 2 * me + i) = std::max(0.0, a_gen.row(i).dot(start) - b_gen(i));

    LinearProgram lp;
    lp.linear = true;
    lp.a_eq = Eigen::MatrixXd::Zero(me, nt);
    lp.b_eq = b_eq;
    for (Eigen::Index i = 0; i < me; ++i) {
        lp.a_eq.row(i).head(n) = a_eq.row(i);
        lp.a_eq(i, n + 2 * i) = 1.0;
        lp.a_eq(i, n + 2 * i + 1) = -1.0;
    }
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> rhs;
    for (Eigen::Index i = 0; i < mi; ++i) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nt);
        r.head(n) = a_gen.row(i);
        r(n + 2 * me + i) = -1.0;
        rows.push_back(r);
        rhs.push_back(b_gen(i));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nt);
        r(j) = 1.0;
        rows.push_back(r);
        rhs.push_back(hi(j));
        r(j) = -1.0;
        rows.push_back(r);
        rhs.push_back(-lo(j));
    }
    for (Eigen::Index k = n; k < nt; ++k) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nt);
        r(k) = -1.0;
        rows.push_back(r);
        rhs.push_back(0.0);
    }
    lp.a_in.resize(static_cast<Eigen::Index>(rows.size()), nt);
    lp.b_in.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        lp.a_in.row(static_cast<Eigen::Index>(k)) = rows[k];
        lp.b_in(static_cast<Eigen::Index>(k)) = rhs[k];
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(nt);
    c.tail(nt - n).setOnes();
    lp.f = [c](const Eigen::VectorXd& v) { return c.dot(v); };
    lp.grad = [c](const Eigen::VectorXd&) { return c; };

    PhaseOne out;
    if (nt == n) {
        out.x = start;
        return out;
    }
    const auto res = rosen(lp, z, max_iterations);
    out.x = res.x.head(n);
    for (Eigen::Index j = 0; j < n; ++j) out.x(j) = std::clamp(out.x(j), lo(j), hi(j));
    for (Eigen::Index i = 0; i < me; ++i) out.violation += std::abs(a_eq.row(i).dot(out.x) - b_eq(i));
    for (Eigen::Index i = 0; i < mi; ++i) out.violation += std::max(0.0, a_gen.row(i).dot(out.x) - b_gen(i));
    return out;
}

// -----------------------------------------------------------------------------
// Symmetry-reduced problem
// -----------------------------------------------------------------------------

struct Reduced {
    std::vector<std::vector<std::size_t>> members;  ///< controls per variable
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
    Eigen::VectorXd fixed_u;
    Eigen::MatrixXd map;  ///< controls x variables
    Eigen::MatrixXd a_eq;
    Eigen::VectorXd b_eq;
    Eigen::MatrixXd a_gen;
    Eigen::VectorXd b_gen;

    Eigen::VectorXd expand(const Eigen::VectorXd& x) const { return fixed_u + map * x; }
};

Reduced reduce(const OpfProblem& p) {
    Reduced r;
    const auto nc = p.controls.size();
    r.fixed_u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nc));
    std::map<std::tuple<int, double, double, double, const void*>, std::size_t> groups;
    std::vector<double> lo;
    std::vector<double> hi;
    for (std::size_t k = 0; k < nc; ++k) {
        const auto& c = p.controls[k];
        if (c.hi - c.lo <= 1e-9) {
            r.fixed_u(static_cast<Eigen::Index>(k)) = c.lo;
            continue;
        }
        if (c.kind == Control::Kind::Gen) {
            const auto& g = p.gens[static_cast<std::size_t>(p.unit[k])];
            const auto key = std::make_tuple(c.island, c.lo, c.hi, c.rated,
                                             static_cast<const void*>(g.sfoc.get()));
            auto it = groups.find(key);
            if (it != groups.end()) {
                r.members[it->second].push_back(k);
                continue;
            }
            groups[key] = r.members.size();
        }
        r.members.push_back({k});
        lo.push_back(c.lo);
        hi.push_back(c.hi);
    }
    const auto nv = static_cast<Eigen::Index>(r.members.size());
    r.lo = Eigen::Map<Eigen::VectorXd>(lo.data(), nv);
    r.hi = Eigen::Map<Eigen::VectorXd>(hi.data(), nv);
    r.map = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nc), nv);
    for (Eigen::Index j = 0; j < nv; ++j) {
        for (auto k : r.members[static_cast<std::size_t>(j)]) r.map(static_cast<Eigen::Index>(k), j) = 1.0;
    }
    r.a_eq = p.j_e * r.map;
    r.b_eq = -p.o_e - p.j_e * r.fixed_u;
    r.a_gen = p.j_i * r.map;
    r.b_gen = -p.o_i - p.j_i * r.fixed_u;
    return r;
}

// -----------------------------------------------------------------------------
// Outcome assembly
// -----------------------------------------------------------------------------

std::vector<double> bus_injections(const OpfProblem& p, const Eigen::VectorXd& u) {
    std::vector<double> inj = p.fixed_injections_kw;
    for (std::size_t k = 0; k < p.controls.size(); ++k) {
        const auto idx = p.network.bus_index(p.controls[k].bus);
        inj[idx] += u(static_cast<Eigen::Index>(k));
    }
    return inj;
}

std::set<std::string> source_buses(const OpfProblem& p) {
    std::set<std::string> s;
    for (const auto& c : p.controls) {
        if (c.kind != Control::Kind::Shed && c.hi > 0) s.insert(c.bus);
    }
    return s;
}

std::optional<grid::FlowSolution> run_flow(const OpfProblem& p, const Eigen::VectorXd& u) {
    grid::FlowOptions fo;
    fo.sources = source_buses(p);
    try {
        return grid::dc_power_flow(p.network, bus_injections(p, u), fo);
    } catch (const Error&) {
        return std::nullopt;
    }
}

grid::OperatingPoint operating_point(const OpfProblem& p, const Eigen::VectorXd& u) {
    grid::OperatingPoint op;
    for (std::size_t k = 0; k < p.controls.size(); ++k) {
        const auto& c = p.controls[k];
        const double v = u(static_cast<Eigen::Index>(k));
        if (c.kind == Control::Kind::Gen) {
            op.gens.push_back({c.id, c.bus, v, 0.0, c.rated, 0.0, -kInf, kInf, c.rated});
        } else if (c.kind == Control::Kind::Ess) {
            const auto lim = storage::ess_dispatch_limits(*p.ess);
            op.ess = grid::UnitPoint{c.id, c.bus, v, std::min(lim.p_min_kw, c.lo), std::max(lim.p_max_kw, c.hi),
                                     0.0, -kInf, kInf, c.rated};
        } else {
            double demand = 0.0;
            for (const auto& l : p.loads) {
                if (l.id == c.id) demand = loads::dc_draw_kw(l, p.options.converter_efficiency);
            }
            op.sheds.push_back({c.id, v, demand});
        }
    }
    op.converters = p.converters;
    return op;
}

struct Attempt {
    bool feasible = false;
    Eigen::VectorXd u;
    double violation = 0.0;
    bool capped = false;
    int outer = 0;
    double losses = 0.0;
    std::optional<grid::FlowSolution> flow;
};

bool lex_less(const OpfProblem& p, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    for (std::size_t k = 0; k < p.controls.size(); ++k) {
        if (p.controls[k].kind != Control::Kind::Gen) continue;
        const auto i = static_cast<Eigen::Index>(k);
        if (std::abs(a(i) - b(i)) > 1e-6) return a(i) < b(i);
    }
    return false;
}

/// Inner solve at fixed loss estimate with deterministic multi-start.
Attempt solve_inner(const OpfProblem& p, const Eigen::VectorXd* warm) {
    Attempt out;
    const Reduced r = reduce(p);
    const auto nv = r.lo.size();
    const int iters = p.options.max_iterations;

    std::vector<Eigen::VectorXd> starts;
    if (warm && warm->size() == static_cast<Eigen::Index>(p.controls.size())) {
        Eigen::VectorXd x(nv);
        for (Eigen::Index j = 0; j < nv; ++j) x(j) = (*warm)(static_cast<Eigen::Index>(r.members[static_cast<std::size_t>(j)].front()));
        starts.push_back(x);
    }
    starts.push_back(0.5 * (r.lo + r.hi));
    starts.push_back(r.lo);
    starts.push_back(r.hi);
    for (Eigen::Index j = 0; j < nv; ++j) {
        Eigen::VectorXd x = r.lo;
        x(j) = r.hi(j);
        starts.push_back(x);
        x = r.hi;
        x(j) = r.lo(j);
        starts.push_back(x);
    }
    // Fuel curves are not convex between calibration anchors: seed every
    // combination of bounds and anchor powers when the product stays small.
    {
        std::vector<std::vector<double>> axes(static_cast<std::size_t>(nv));
        std::size_t combos = 1;
        for (Eigen::Index j = 0; j < nv; ++j) {
            auto& ax = axes[static_cast<std::size_t>(j)];
            ax = {r.lo(j), r.hi(j)};
            const auto k = r.members[static_cast<std::size_t>(j)].front();
            if (p.controls[k].kind == Control::Kind::Gen) {
                for (const auto& a : p.gens[static_cast<std::size_t>(p.unit[k])].sfoc->anchors()) {
                    if (a.p_kw > r.lo(j) && a.p_kw < r.hi(j)) ax.push_back(a.p_kw);
                }
            }
            std::sort(ax.begin(), ax.end());
            ax.erase(std::unique(ax.begin(), ax.end()), ax.end());
            combos *= ax.size();
        }
        if (nv > 0 && combos <= kMaxSeedCombos) {
            for (std::size_t c = 0; c < combos; ++c) {
                Eigen::VectorXd x(nv);
                std::size_t rest = c;
                for (Eigen::Index j = 0; j < nv; ++j) {
                    const auto& ax = axes[static_cast<std::size_t>(j)];
                    x(j) = ax[rest % ax.size()];
                    rest /= ax.size();
                }
                starts.push_back(x);
            }
        }
    }

    LinearProgram prog;
    prog.a_eq = r.a_eq;
    prog.b_eq = r.b_eq;
    {
        const auto mg = r.a_gen.rows();
        prog.a_in = Eigen::MatrixXd::Zero(mg + 2 * nv, nv);
        prog.b_in = Eigen::VectorXd::Zero(mg + 2 * nv);
        prog.a_in.topRows(mg) = r.a_gen;
        prog.b_in.head(mg) = r.b_gen;
        for (Eigen::Index j = 0; j < nv; ++j) {
            prog.a_in(mg + 2 * j, j) = 1.0;
            prog.b_in(mg + 2 * j) = r.hi(j);
            prog.a_in(mg + 2 * j + 1, j) = -1.0;
            prog.b_in(mg + 2 * j + 1) = -r.lo(j);
        }
    }
    prog.f = [&](const Eigen::VectorXd& x) { return p.objective(r.expand(x)); };
    prog.grad = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return r.map.transpose() * p.gradient(r.expand(x));
    };

    bool have = false;
    double best_f = kInf;
    Eigen::VectorXd best_u;
    double best_violation = kInf;
    Eigen::VectorXd least_bad;
    std::vector<Eigen::VectorXd> seen;
    for (const auto& s : starts) {
        const auto ph = phase_one(r.a_eq, r.b_eq, r.a_gen, r.b_gen, r.lo, r.hi, s, iters);
        if (ph.violation < best_violation) {
            best_violation = ph.violation;
            least_bad = ph.x;
        }
        if (ph.violation > 1e-6) continue;
        bool dup = false;
        for (const auto& q : seen) dup = dup || (q - ph.x).norm() < 1e-6;
        if (dup) continue;
        seen.push_back(ph.x);
        const auto res = nv > 0 ? rosen(prog, ph.x, iters) : RosenResult{ph.x, prog.f(ph.x), 0, false};
        out.capped = out.capped || res.capped;
        const Eigen::VectorXd u = r.expand(res.x);
        const double tie = 1e-7 * std::max(1.0, std::abs(best_f));
        if (!have || res.f < best_f - tie || (res.f <= best_f + tie && lex_less(p, u, best_u))) {
            have = true;
            best_f = std::min(best_f, res.f);
            best_u = u;
        }
    }
    out.feasible = have;
    out.violation = have ? 0.0 : best_violation;
    out.u = have ? best_u : r.expand(least_bad);
    return out;
}

Attempt solve_outer(OpfProblem p, double tol, const Eigen::VectorXd* warm) {
    Attempt att;
    Eigen::VectorXd seed;
    const Eigen::VectorXd* start = warm;
    std::vector<double> losses = p.island_losses_kw;
    for (int it = 0; it < p.options.max_outer_iterations; ++it) {
        for (std::size_t i = 0; i < losses.size(); ++i) {
            p.o_e(static_cast<Eigen::Index>(i)) = -(p.island_demand_kw[i] + losses[i]);
        }
        const bool capped_before = att.capped;
        att = solve_inner(p, start);
        att.capped = att.capped || capped_before;
        att.outer = it + 1;
        att.flow = run_flow(p, att.u);
        if (!att.flow) break;
        std::vector<double> next(losses.size(), 0.0);
        for (std::size_t i = 0; i < p.island_buses.size(); ++i) {
            for (auto b : p.island_buses[i]) next[i] += att.flow->bus_injections[b];
        }
        double change = 0.0;
        for (std::size_t i = 0; i < losses.size(); ++i) change = std::max(change, std::abs(next[i] - losses[i]));
        losses = next;
        seed = att.u;
        start = &seed;
        if (change < tol) break;
    }
    att.losses = 0.0;
    for (double l : losses) att.losses += l;
    return att;
}

Schedule assemble(const OpfProblem& p, const Attempt& att) {
    Schedule s;
    s.gens.reserve(p.gens.size());
    for (const auto& g : p.gens) s.gens.push_back({g.id, g.bus, 0.0, 0.0, false});
    for (std::size_t k = 0; k < p.controls.size(); ++k) {
        const double v = att.u(static_cast<Eigen::Index>(k));
        switch (p.controls[k].kind) {
            case Control::Kind::Gen: {
                auto& gd = s.gens[static_cast<std::size_t>(p.unit[k])];
                gd.p_kw = v;
                gd.available = true;
                break;
            }
            case Control::Kind::Ess: s.p_ess_kw = v; break;
            case Control::Kind::Shed: break;
        }
    }
    const auto speeds = speed_setpoints(s, p.gens, p.options);
    for (std::size_t i = 0; i < s.gens.size(); ++i) s.gens[i].omega_ref_rpm = speeds[i];
    s.objective = p.objective(att.u);
    s.fuel_kg_h = p.fuel(att.u);
    s.losses_kw = att.losses;
    for (double d : p.island_demand_kw) s.demand_kw += d;
    s.iteration_cap = att.capped;
    s.outer_iterations = att.outer;
    if (att.flow) {
        for (auto& v : grid::check_limits(p.network, *att.flow, operating_point(p, att.u)).items) {
            (v.kind == grid::ViolationKind::BranchOverload ? s.warnings : s.violations).items.push_back(v);
        }
    }
    s.mode = att.feasible ? (p.relaxation == Relaxation::None ? ScheduleMode::Feasible
                                                               : ScheduleMode::OverloadRelaxed)
                          : ScheduleMode::Infeasible;
    if (s.mode == ScheduleMode::Feasible && !s.violations.empty()) s.mode = ScheduleMode::OverloadRelaxed;
    if (!att.feasible) s.deficit_kw = att.violation;
    return s;
}

Eigen::VectorXd warm_vector(const OpfProblem& p, const Schedule& w) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.controls.size()));
    for (std::size_t k = 0; k < p.controls.size(); ++k) {
        const auto& c = p.controls[k];
        double v = c.lo;
        if (c.kind == Control::Kind::Gen) {
            for (const auto& g : w.gens) {
                if (g.id == c.id) v = g.p_kw;
            }
        } else if (c.kind == Control::Kind::Ess) {
            v = w.p_ess_kw;
        }
        u(static_cast<Eigen::Index>(k)) = std::clamp(v, c.lo, c.hi);
    }
    return u;
}

std::uint64_t next_schedule_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

}  // namespace

// =============================================================================
// Problem
// =============================================================================

const char* to_string(ScheduleMode mode) {
    switch (mode) {
        case ScheduleMode::Feasible: return "feasible";
        case ScheduleMode::OverloadRelaxed: return "overload-relaxed";
        case ScheduleMode::Infeasible: return "infeasible";
    }
    return "infeasible";
}

double Schedule::total_generation_kw() const {
    double t = p_ess_kw;
    for (const auto& g : gens) t += g.p_kw;
    return t;
}

std::size_t OpfProblem::count(Control::Kind kind) const {
    return static_cast<std::size_t>(
        std::count_if(controls.begin(), controls.end(), [&](const Control& c) { return c.kind == kind; }));
}

double OpfProblem::fuel(const Eigen::VectorXd& u) const {
    double f = 0.0;
    for (std::size_t k = 0; k < controls.size(); ++k) {
        if (controls[k].kind == Control::Kind::Gen) {
            f += unit_fuel(gens[static_cast<std::size_t>(unit[k])], u(static_cast<Eigen::Index>(k)));
        }
    }
    return f;
}

double OpfProblem::objective(const Eigen::VectorXd& u) const {
    double f = 0.0;
    std::vector<double> headroom(island_demand_kw.size(), 0.0);
    std::vector<bool> has_gen(island_demand_kw.size(), false);
    for (std::size_t k = 0; k < controls.size(); ++k) {
        const auto& c = controls[k];
        const double v = u(static_cast<Eigen::Index>(k));
        switch (c.kind) {
            case Control::Kind::Gen: {
                f += unit_fuel(gens[static_cast<std::size_t>(unit[k])], v);
                if (relaxation == Relaxation::Overload) {
                    const double over = std::max(0.0, v - c.rated) / c.rated;
                    f += options.overload_weight * over * over;
                    headroom[static_cast<std::size_t>(c.island)] += c.rated - v;
                    has_gen[static_cast<std::size_t>(c.island)] = true;
                }
                break;
            }
            case Control::Kind::Ess: f += f_p * std::max(0.0, v); break;
            case Control::Kind::Shed: break;
        }
    }
    if (relaxation == Relaxation::Overload && options.dg_reserve_kw > 0) {
        for (std::size_t i = 0; i < headroom.size(); ++i) {
            if (!has_gen[i]) continue;
            const double s = std::max(0.0, options.dg_reserve_kw - headroom[i]) / options.dg_reserve_kw;
            f += options.reserve_weight * s * s;
        }
    }
    return f;
}

Eigen::VectorXd OpfProblem::gradient(const Eigen::VectorXd& u) const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(u.size());
    std::vector<double> headroom(island_demand_kw.size(), 0.0);
    for (std::size_t k = 0; k < controls.size(); ++k) {
        const auto& c = controls[k];
        if (c.kind == Control::Kind::Gen) headroom[static_cast<std::size_t>(c.island)] += c.rated - u(static_cast<Eigen::Index>(k));
    }
    for (std::size_t k = 0; k < controls.size(); ++k) {
        const auto& c = controls[k];
        const auto i = static_cast<Eigen::Index>(k);
        const double v = u(i);
        switch (c.kind) {
            case Control::Kind::Gen: {
                g(i) = unit_marginal(gens[static_cast<std::size_t>(unit[k])], v);
                if (relaxation == Relaxation::Overload) {
                    const double over = std::max(0.0, v - c.rated) / c.rated;
                    g(i) += 2.0 * options.overload_weight * over / c.rated;
                    if (options.dg_reserve_kw > 0) {
                        const double r = options.dg_reserve_kw;
                        const double s = std::max(0.0, r - headroom[static_cast<std::size_t>(c.island)]) / r;
                        g(i) += 2.0 * options.reserve_weight * s / r;
                    }
                }
                break;
            }
            case Control::Kind::Ess: g(i) = v > 0 ? f_p : 0.0; break;
            case Control::Kind::Shed: break;
        }
    }
    return g;
}

double default_ess_price(const std::vector<GenUnit>& gens, double charge_efficiency) {
    double worst = 0.0;
    for (const auto& g : gens) {
        if (!g.sfoc) continue;
        for (double p = 0.0; p <= g.rated_kw; p += 1.0) worst = std::max(worst, unit_marginal(g, p));
    }
    return worst / charge_efficiency;
}

OpfProblem build_opf(const grid::NetworkModel& network, const std::vector<GenUnit>& gens,
                     const std::optional<storage::EssUnit>& ess,
                     const std::vector<loads::LoadUnit>& loads_in,
                     const loads::MissionProfile& mission, Relaxation relaxation,
                     const DispatchOptions& options,
                     const std::vector<std::pair<std::string, double>>& approved_shed) {
    OpfProblem p;
    p.network = network;
    p.gens = gens;
    p.ess = ess;
    p.loads = loads_in;
    p.mission = mission;
    p.relaxation = relaxation;
    p.options = options;
    for (const auto& g : gens) {
        if (!g.sfoc) throw Error(ErrorKind::Model, "generator " + g.id + " has no SFOC map");
        network.bus_index(g.bus);
    }

    const double eff = options.converter_efficiency;
    p.fixed_injections_kw.assign(network.buses.size(), 0.0);
    for (const auto& l : loads_in) {
        const auto b = network.bus_index(l.bus);
        if (network.isolated_buses.count(l.bus)) continue;
        p.fixed_injections_kw[b] -= loads::dc_draw_kw(l, eff);
        if (l.behind_converter && l.is_hotel()) {
            p.converters.push_back({l.bus, l.setpoint_kw, l.reactive_kvar(), l.rated});
        }
    }

    auto live = [&](const std::string& bus) { return network.isolated_buses.count(bus) == 0; };
    std::set<std::string> sources;
    for (const auto& g : gens) {
        if (g.available && live(g.bus)) sources.insert(g.bus);
    }
    if (ess && !ess->unavailable && live(ess->bus)) sources.insert(ess->bus);

    const auto islands = grid::find_islands(network, sources);
    std::vector<int> island_of(network.buses.size(), -1);
    for (std::size_t i = 0; i < islands.size(); ++i) {
        for (auto b : islands[i].buses) island_of[b] = static_cast<int>(i);
    }

    for (std::size_t u = 0; u < gens.size(); ++u) {
        const auto& g = gens[u];
        if (!g.available || !live(g.bus)) continue;
        Control c;
        c.kind = Control::Kind::Gen;
        c.id = g.id;
        c.bus = g.bus;
        c.rated = g.rated_kw;
        c.lo = g.p_min_kw;
        c.hi = relaxation == Relaxation::Overload ? g.rated_kw * options.overload_factor : g.rated_kw;
        c.island = island_of[network.bus_index(g.bus)];
        p.controls.push_back(c);
        p.unit.push_back(static_cast<int>(u));
    }
    if (ess && live(ess->bus)) {
        Control c;
        c.kind = Control::Kind::Ess;
        c.id = ess->id;
        c.bus = ess->bus;
        c.rated = ess->p_rating_kw;
        if (ess->charging_latched || ess->mode == storage::EssMode::FastCharge ||
            ess->mode == storage::EssMode::PvCharge) {
            c.lo = c.hi = std::min(ess->p_ess_kw, 0.0);
        } else {
            const auto lim = storage::ess_dispatch_limits(*ess);
            c.lo = std::max(0.0, lim.p_min_kw);
            c.hi = std::max(c.lo, lim.p_max_kw);
        }
        c.island = island_of[network.bus_index(ess->bus)];
        p.controls.push_back(c);
        p.unit.push_back(-1);
    }
    for (const auto& [id, kw] : approved_shed) {
        const auto it = std::find_if(loads_in.begin(), loads_in.end(),
                                     [&](const loads::LoadUnit& l) { return l.id == id; });
        if (it == loads_in.end()) throw Error(ErrorKind::Validation, "shed names unknown load '" + id + "'");
        if (!live(it->bus)) continue;
        Control c;
        c.kind = Control::Kind::Shed;
        c.id = id;
        c.bus = it->bus;
        const double amount = std::clamp(kw, 0.0, loads::dc_draw_kw(*it, eff));
        c.lo = c.hi = amount;
        c.rated = loads::dc_draw_kw(*it, eff);
        c.island = island_of[network.bus_index(it->bus)];
        p.controls.push_back(c);
        p.unit.push_back(-1);
    }

    // Keep islands that carry load or controls.
    std::vector<int> row_of(islands.size(), -1);
    for (std::size_t i = 0; i < islands.size(); ++i) {
        double demand = 0.0;
        for (auto b : islands[i].buses) demand -= p.fixed_injections_kw[b];
        bool has_control = false;
        for (const auto& c : p.controls) has_control = has_control || c.island == static_cast<int>(i);
        if (demand <= 1e-9 && !has_control) continue;
        row_of[i] = static_cast<int>(p.island_demand_kw.size());
        p.island_demand_kw.push_back(demand);
        p.island_losses_kw.push_back(0.0);
        p.island_buses.push_back(islands[i].buses);
    }
    for (auto& c : p.controls) c.island = row_of[static_cast<std::size_t>(c.island)];

    const auto nc = static_cast<Eigen::Index>(p.controls.size());
    const auto ni = static_cast<Eigen::Index>(p.island_demand_kw.size());
    p.j_e = Eigen::MatrixXd::Zero(ni, nc);
    p.o_e = Eigen::VectorXd::Zero(ni);
    for (Eigen::Index k = 0; k < nc; ++k) p.j_e(p.controls[static_cast<std::size_t>(k)].island, k) = 1.0;
    for (Eigen::Index i = 0; i < ni; ++i) p.o_e(i) = -p.island_demand_kw[static_cast<std::size_t>(i)];

    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> offs;
    if (relaxation == Relaxation::None && options.dg_reserve_kw > 0) {
        for (Eigen::Index i = 0; i < ni; ++i) {
            Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nc);
            double rated = 0.0;
            for (Eigen::Index k = 0; k < nc; ++k) {
                const auto& c = p.controls[static_cast<std::size_t>(k)];
                if (c.kind == Control::Kind::Gen && c.island == i) {
                    r(k) = 1.0;
                    rated += c.rated;
                }
            }
            if (rated <= 0) continue;
            rows.push_back(r);
            offs.push_back(options.dg_reserve_kw - rated);
        }
    }
    p.j_i = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), nc);
    p.o_i = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        p.j_i.row(static_cast<Eigen::Index>(k)) = rows[k];
        p.o_i(static_cast<Eigen::Index>(k)) = offs[k];
    }

    if (options.f_p > 0) {
        p.f_p = options.f_p;
    } else if (ess && ess->f_p > 0) {
        p.f_p = ess->f_p;
    } else {
        const double eta = ess ? ess->battery.charge_efficiency : 0.95;
        p.f_p = default_ess_price(gens, eta);
    }
    return p;
}

// =============================================================================
// Solve
// =============================================================================

Schedule solve_opf(const OpfProblem& problem, double tol, const Schedule* warm_start) {
    const auto t0 = std::chrono::steady_clock::now();
    Eigen::VectorXd warm;
    if (warm_start) warm = warm_vector(problem, *warm_start);
    const auto att = solve_outer(problem, tol, warm_start ? &warm : nullptr);
    Schedule s = assemble(problem, att);
    s.id = next_schedule_id();
    s.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

Schedule solve_opf(const grid::NetworkModel& network, const std::vector<GenUnit>& gens,
                   const std::optional<storage::EssUnit>& ess,
                   const std::vector<loads::LoadUnit>& loads_in,
                   const loads::MissionProfile& mission, const DispatchOptions& options,
                   const Schedule* warm_start,
                   const std::vector<std::pair<std::string, double>>& approved_shed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto strict = build_opf(network, gens, ess, loads_in, mission, Relaxation::None, options, approved_shed);
    Schedule s = solve_opf(strict, options.loss_tolerance_kw, warm_start);
    if (s.mode == ScheduleMode::Infeasible) {
        const auto relaxed =
            build_opf(network, gens, ess, loads_in, mission, Relaxation::Overload, options, approved_shed);
        const std::uint64_t id = s.id;
        s = solve_opf(relaxed, options.loss_tolerance_kw, warm_start);
        s.id = id;
    }
    if (s.mode != ScheduleMode::Feasible) {
        // Advisory against the strict ratings, so operators see the full overload.
        double need = s.deficit_kw;
        if (s.mode == ScheduleMode::OverloadRelaxed) {
            for (std::size_t i = 0; i < gens.size(); ++i) need += std::max(0.0, s.gens[i].p_kw - gens[i].rated_kw);
        }
        std::vector<loads::LoadUnit> candidates;
        for (const auto& l : loads_in) {
            if (network.isolated_buses.count(l.bus)) continue;
            auto copy = l;
            for (const auto& [id, kw] : approved_shed) {
                if (id == l.id) copy.setpoint_kw = std::max(0.0, copy.setpoint_kw - kw);
            }
            candidates.push_back(copy);
        }
        if (need > 1e-6) {
            s.shed = loads::shed_plan(mission, need, candidates);
            std::ostringstream msg;
            msg.precision(1);
            msg << std::fixed << "shed " << s.shed->total_shed << " kW recommended";
            if (s.shed->insufficient) msg << "; " << s.shed->advisory;
            s.advisory = msg.str();
        }
    }
    s.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
}

std::vector<double> speed_setpoints(const Schedule& schedule, const std::vector<GenUnit>& gens,
                                    const DispatchOptions& options) {
    std::vector<double> out(schedule.gens.size(), 0.0);
    for (std::size_t i = 0; i < schedule.gens.size(); ++i) {
        const auto& g = schedule.gens[i];
        if (!g.available) continue;
        if (g.p_kw <= 1e-6) {
            out[i] = options.zero_dispatch == ZeroDispatch::Idle ? options.idle_speed_rpm : 0.0;
            continue;
        }
        const GenUnit* unit = i < gens.size() && gens[i].id == g.id ? &gens[i] : nullptr;
        if (!unit) {
            for (const auto& u : gens) {
                if (u.id == g.id) unit = &u;
            }
        }
        out[i] = unit && unit->sfoc ? unit->sfoc->optimized_speed(g.p_kw) : powertrain::optimized_speed(g.p_kw);
    }
    return out;
}

ReserveReport reserve_check(const std::vector<GenUnit>& fleet, const Schedule& schedule,
                            double ess_p_max_kw, double headroom_req_kw) {
    ReserveReport r;
    for (const auto& g : schedule.gens) {
        if (!g.available) continue;
        for (const auto& u : fleet) {
            if (u.id == g.id) r.dg_reserve_kw += std::max(0.0, u.rated_kw - g.p_kw);
        }
    }
    r.ess_headroom_kw = std::max(0.0, ess_p_max_kw - schedule.p_ess_kw);
    r.reserve_kw = r.dg_reserve_kw + r.ess_headroom_kw;
    r.requirement_kw = headroom_req_kw;
    r.below_requirement = r.reserve_kw < headroom_req_kw;
    r.shortfall_kw = std::max(0.0, headroom_req_kw - r.reserve_kw);
    return r;
}

}  // namespace psv::dispatch
