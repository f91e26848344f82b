#include "psv/powertrain.hpp"

#include "psv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace psv::powertrain {

// =============================================================================
// Engine
// =============================================================================

DieselEngineParams DieselEngineParams::sized(double p_rated_kw, double tau_mech_s,
                                             double loss_fraction) {
    DieselEngineParams p;
    p.p_rated_kw = p_rated_kw;
    const double w = rpm_to_rad(p.omega_rated_rpm);
    p.J = tau_mech_s * p_rated_kw * 1e3 / (w * w);
    p.k_loss = loss_fraction * p_rated_kw * 1e3 / (w * w);
    return p;
}

void DieselEngineParams::validate() const {
    if (!(k_pm > 0 && tau_pm >= 0 && J > 0 && k_loss > 0 && p_rated_kw > 0 &&
          omega_rated_rpm > 0 && omega_min_rpm > 0 && stall_rpm > 0)) {
        throw Error(ErrorKind::Validation, "engine parameters must be positive");
    }
    if (omega_min_rpm >= omega_max_rpm) {
        throw Error(ErrorKind::Validation, "engine omega_min must be below omega_max");
    }
    if (t_d < 0) throw Error(ErrorKind::Validation, "engine dead time must be non-negative");
}

namespace {

std::size_t delay_samples(const DieselEngineParams& params, double dt) {
    return static_cast<std::size_t>(std::llround(params.t_d / dt));
}

}  // namespace

double rotational_loss_kw(const DieselEngineParams& params, double omega_rpm) {
    const double w = rpm_to_rad(omega_rpm);
    return params.k_loss * w * w / 1e3;
}

double kinetic_energy_kj(const DieselEngineParams& params, double omega_rpm) {
    const double w = rpm_to_rad(omega_rpm);
    return 0.5 * params.J * w * w / 1e3;
}

DieselEngineState make_engine_state(const DieselEngineParams& params, double omega_rpm,
                                    double p_load_kw, double dt) {
    DieselEngineState s;
    s.omega_rpm = omega_rpm;
    s.p_mech_kw = p_load_kw + rotational_loss_kw(params, omega_rpm);
    s.u_f = s.p_mech_kw / (params.k_pm * params.p_rated_kw);
    s.dead_time_buffer.assign(delay_samples(params, dt), s.p_mech_kw);
    s.head = 0;
    return s;
}

DieselEngineState de_step(const DieselEngineState& state, const DieselEngineParams& params,
                          double u_f, double p_load_kw, double dt) {
    if (!(dt > 0)) throw Error(ErrorKind::Domain, "de_step: dt must be positive");
    if (!(state.omega_rpm > 0)) throw Error(ErrorKind::Domain, "de_step: omega must be positive");

    DieselEngineState next = state;
    next.u_f = u_f;
    const double command_kw = params.k_pm * u_f * params.p_rated_kw;

    const std::size_t n = delay_samples(params, dt);
    if (next.dead_time_buffer.size() != n) {
        next.dead_time_buffer.assign(n, state.p_mech_kw);
        next.head = 0;
    }
    double delayed = command_kw;
    if (n > 0) {
        delayed = next.dead_time_buffer[next.head];
        next.dead_time_buffer[next.head] = command_kw;
        next.head = (next.head + 1) % n;
    }

    if (params.tau_pm > 0) {
        next.p_mech_kw = state.p_mech_kw + (delayed - state.p_mech_kw) * -std::expm1(-dt / params.tau_pm);
    } else {
        next.p_mech_kw = delayed;
    }

    // Accelerating term explicit, loss torque implicit.
    const double w = rpm_to_rad(state.omega_rpm);
    const double accel = (next.p_mech_kw - p_load_kw) * 1e3 / (params.J * w);
    const double w_next = (w + dt * accel) / (1.0 + dt * params.k_loss / params.J);
    next.omega_rpm = rad_to_rpm(w_next);
    if (next.omega_rpm < params.stall_rpm) {
        throw Error(ErrorKind::Stall, "engine speed fell below stall threshold");
    }
    return next;
}

// =============================================================================
// Governor
// =============================================================================

std::pair<double, GovernorState> governor_step(const GovernorState& state,
                                               const GovernorParams& params, double omega_ref_rpm,
                                               double omega_rpm, double dt) {
    GovernorState next = state;
    const double e = (omega_ref_rpm - omega_rpm) / params.omega_base_rpm;
    const double candidate = state.integral + params.ki * e * dt;
    const double u_raw = params.kp * e + candidate;
    const bool high = u_raw > params.u_max && e > 0;
    const bool low = u_raw < params.u_min && e < 0;
    if (!high && !low) next.integral = candidate;
    const double u = std::clamp(params.kp * e + next.integral, params.u_min, params.u_max);
    next.u_f = u;
    return {u, next};
}

// =============================================================================
// SFOC surface
// =============================================================================

MonotoneCubic::MonotoneCubic(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
    if (x_.size() != y_.size() || x_.empty()) {
        throw Error(ErrorKind::Model, "monotone cubic needs matching non-empty knots");
    }
    for (std::size_t i = 1; i < x_.size(); ++i) {
        if (!(x_[i] > x_[i - 1])) throw Error(ErrorKind::Model, "monotone cubic knots must increase");
    }
    const std::size_t n = x_.size();
    m_.assign(n, 0.0);
    if (n == 1) return;
    std::vector<double> d(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) d[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    m_[0] = d[0];
    m_[n - 1] = d[n - 2];
    for (std::size_t i = 1; i + 1 < n; ++i) {
        m_[i] = (d[i - 1] * d[i] <= 0) ? 0.0 : 0.5 * (d[i - 1] + d[i]);
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (d[i] == 0.0) {
            m_[i] = 0.0;
            m_[i + 1] = 0.0;
            continue;
        }
        const double a = m_[i] / d[i];
        const double b = m_[i + 1] / d[i];
        const double s = a * a + b * b;
        if (s > 9.0) {
            const double t = 3.0 / std::sqrt(s);
            m_[i] = t * a * d[i];
            m_[i + 1] = t * b * d[i];
        }
    }
}

double MonotoneCubic::operator()(double x) const {
    if (x <= x_.front()) return y_.front();
    if (x >= x_.back()) return y_.back();
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double t = (x - x_[i]) / h;
    const double t2 = t * t;
    const double t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * m_[i] +
           (-2 * t3 + 3 * t2) * y_[i + 1] + (t3 - t2) * h * m_[i + 1];
}

double MonotoneCubic::derivative(double x) const {
    if (x <= x_.front() || x >= x_.back()) return 0.0;
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double t = (x - x_[i]) / h;
    const double t2 = t * t;
    return ((6 * t2 - 6 * t) * y_[i] + (3 * t2 - 4 * t + 1) * h * m_[i] +
            (-6 * t2 + 6 * t) * y_[i + 1] + (3 * t2 - 2 * t) * h * m_[i + 1]) /
           h;
}

SfocMap::SfocMap(std::vector<SfocAnchor> anchors, Options options)
    : anchors_(std::move(anchors)), options_(options) {
    std::vector<SfocAnchor> locus;
    std::vector<SfocAnchor> off_locus;
    for (const auto& a : anchors_) {
        if (!(a.p_kw > 0 && a.omega_rpm > 0 && a.sfoc > 0)) {
            throw Error(ErrorKind::Model, "SFOC anchors must be positive");
        }
        const double c = optimized_speed(a.p_kw);
        if (std::abs(a.omega_rpm - c) / c <= options_.locus_tolerance) {
            locus.push_back(a);
        } else {
            off_locus.push_back(a);
        }
    }
    if (locus.empty()) throw Error(ErrorKind::Model, "SFOC map needs at least one on-locus anchor");

    auto by_power = [](const SfocAnchor& l, const SfocAnchor& r) { return l.p_kw < r.p_kw; };
    std::sort(locus.begin(), locus.end(), by_power);
    std::vector<double> x;
    std::vector<double> y;
    for (const auto& a : locus) {
        if (!x.empty() && a.p_kw == x.back()) {
            throw Error(ErrorKind::Model, "duplicate on-locus SFOC anchor power");
        }
        x.push_back(a.p_kw);
        y.push_back(a.sfoc);
    }
    s_min_ = MonotoneCubic(std::move(x), std::move(y));

    std::sort(off_locus.begin(), off_locus.end(), by_power);
    for (const auto& a : off_locus) {
        const double c = optimized_speed(a.p_kw);
        const double dev = (a.omega_rpm - c) / c;
        const double k = (a.sfoc / s_min_(a.p_kw) - 1.0) / (dev * dev);
        if (!kappa_p_.empty() && a.p_kw == kappa_p_.back()) {
            throw Error(ErrorKind::Model, "duplicate curvature anchor power");
        }
        kappa_p_.push_back(a.p_kw);
        kappa_v_.push_back(std::max(options_.kappa_floor, k));
    }
}

std::vector<SfocAnchor> SfocMap::read_anchors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Validation, "cannot open SFOC anchor table: " + path);
    std::vector<SfocAnchor> anchors;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        SfocAnchor a;
        if (!(ss >> a.p_kw)) continue;
        if (!(ss >> a.omega_rpm >> a.sfoc)) {
            throw Error(ErrorKind::Validation,
                        path + ":" + std::to_string(lineno) + ": expected P_kW omega_rpm sfoc");
        }
        anchors.push_back(a);
    }
    return anchors;
}

SfocMap SfocMap::load(const std::string& path, Options options) {
    return SfocMap(read_anchors(path), options);
}

double SfocMap::polynomial(double p_kw) const {
    const auto& a = options_.coefficients;
    double acc = 0.0;
    for (std::size_t i = a.size(); i-- > 0;) acc = acc * p_kw + a[i];
    return acc;
}

double SfocMap::optimized_speed(double p_kw) const {
    if (p_kw < 0) throw Error(ErrorKind::Domain, "optimized_speed: negative power");
    return std::clamp(polynomial(p_kw), options_.omega_min_rpm, options_.omega_max_rpm);
}

double SfocMap::s_min(double p_kw) const { return s_min_(p_kw); }

double SfocMap::s_min_derivative(double p_kw) const { return s_min_.derivative(p_kw); }

double SfocMap::kappa(double p_kw) const {
    if (kappa_p_.empty()) return options_.kappa_floor;
    if (p_kw <= kappa_p_.front()) return kappa_v_.front();
    if (p_kw >= kappa_p_.back()) return kappa_v_.back();
    const auto it = std::upper_bound(kappa_p_.begin(), kappa_p_.end(), p_kw);
    const std::size_t i = static_cast<std::size_t>(it - kappa_p_.begin()) - 1;
    const double t = (p_kw - kappa_p_[i]) / (kappa_p_[i + 1] - kappa_p_[i]);
    return kappa_v_[i] + t * (kappa_v_[i + 1] - kappa_v_[i]);
}

double SfocMap::sfoc(double p_kw, double omega_rpm, SfocFlags* flags) const {
    if (!(p_kw > 0)) throw Error(ErrorKind::Domain, "sfoc_lookup: power must be positive");
    SfocFlags f;
    double w = omega_rpm;
    if (w < options_.omega_min_rpm || w > options_.omega_max_rpm) {
        w = std::clamp(w, options_.omega_min_rpm, options_.omega_max_rpm);
        f.omega_clamped = true;
    }
    f.power_extrapolated = p_kw > options_.p_rated_kw;
    const double c = optimized_speed(p_kw);
    const double dev = (w - c) / c;
    if (flags) *flags = f;
    return s_min(p_kw) * (1.0 + kappa(p_kw) * dev * dev);
}

double optimized_speed(double p_kw) {
    static const SfocMap::Options defaults{};
    if (p_kw < 0) throw Error(ErrorKind::Domain, "optimized_speed: negative power");
    const auto& a = defaults.coefficients;
    double acc = 0.0;
    for (std::size_t i = a.size(); i-- > 0;) acc = acc * p_kw + a[i];
    return std::clamp(acc, defaults.omega_min_rpm, defaults.omega_max_rpm);
}

double optimized_speed(const SfocMap& map, double p_kw) { return map.optimized_speed(p_kw); }

double sfoc_lookup(const SfocMap& map, double p_kw, double omega_rpm, SfocFlags* flags) {
    return map.sfoc(p_kw, omega_rpm, flags);
}

double fuel_rate(const SfocMap& map, double p_kw, double omega_rpm) {
    if (p_kw == 0.0) return 0.0;
    return map.sfoc(p_kw, omega_rpm) * p_kw / 1000.0;
}

// =============================================================================
// DC link
// =============================================================================

ConverterPlant dc_link_step(const ConverterPlant& plant, double p_in_kw, double i_L, double dt) {
    if (!(plant.v_dc > 0)) throw Error(ErrorKind::Domain, "dc_link_step: v_dc must be positive");
    ConverterPlant next = plant;
    next.i_L = i_L;
    const double e = 0.5 * plant.c_dc * plant.v_dc * plant.v_dc;
    const double e_next = e + dt * (p_in_kw * 1e3 - plant.v_dc * i_L);
    next.v_dc = e_next > 0 ? std::sqrt(2.0 * e_next / plant.c_dc) : 0.0;
    next.voltage_excursion =
        std::abs(next.v_dc - plant.v_nominal) > plant.v_band * plant.v_nominal;
    return next;
}

double dc_link_energy_kj(const ConverterPlant& plant) {
    return 0.5 * plant.c_dc * plant.v_dc * plant.v_dc / 1e3;
}

}  // namespace psv::powertrain
