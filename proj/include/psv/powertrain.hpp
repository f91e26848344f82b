#pragma once

// Diesel engine, speed governor, SFOC surface and generator-side DC link.

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace psv::powertrain {

constexpr double kPi = 3.14159265358979323846;

inline double rpm_to_rad(double rpm) { return rpm * 2.0 * kPi / 60.0; }
inline double rad_to_rpm(double rad) { return rad * 60.0 / (2.0 * kPi); }

// =============================================================================
// Engine
// =============================================================================

struct DieselEngineParams {
    double k_pm = 1.0;          ///< pu mechanical power per pu fuel command
    double tau_pm = 0.05;       ///< fuel-to-torque lag [s]
    double t_d = 0.015;         ///< combustion dead time [s]
    double J = 0.0;             ///< rotor inertia [kg m^2]
    double k_loss = 0.0;        ///< rotational loss coefficient [W s^2/rad^2]
    double p_rated_kw = 2048.0;
    double omega_rated_rpm = 1800.0;
    double omega_min_rpm = 700.0;
    double omega_max_rpm = 1800.0;
    double stall_rpm = 200.0;

    /// Inertia from a mechanical time constant J*w^2/P and losses as a
    /// fraction of rated power at rated speed.
    static DieselEngineParams sized(double p_rated_kw = 2048.0, double tau_mech_s = 1.0,
                                    double loss_fraction = 0.02);

    void validate() const;
};

struct DieselEngineState {
    double omega_rpm = 0.0;
    double p_mech_kw = 0.0;
    double u_f = 0.0;
    /// Ring buffer of delayed fuel-power samples [kW], one per step of t_d.
    std::vector<double> dead_time_buffer;
    std::size_t head = 0;
};

/// Engine at equilibrium: p_mech covers p_load plus rotational loss and the
/// dead-time buffer is filled with the matching command.
DieselEngineState make_engine_state(const DieselEngineParams& params, double omega_rpm,
                                    double p_load_kw, double dt);

/// Rotational loss k_loss*w^2 [kW].
double rotational_loss_kw(const DieselEngineParams& params, double omega_rpm);

/// Kinetic energy 0.5*J*w^2 [kJ].
double kinetic_energy_kj(const DieselEngineParams& params, double omega_rpm);

/// One semi-implicit Euler step. Throws Error(Stall) below stall_rpm.
DieselEngineState de_step(const DieselEngineState& state, const DieselEngineParams& params,
                          double u_f, double p_load_kw, double dt);

// =============================================================================
// Governor
// =============================================================================

struct GovernorParams {
    double kp = 0.8;
    double ki = 4.0;
    double u_min = 0.0;
    double u_max = 1.35;        ///< covers the short-term overload band
    double omega_base_rpm = 1800.0;
};

struct GovernorState {
    double integral = 0.0;  ///< integral term, also carries the operating bias
    double u_f = 0.0;
};

/// PI speed governor with conditional-integration anti-windup.
std::pair<double, GovernorState> governor_step(const GovernorState& state,
                                               const GovernorParams& params, double omega_ref_rpm,
                                               double omega_rpm, double dt);

// =============================================================================
// SFOC surface
// =============================================================================

struct SfocAnchor {
    double p_kw = 0.0;
    double omega_rpm = 0.0;
    double sfoc = 0.0;  ///< g/kWh
};

/// Fritsch-Carlson monotone cubic through (x, y) with flat extrapolation.
class MonotoneCubic {
public:
    MonotoneCubic() = default;
    MonotoneCubic(std::vector<double> x, std::vector<double> y);

    double operator()(double x) const;
    double derivative(double x) const;
    bool empty() const { return x_.empty(); }

private:
    std::vector<double> x_;
    std::vector<double> y_;
    std::vector<double> m_;
};

struct SfocFlags {
    bool omega_clamped = false;
    bool power_extrapolated = false;
};

class SfocMap {
public:
    /// Optimized-speed polynomial coefficients A0..A5 (rpm, P in kW).
    static constexpr std::array<double, 6> kDefaultCoefficients = {
        720.93, 1.2591, -0.00292, 3.8104e-6, -2.1716e-9, 4.5206e-13};

    struct Options {
        std::array<double, 6> coefficients = kDefaultCoefficients;
        double omega_min_rpm = 700.0;
        double omega_max_rpm = 1800.0;
        double p_rated_kw = 2048.0;
        double kappa_floor = 0.02;
        /// Anchors within this relative speed offset of C(P) define s_min.
        double locus_tolerance = 0.01;
    };

    SfocMap() = default;
    SfocMap(std::vector<SfocAnchor> anchors, Options options);

    /// Whitespace-separated table: P_kW omega_rpm sfoc_g_per_kWh, '#' comments.
    static SfocMap load(const std::string& path, Options options);
    static SfocMap load(const std::string& path) { return load(path, Options{}); }
    static std::vector<SfocAnchor> read_anchors(const std::string& path);

    /// Unclamped polynomial C(P).
    double polynomial(double p_kw) const;
    /// C(P) clamped to the engine speed band.
    double optimized_speed(double p_kw) const;
    double s_min(double p_kw) const;
    double s_min_derivative(double p_kw) const;
    double kappa(double p_kw) const;
    double sfoc(double p_kw, double omega_rpm, SfocFlags* flags = nullptr) const;

    const std::vector<SfocAnchor>& anchors() const { return anchors_; }
    const Options& options() const { return options_; }

private:
    std::vector<SfocAnchor> anchors_;
    Options options_;
    MonotoneCubic s_min_;
    std::vector<double> kappa_p_;
    std::vector<double> kappa_v_;
};

/// Default-coefficient polynomial clamped to [700, 1800] rpm. Negative p throws
/// Error(Domain).
double optimized_speed(double p_kw);
double optimized_speed(const SfocMap& map, double p_kw);

double sfoc_lookup(const SfocMap& map, double p_kw, double omega_rpm, SfocFlags* flags = nullptr);

/// sfoc * p / 1000 [kg/h]; zero at zero power.
double fuel_rate(const SfocMap& map, double p_kw, double omega_rpm);

// =============================================================================
// Generator rectifier DC link
// =============================================================================

struct ConverterPlant {
    double c_dc = 0.1;            ///< [F]
    double v_dc = 1500.0;         ///< [V]
    double i_L = 0.0;             ///< line current [A]
    int pole_pairs = 2;
    double lambda_ms = 4.0;       ///< stator flux linkage [Wb]
    double i_ts = 0.0;            ///< torque-producing current [A]
    double omega_r = 0.0;         ///< electrical speed [rad/s]
    double response_time = 0.005; ///< closed-loop power response [s]
    double i_max = 1707.0;        ///< [A]
    double v_nominal = 1500.0;
    double v_band = 0.05;         ///< allowed relative excursion
    bool voltage_excursion = false;
};

/// Integrates C v dv/dt = p_in - v i_L on the capacitor energy.
ConverterPlant dc_link_step(const ConverterPlant& plant, double p_in_kw, double i_L, double dt);

double dc_link_energy_kj(const ConverterPlant& plant);

}  // namespace psv::powertrain
