#pragma once

#include <cstdint>
#include <vector>

namespace dotfoundry {

/// hbar*c in eV nm.
inline constexpr double kHbarC_eVnm = 197.327;
/// E[eV] * lambda[nm].
inline constexpr double kPhotonEnergyWavelength_eVnm = 1239.842;

inline double wavelength_to_energy_ev(double wavelength_nm) { return kPhotonEnergyWavelength_eVnm / wavelength_nm; }
inline double energy_to_wavelength_nm(double energy_ev) { return kPhotonEnergyWavelength_eVnm / energy_ev; }

/// Bessel function of the first kind J_order(x), x >= 0. Ascending series for
/// x < 15; above that J0/J1 from the Hankel asymptotic expansion followed by
/// upward recurrence (stable because order <= 10 < x).
double bessel_j(int order, double x);

/// (index+1)-th positive zero of J_order, to ~1e-12. Supported: order, index in [0, 10].
double bessel_zero(int order, int index);

struct Stopband {
    double low_nm = 870.0;
    double high_nm = 980.0;
};

struct PlanarCavity {
    double e2d_ev = 0.0;        ///< planar-cavity resonance
    double epsilon_eff = 11.9;  ///< effective dielectric constant of the pillar
    Stopband stopband_nm;

    void validate() const;
};

/// Pillar mode label. Guided HE_{n_phi, n_r+1} modes take their transverse
/// constant from the zeros of J_{n_phi - 1}; the fundamental HE11 mode
/// (n_phi = 1, n_r = 0) uses the first zero of J0, 2.4048.
struct ModeIndex {
    int n_phi = 1;
    int n_r = 0;
    double chi = 0.0;

    static ModeIndex he(int n_phi, int n_r);
    static ModeIndex fundamental() { return he(1, 0); }
};

/// Pillar mode energy in eV: sqrt(E2D^2 + (hbar c)^2 chi^2 / (eps R^2)).
double mode_energy(const PlanarCavity& cavity, const ModeIndex& mode, double radius_nm);

/// Continuous inverse of mode_energy. Throws InfeasibleTargetError when target <= E2D.
double exact_radius(const PlanarCavity& cavity, const ModeIndex& mode, double target_ev);

struct PillarDesign {
    double radius_nm = 0.0;
    double diameter_um = 0.0;
    ModeIndex mode;
    double e_mode_ev = 0.0;
    double lambda_mode_nm = 0.0;
    double target_ev = 0.0;
    double detuning_mev = 0.0;  ///< (E_mode - target) in meV
    double exact_radius_nm = 0.0;
};

PillarDesign design_for_radius(const PlanarCavity& cavity, const ModeIndex& mode, double radius_nm, double target_ev);

/// Exact inverse snapped to the grid diameter with the smallest |detuning|;
/// ties (within 1e-12 eV) go to the smaller diameter.
PillarDesign select_radius(const PlanarCavity& cavity, double target_ev, const ModeIndex& mode,
                           const std::vector<double>& diameter_grid_um);

/// Inclusive arithmetic grid start, start+step, ... <= stop (+1e-9 slack).
std::vector<double> diameter_grid(double start_um, double stop_um, double step_um);

struct ModeCurvePoint {
    double diameter_um;
    double energy_ev;
    double wavelength_nm;
};

std::vector<ModeCurvePoint> mode_curve(const PlanarCavity& cavity, const ModeIndex& mode,
                                       const std::vector<double>& diameters_um);

struct EmitterDistribution {
    enum class Kind { Uniform, Normal };
    Kind kind = Kind::Uniform;
    double low_ev = 0.0;  ///< uniform bounds
    double high_ev = 0.0;
    double mean_ev = 0.0;  ///< normal parameters
    double sigma_ev = 0.0;
    /// Gaussian post-fabrication shift of the emitter line (meV, 0 disables).
    double fabrication_shift_sigma_mev = 0.0;

    void validate() const;
};

/// Linear temperature tuning between t_min_k (where the design is made) and t_max_k.
struct TemperatureTuning {
    double t_min_k = 4.0;
    double t_max_k = 40.0;
    double qd_mev_per_k = -0.05;
    double mode_mev_per_k = -0.01;
};

struct YieldEstimate {
    double yield_fraction = 0.0;
    double standard_error = 0.0;
    double ci_low = 0.0;  ///< 95% Wilson score interval
    double ci_high = 0.0;
    std::size_t trials = 0;
    std::size_t successes = 0;
    std::size_t infeasible = 0;  ///< emitters redder than the planar resonance
};

struct YieldRequest {
    PlanarCavity cavity;
    ModeIndex mode = ModeIndex::fundamental();
    EmitterDistribution emitters;
    TemperatureTuning tuning;
    std::vector<double> diameter_grid_um;
    double q_factor = 1438.0;
    std::size_t trials = 1000;
    std::uint64_t seed = 0;
    int threads = 1;
};

/// Smallest |E_mode(T) - E_QD(T)| reachable for T in [t_min, t_max] given the
/// detuning at t_min, in eV.
double best_tuned_detuning_ev(double detuning_at_tmin_ev, const TemperatureTuning& tuning);

/// Monte-Carlo device yield. A device succeeds when some temperature in the
/// tuning range brings |E_QD - E_mode| below the mode linewidth E_mode/Q. Each trial draws from
/// its own stream (seed, trial index), so results do not depend on `threads`.
YieldEstimate estimate_yield(const YieldRequest& request);

}  // namespace dotfoundry
