#pragma once

#include "dotfoundry/fit_engine.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dotfoundry {

/// A value with its one-standard-deviation uncertainty.
struct Measured {
    double value = 0.0;
    double sigma = 0.0;
};

struct DecayTrace {
    std::vector<double> time_ps;
    std::vector<double> counts;
    std::string description;

    void validate() const;
};

struct TimeWindow {
    double start_ps = 0.0;
    double end_ps = 0.0;
};

struct LifetimeResult {
    double tau_ps = 0.0;
    double sigma_tau_ps = 0.0;
    TimeWindow window;
    /// Fit in window-relative time (t - window.start_ps).
    FitResult fit;
    std::vector<std::string> warnings;
};

/// Single-exponential lifetime. Default window: [argmax + 2 bins, last bin].
/// A first unit-weight fit seeds weights 1/max(model, 1) for a second,
/// Poisson-weighted fit. Throws FitFailure if it does not converge.
LifetimeResult fit_lifetime(const DecayTrace& trace, std::optional<TimeWindow> window = std::nullopt);

/// Lifetime ratio tau_reference / tau_cavity with first-order ratio propagation.
Measured purcell_factor(Measured tau_reference_ps, Measured tau_cavity_ps);

struct Spectrum {
    enum class Axis { WavelengthNm, EnergyEv };
    Axis axis = Axis::WavelengthNm;
    std::vector<double> x;
    std::vector<double> counts;
};

struct QFactorResult {
    double q = 0.0;
    double sigma_q = 0.0;
    double center = 0.0;  ///< in the spectrum's axis unit
    double hwhm = 0.0;
    FitResult fit;
};

/// Q = center / (2 HWHM) from a Poisson-weighted Lorentzian fit; sigma from the fit covariance.
QFactorResult q_factor(const Spectrum& spectrum);

struct SaturationResult {
    Measured saturated_counts_per_s;
    Measured saturation_power;
    FitResult fit;
};

SaturationResult fit_saturation(const std::vector<double>& powers, const std::vector<double>& counts_per_s);

struct CoincidenceHistogram {
    std::vector<double> delay_ns;  ///< bin centers
    std::vector<double> counts;
    double rep_period_ns = 0.0;
    double bin_width_ns = 0.0;

    void validate() const;
};

/// Repetition period of the 79.3 MHz pulsed excitation.
inline constexpr double kDefaultRepPeriodNs = 1000.0 / 79.3;

struct PeakArea {
    int order = 0;  ///< k in k * rep_period
    double area = 0.0;
};

struct G2Result {
    double g2 = 0.0;
    double sigma_g2 = 0.0;
    double integration_halfwidth_ns = 0.0;
    double central_area = 0.0;
    std::vector<PeakArea> side_peaks;  ///< k = -2, -1, 1, 2
};

/// g2(0) = central area / mean of the four nearest side-peak areas, each area
/// summed over bins with |delay - k T| <= halfwidth (default T/4). Sigma from
/// Poisson counting statistics on the areas.
G2Result g2_zero(const CoincidenceHistogram& hist, std::optional<double> integration_halfwidth_ns = std::nullopt);

struct PeakShape {
    enum class Kind { TwoSidedExponential, Gaussian };
    Kind kind = Kind::TwoSidedExponential;
    double width_ns = 0.5;  ///< decay time or Gaussian sigma
};

struct HistogramSimulation {
    double g2_target = 0.0;
    /// Delay of the two recapture bumps and the share of the central area they carry;
    /// the rest sits in a zero-delay peak.
    double recapture_delay_ns = 0.0;
    double recapture_fraction = 0.0;
    double rep_period_ns = kDefaultRepPeriodNs;
    PeakShape peak_shape;
    double total_pairs = 1e5;
    double bin_width_ns = 0.1;
    int periods = 4;  ///< side peaks per side
    std::uint64_t seed = 0;

    void validate() const;
};

/// Expected (noise-free) counts per bin; simulate_histogram Poisson-samples these.
CoincidenceHistogram expected_histogram(const HistogramSimulation& sim);
CoincidenceHistogram simulate_histogram(const HistogramSimulation& sim);

struct BudgetElement {
    std::string name;
    double transmission = 1.0;  ///< in (0, 1]
    double rel_err = 0.0;       ///< fractional one-sigma
};

struct EfficiencyBudget {
    std::vector<BudgetElement> elements;
    double overall_transmission = 1.0;
    double overall_rel_err = 0.0;
};

/// Product of transmissions; relative errors added in quadrature.
EfficiencyBudget efficiency_budget(std::vector<BudgetElement> elements);

struct Transmission {
    double value = 1.0;
    double rel_err = 0.0;
};

inline Transmission overall(const EfficiencyBudget& b) { return {b.overall_transmission, b.overall_rel_err}; }

/// eta = (detected / rep_rate) / transmission / (1 + g2).
Measured extraction_efficiency(double detected_counts_per_s, double rep_rate_hz, Transmission transmission,
                               Measured g2, double sigma_detected_counts_per_s = 0.0);

}  // namespace dotfoundry
