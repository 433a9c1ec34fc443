#include "dotfoundry/photon_stats.hpp"

#include "dotfoundry/errors.hpp"
#include "dotfoundry/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dotfoundry {

void DecayTrace::validate() const {
    if (time_ps.size() != counts.size()) throw ArgumentError("decay trace: time and counts lengths differ");
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (!(counts[i] >= 0.0) || !std::isfinite(counts[i])) throw ArgumentError("decay trace: counts must be >= 0");
        if (i > 0 && !(time_ps[i] > time_ps[i - 1])) throw ArgumentError("decay trace: time must increase strictly");
    }
}

LifetimeResult fit_lifetime(const DecayTrace& trace, std::optional<TimeWindow> window) {
    trace.validate();
    if (trace.counts.size() < 6) throw ArgumentError("fit_lifetime: trace too short");
    const auto peak = static_cast<std::size_t>(
        std::distance(trace.counts.begin(), std::max_element(trace.counts.begin(), trace.counts.end())));

    LifetimeResult result;
    if (window) {
        result.window = *window;
    } else {
        const std::size_t start = std::min(peak + 2, trace.counts.size() - 1);
        result.window = {trace.time_ps[start], trace.time_ps.back()};
    }
    if (!(result.window.end_ps > result.window.start_ps)) throw ArgumentError("fit_lifetime: empty fit window");
    const double t_peak = trace.time_ps[peak];
    if (t_peak >= result.window.start_ps && t_peak <= result.window.end_ps) {
        result.warnings.push_back("fit window contains the peak bin; rise and instrument response bias the lifetime");
    }

    std::vector<double> t, y;
    for (std::size_t i = 0; i < trace.counts.size(); ++i) {
        if (trace.time_ps[i] >= result.window.start_ps && trace.time_ps[i] <= result.window.end_ps) {
            t.push_back(trace.time_ps[i] - result.window.start_ps);
            y.push_back(trace.counts[i]);
        }
    }
    const ModelSpec spec{ModelKind::ExponentialDecay, "ps", "counts"};
    const auto init = initial_guess(spec, t, y);
    FitResult first = fit(spec, t, y, init);

    FitOptions weighted;
    weighted.weights.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        weighted.weights[i] = 1.0 / std::max(model_value(spec, first.parameters, t[i]), 1.0);
    }
    FitResult second = fit(spec, t, y, first.parameters, weighted);
    if (!second.converged) throw FitFailure("fit_lifetime: decay fit did not converge", second);
    result.tau_ps = second.parameters[param::lifetime];
    result.sigma_tau_ps = second.uncertainties[param::lifetime];
    result.fit = std::move(second);
    return result;
}

Measured purcell_factor(Measured tau_reference_ps, Measured tau_cavity_ps) {
    if (!(tau_cavity_ps.value > 0.0)) throw DomainError("purcell_factor: cavity lifetime must be > 0");
    if (!(tau_reference_ps.value > 0.0)) throw DomainError("purcell_factor: reference lifetime must be > 0");
    const double f = tau_reference_ps.value / tau_cavity_ps.value;
    const double rel = std::hypot(tau_reference_ps.sigma / tau_reference_ps.value, tau_cavity_ps.sigma / tau_cavity_ps.value);
    return {f, f * rel};
}

QFactorResult q_factor(const Spectrum& spectrum) {
    if (spectrum.x.size() != spectrum.counts.size()) throw ArgumentError("q_factor: axis and counts lengths differ");
    const ModelSpec spec{ModelKind::Lorentzian1D, spectrum.axis == Spectrum::Axis::WavelengthNm ? "nm" : "eV", "counts"};
    const auto init = initial_guess(spec, spectrum.x, spectrum.counts);
    FitOptions options;
    options.poisson_weights = true;
    FitResult f = fit(spec, spectrum.x, spectrum.counts, init, options);
    if (!f.converged) throw FitFailure("q_factor: Lorentzian fit did not converge", f);

    QFactorResult r;
    r.center = f.parameters[param::center];
    r.hwhm = f.parameters[param::width];
    r.q = r.center / (2.0 * r.hwhm);
    const double dq_dc = 1.0 / (2.0 * r.hwhm);
    const double dq_dw = -r.center / (2.0 * r.hwhm * r.hwhm);
    const auto& cov = f.covariance;
    const double var = dq_dc * dq_dc * cov(param::center, param::center) +
                       2.0 * dq_dc * dq_dw * cov(param::center, param::width) +
                       dq_dw * dq_dw * cov(param::width, param::width);
    r.sigma_q = std::sqrt(std::max(var, 0.0));
    r.fit = std::move(f);
    return r;
}

SaturationResult fit_saturation(const std::vector<double>& powers, const std::vector<double>& counts_per_s) {
    if (powers.size() != counts_per_s.size()) throw ArgumentError("fit_saturation: lengths differ");
    std::vector<double> distinct = powers;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 3) throw ArgumentError("fit_saturation: need at least 3 distinct powers");

    const ModelSpec spec{ModelKind::SaturationCurve, "power", "counts/s"};
    const auto init = initial_guess(spec, powers, counts_per_s);
    FitResult f = fit(spec, powers, counts_per_s, init);
    if (!f.converged) throw FitFailure("fit_saturation: fit did not converge", f);
    SaturationResult r;
    r.saturated_counts_per_s = {f.parameters[param::saturated], f.uncertainties[param::saturated]};
    r.saturation_power = {f.parameters[param::saturation_power], f.uncertainties[param::saturation_power]};
    r.fit = std::move(f);
    return r;
}

void CoincidenceHistogram::validate() const {
    if (delay_ns.size() != counts.size() || delay_ns.size() < 2) {
        throw ArgumentError("histogram: need matching delay and counts columns");
    }
    if (!(rep_period_ns > 0.0) || !(bin_width_ns > 0.0)) {
        throw ArgumentError("histogram: rep_period_ns and bin_width_ns must be > 0");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (!(counts[i] >= 0.0)) throw ArgumentError("histogram: counts must be >= 0");
        if (i > 0 && std::fabs(delay_ns[i] - delay_ns[i - 1] - bin_width_ns) > 1e-6 * bin_width_ns) {
            throw ArgumentError("histogram: bins are not uniform at index " + std::to_string(i));
        }
    }
}

G2Result g2_zero(const CoincidenceHistogram& hist, std::optional<double> integration_halfwidth_ns) {
    hist.validate();
    const double period = hist.rep_period_ns;
    const double hw = integration_halfwidth_ns.value_or(0.25 * period);
    if (!(hw > 0.0 && hw < 0.5 * period)) throw ArgumentError("g2_zero: halfwidth must be in (0, rep_period/2)");
    const double lo = hist.delay_ns.front() - 0.5 * hist.bin_width_ns;
    const double hi = hist.delay_ns.back() + 0.5 * hist.bin_width_ns;
    if (-2.0 * period - hw < lo - 1e-9 || 2.0 * period + hw > hi + 1e-9) {
        throw ArgumentError("g2_zero: histogram must cover two side peaks on each side");
    }

    const double slack = 1e-9 * hist.bin_width_ns;
    auto area = [&](int k) {
        double a = 0.0;
        const double c = k * period;
        for (std::size_t i = 0; i < hist.delay_ns.size(); ++i) {
            if (std::fabs(hist.delay_ns[i] - c) <= hw + slack) a += hist.counts[i];
        }
        return a;
    };

    G2Result r;
    r.integration_halfwidth_ns = hw;
    r.central_area = area(0);
    double side_sum = 0.0;
    for (int k : {-2, -1, 1, 2}) {
        const double a = area(k);
        r.side_peaks.push_back({k, a});
        side_sum += a;
    }
    if (!(side_sum > 0.0)) throw DegenerateDataError("g2_zero: side peaks are empty");
    const double side_mean = side_sum / 4.0;
    r.g2 = r.central_area / side_mean;
    // d g2/d A0 = 4/S, d g2/d S = -4 A0/S^2, Var(A) = A.
    r.sigma_g2 = std::sqrt(16.0 * r.central_area / (side_sum * side_sum) +
                           16.0 * r.central_area * r.central_area / (side_sum * side_sum * side_sum));
    return r;
}

void HistogramSimulation::validate() const {
    if (!(g2_target >= 0.0)) throw ArgumentError("simulate_histogram: g2_target must be >= 0");
    if (!(recapture_fraction >= 0.0 && recapture_fraction <= 1.0)) {
        throw ArgumentError("simulate_histogram: recapture fraction must be in [0, 1]");
    }
    if (!(recapture_delay_ns >= 0.0)) throw ArgumentError("simulate_histogram: recapture delay must be >= 0");
    if (!(rep_period_ns > 0.0 && bin_width_ns > 0.0 && bin_width_ns < rep_period_ns)) {
        throw ArgumentError("simulate_histogram: need 0 < bin_width_ns < rep_period_ns");
    }
    if (!(peak_shape.width_ns > 0.0)) throw ArgumentError("simulate_histogram: peak width must be > 0");
    if (!(total_pairs >= 0.0)) throw ArgumentError("simulate_histogram: total_pairs must be >= 0");
    if (periods < 3) throw ArgumentError("simulate_histogram: need at least 3 periods per side");
}

namespace {

double shape_cdf(const PeakShape& shape, double t) {
    if (shape.kind == PeakShape::Kind::Gaussian) return 0.5 * std::erfc(-t / (shape.width_ns * std::numbers::sqrt2));
    return t < 0.0 ? 0.5 * std::exp(t / shape.width_ns) : 1.0 - 0.5 * std::exp(-t / shape.width_ns);
}

}  // namespace

CoincidenceHistogram expected_histogram(const HistogramSimulation& sim) {
    sim.validate();
    CoincidenceHistogram h;
    h.rep_period_ns = sim.rep_period_ns;
    h.bin_width_ns = sim.bin_width_ns;
    const auto half_bins = static_cast<long>(std::floor((sim.periods + 0.5) * sim.rep_period_ns / sim.bin_width_ns));

    struct Peak {
        double center;
        double area;
    };
    const double side_area = sim.total_pairs / (2.0 * sim.periods + sim.g2_target);
    const double central = sim.g2_target * side_area;
    std::vector<Peak> peaks;
    for (int k = -sim.periods; k <= sim.periods; ++k) {
        if (k != 0) peaks.push_back({k * sim.rep_period_ns, side_area});
    }
    peaks.push_back({0.0, central * (1.0 - sim.recapture_fraction)});
    peaks.push_back({-sim.recapture_delay_ns, 0.5 * central * sim.recapture_fraction});
    peaks.push_back({sim.recapture_delay_ns, 0.5 * central * sim.recapture_fraction});

    for (long j = -half_bins; j <= half_bins; ++j) {
        const double center = static_cast<double>(j) * sim.bin_width_ns;
        const double a = center - 0.5 * sim.bin_width_ns;
        const double b = center + 0.5 * sim.bin_width_ns;
        double expected = 0.0;
        for (const Peak& p : peaks) {
            if (p.area > 0.0) expected += p.area * (shape_cdf(sim.peak_shape, b - p.center) - shape_cdf(sim.peak_shape, a - p.center));
        }
        h.delay_ns.push_back(center);
        h.counts.push_back(expected);
    }
    return h;
}

CoincidenceHistogram simulate_histogram(const HistogramSimulation& sim) {
    CoincidenceHistogram h = expected_histogram(sim);
    Rng rng(sim.seed);
    for (double& c : h.counts) c = static_cast<double>(rng.poisson(c));
    return h;
}

EfficiencyBudget efficiency_budget(std::vector<BudgetElement> elements) {
    if (elements.empty()) throw ArgumentError("efficiency_budget: no elements");
    EfficiencyBudget b;
    double product = 1.0, quad = 0.0;
    for (const auto& e : elements) {
        if (!(e.transmission > 0.0 && e.transmission <= 1.0)) {
            throw ArgumentError("efficiency_budget: transmission of '" + e.name + "' must be in (0, 1]");
        }
        if (!(e.rel_err >= 0.0) || !std::isfinite(e.rel_err)) {
            throw ArgumentError("efficiency_budget: rel_err of '" + e.name + "' must be >= 0");
        }
        product *= e.transmission;
        quad += e.rel_err * e.rel_err;
    }
    b.elements = std::move(elements);
    b.overall_transmission = product;
    b.overall_rel_err = std::sqrt(quad);
    return b;
}

Measured extraction_efficiency(double detected_counts_per_s, double rep_rate_hz, Transmission transmission,
                               Measured g2, double sigma_detected_counts_per_s) {
    if (!(transmission.value > 0.0)) throw DomainError("extraction_efficiency: transmission must be > 0");
    if (!(rep_rate_hz > 0.0)) throw DomainError("extraction_efficiency: repetition rate must be > 0");
    if (!(detected_counts_per_s > 0.0)) throw DomainError("extraction_efficiency: detected rate must be > 0");
    if (!(g2.value >= 0.0)) throw DomainError("extraction_efficiency: g2 must be >= 0");
    const double eta = detected_counts_per_s / rep_rate_hz / transmission.value / (1.0 + g2.value);
    const double rel = std::sqrt(transmission.rel_err * transmission.rel_err +
                                 std::pow(g2.sigma / (1.0 + g2.value), 2) +
                                 std::pow(sigma_detected_counts_per_s / detected_counts_per_s, 2));
    return {eta, eta * rel};
}

}  // namespace dotfoundry
