#include <doctest.h>

#include "dotfoundry/errors.hpp"
#include "dotfoundry/photon_stats.hpp"
#include "dotfoundry/rng.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace dotfoundry;

namespace {

// Flat background, a linear rise over the first bins, then a single exponential.
DecayTrace decay_trace(double tau_ps, double peak, double background, Rng* noise) {
    DecayTrace trace;
    const double bin = 16.0;
    const double t0 = 160.0;
    for (int i = 0; i < 700; ++i) {
        const double t = i * bin;
        double mean = background;
        if (t >= t0) mean += peak * std::exp(-(t - t0) / tau_ps);
        else if (t >= t0 - 64.0) mean += peak * (t - (t0 - 64.0)) / 64.0;
        trace.time_ps.push_back(t);
        trace.counts.push_back(noise ? static_cast<double>(noise->poisson(mean)) : mean);
    }
    return trace;
}

Spectrum lorentzian_spectrum(double center_nm, double q, double peak, double background, Rng* noise) {
    Spectrum s;
    const double hwhm = center_nm / (2.0 * q);
    for (double x = center_nm - 4.0; x <= center_nm + 4.0; x += 0.01) {
        const double d = x - center_nm;
        const double mean = background + peak * hwhm * hwhm / (d * d + hwhm * hwhm);
        s.x.push_back(x);
        s.counts.push_back(noise ? static_cast<double>(noise->poisson(mean)) : mean);
    }
    return s;
}

HistogramSimulation pulsed_source(double g2, std::uint64_t seed) {
    HistogramSimulation sim;
    sim.g2_target = g2;
    sim.recapture_delay_ns = 0.7;
    sim.recapture_fraction = 1.0;
    sim.peak_shape = {PeakShape::Kind::TwoSidedExponential, 0.35};
    sim.total_pairs = 1e5;
    sim.bin_width_ns = 0.1;
    sim.periods = 4;
    sim.seed = seed;
    return sim;
}

std::vector<BudgetElement> table_budget() {
    return {{"optical window", 0.929, 0.03},    {"objective", 0.787, 0.03},    {"beam splitter", 0.490, 0.03},
            {"beam splitter", 0.490, 0.03},     {"mirror", 0.956, 0.03},       {"spectrometer", 0.568, 0.02},
            {"fiber coupling", 0.960, 0.03},    {"detector", 0.300, 0.05}};
}

}  // namespace

TEST_CASE("noiseless lifetime is recovered exactly") {
    const LifetimeResult r = fit_lifetime(decay_trace(530.0, 5000.0, 3.0, nullptr));
    CHECK(std::fabs(r.tau_ps / 530.0 - 1.0) < 1e-6);
    CHECK(r.warnings.empty());
    CHECK(r.window.start_ps == doctest::Approx(192.0));
}

TEST_CASE("noisy lifetime and Monte-Carlo sigma") {
    std::vector<double> tau, sigma;
    for (int i = 0; i < 300; ++i) {
        Rng rng = Rng::stream(1120, i);
        const LifetimeResult r = fit_lifetime(decay_trace(1120.0, 1e4, 5.0, &rng));
        if (i == 0) CHECK(std::fabs(r.tau_ps - 1120.0) <= 3.0 * r.sigma_tau_ps);
        tau.push_back(r.tau_ps);
        sigma.push_back(r.sigma_tau_ps);
    }
    const double ratio = testing::stddev(tau) / testing::mean(sigma);
    INFO("empirical/reported = ", ratio);
    CHECK(std::fabs(ratio - 1.0) < 0.25);
    CHECK(std::fabs(testing::mean(tau) - 1120.0) < 3.0 * testing::stddev(tau) / std::sqrt(300.0));
}

TEST_CASE("a window over the peak warns") {
    const DecayTrace trace = decay_trace(530.0, 5000.0, 3.0, nullptr);
    const LifetimeResult r = fit_lifetime(trace, TimeWindow{96.0, 8000.0});
    CHECK(r.warnings.size() == 1);
    CHECK_THROWS_AS(fit_lifetime(trace, TimeWindow{500.0, 400.0}), ArgumentError);
    DecayTrace bad = trace;
    bad.time_ps[5] = bad.time_ps[4];
    CHECK_THROWS_AS(fit_lifetime(bad), ArgumentError);
}

TEST_CASE("Purcell factor") {
    const Measured f = purcell_factor({1120.0, 4.0}, {530.0, 6.0});
    CHECK(f.value == doctest::Approx(2.113207547).epsilon(1e-9));
    CHECK(f.sigma == doctest::Approx(f.value * std::hypot(4.0 / 1120.0, 6.0 / 530.0)).epsilon(1e-12));
    CHECK(std::round(f.value * 10.0) / 10.0 == 2.1);
    for (double tau : {1.0, 530.0, 1e6}) CHECK(purcell_factor({tau, 3.0}, {tau, 2.0}).value == 1.0);
    CHECK(purcell_factor({1120.0, 0.0}, {530.0, 0.0}).sigma == 0.0);
    CHECK_THROWS_AS(purcell_factor({1120.0, 4.0}, {0.0, 1.0}), DomainError);
}

TEST_CASE("Q factor from a Lorentzian mode") {
    const QFactorResult exact = q_factor(lorentzian_spectrum(915.01, 1438.0, 2000.0, 20.0, nullptr));
    CHECK(std::fabs(exact.q / 1438.0 - 1.0) < 1e-6);
    CHECK(std::fabs(exact.center - 915.01) < 1e-6);

    Spectrum doubled = lorentzian_spectrum(915.01, 1438.0, 2000.0, 20.0, nullptr);
    for (double& c : doubled.counts) c *= 2.0;
    CHECK(std::fabs(q_factor(doubled).q / exact.q - 1.0) < 1e-9);

    Rng rng(44);
    const QFactorResult noisy = q_factor(lorentzian_spectrum(915.01, 1438.0, 2000.0, 20.0, &rng));
    CHECK(std::fabs(noisy.q / 1438.0 - 1.0) < 0.01);
    CHECK(noisy.sigma_q > 0.0);
    CHECK(std::fabs(noisy.q - 1438.0) < 4.0 * noisy.sigma_q);

    // The same line on an energy axis gives the same Q.
    Spectrum energy;
    energy.axis = Spectrum::Axis::EnergyEv;
    const double e0 = 1239.842 / 915.01;
    const double hwhm = e0 / (2.0 * 1438.0);
    for (double e = e0 - 0.005; e <= e0 + 0.005; e += 1e-5) {
        energy.x.push_back(e);
        energy.counts.push_back(10.0 + 1000.0 * hwhm * hwhm / ((e - e0) * (e - e0) + hwhm * hwhm));
    }
    CHECK(std::fabs(q_factor(energy).q / 1438.0 - 1.0) < 1e-6);
}

TEST_CASE("Q factor sigma matches scatter under Poisson noise") {
    std::vector<double> q, sigma;
    for (int t = 0; t < 300; ++t) {
        Rng rng = Rng::stream(915, t);
        const QFactorResult r = q_factor(lorentzian_spectrum(915.01, 1438.0, 2000.0, 20.0, &rng));
        q.push_back(r.q);
        sigma.push_back(r.sigma_q);
    }
    const double ratio = testing::stddev(q) / testing::mean(sigma);
    INFO("empirical/reported = ", ratio);
    CHECK(std::fabs(ratio - 1.0) < 0.2);
}

TEST_CASE("saturation curve") {
    std::vector<double> powers, counts;
    for (double p = 0.1; p <= 5.0; p += 0.1) {
        powers.push_back(p);
        counts.push_back(1679000.0 * -std::expm1(-p / 0.8));
    }
    const SaturationResult exact = fit_saturation(powers, counts);
    CHECK(std::fabs(exact.saturated_counts_per_s.value / 1679000.0 - 1.0) < 1e-6);
    CHECK(std::fabs(exact.saturation_power.value / 0.8 - 1.0) < 1e-6);

    const double far = 1679000.0 * -std::expm1(-40.0 / 0.8);
    CHECK(far == doctest::Approx(1679000.0));

    std::vector<double> s, sigma;
    for (int i = 0; i < 300; ++i) {
        Rng rng = Rng::stream(1679, i);
        std::vector<double> noisy(counts);
        for (double& c : noisy) c += 5000.0 * rng.normal();
        const SaturationResult r = fit_saturation(powers, noisy);
        s.push_back(r.saturated_counts_per_s.value);
        sigma.push_back(r.saturated_counts_per_s.sigma);
    }
    const double ratio = testing::stddev(s) / testing::mean(sigma);
    INFO("empirical/reported = ", ratio);
    CHECK(std::fabs(ratio - 1.0) < 0.25);
    CHECK_THROWS_AS(fit_saturation({1.0, 1.0, 2.0}, {1.0, 1.0, 2.0}), ArgumentError);
}

TEST_CASE("g2 from histograms") {
    HistogramSimulation sim = pulsed_source(0.0, 1);
    CoincidenceHistogram empty_center = expected_histogram(sim);
    for (std::size_t i = 0; i < empty_center.delay_ns.size(); ++i) {
        if (std::fabs(empty_center.delay_ns[i]) <= 0.25 * empty_center.rep_period_ns) empty_center.counts[i] = 0.0;
    }
    const G2Result zero = g2_zero(empty_center);
    CHECK(zero.g2 == 0.0);
    CHECK(zero.side_peaks.size() == 4);

    sim.g2_target = 1.0;
    sim.recapture_fraction = 0.0;
    const CoincidenceHistogram flat = expected_histogram(sim);
    CHECK(g2_zero(flat).g2 == doctest::Approx(1.0).epsilon(1e-6));
    for (int seed = 0; seed < 20; ++seed) {
        sim.seed = seed;
        const G2Result r = g2_zero(simulate_histogram(sim));
        CHECK(std::fabs(r.g2 - 1.0) < 4.0 * r.sigma_g2);
    }

    CoincidenceHistogram short_range = flat;
    short_range.delay_ns.resize(10);
    short_range.counts.resize(10);
    CHECK_THROWS_AS(g2_zero(short_range), ArgumentError);
    CHECK_THROWS_AS(g2_zero(flat, 0.6 * flat.rep_period_ns), ArgumentError);
    CoincidenceHistogram silent = flat;
    std::fill(silent.counts.begin(), silent.counts.end(), 0.0);
    CHECK_THROWS_AS(g2_zero(silent), DegenerateDataError);
}

TEST_CASE("g2 closed loop over 100 seeds") {
    for (double target : {0.144, 0.205}) {
        CAPTURE(target);
        std::vector<double> g2, sigma;
        int within = 0;
        for (int seed = 0; seed < 100; ++seed) {
            const G2Result r = g2_zero(simulate_histogram(pulsed_source(target, 1000u + seed)));
            g2.push_back(r.g2);
            sigma.push_back(r.sigma_g2);
            if (std::fabs(r.g2 - target) <= 3.0 * r.sigma_g2) ++within;
        }
        CHECK(std::fabs(testing::mean(g2) - target) < 3.0 * testing::mean(sigma) / 10.0);
        CHECK(within >= 95);
        CHECK(std::fabs(testing::stddev(g2) / testing::mean(sigma) - 1.0) < 0.25);
    }
}

TEST_CASE("g2 scale invariance") {
    const CoincidenceHistogram base = simulate_histogram(pulsed_source(0.205, 5));
    const G2Result r1 = g2_zero(base);
    for (int k : {2, 9}) {
        CoincidenceHistogram scaled = base;
        for (double& c : scaled.counts) c *= k;
        const G2Result rk = g2_zero(scaled);
        CHECK(rk.g2 == doctest::Approx(r1.g2).epsilon(1e-12));
        CHECK(rk.sigma_g2 == doctest::Approx(r1.sigma_g2 / std::sqrt(k)).epsilon(1e-9));
    }
    // Monte-Carlo: sigma tracks the scatter at two exposure levels.
    for (double pairs : {2.5e4, 1e5}) {
        std::vector<double> g2, sigma;
        for (int seed = 0; seed < 200; ++seed) {
            HistogramSimulation sim = pulsed_source(0.205, 7000u + seed);
            sim.total_pairs = pairs;
            const G2Result r = g2_zero(simulate_histogram(sim));
            g2.push_back(r.g2);
            sigma.push_back(r.sigma_g2);
        }
        CHECK(std::fabs(testing::stddev(g2) / testing::mean(sigma) - 1.0) < 0.15);
    }
}

TEST_CASE("simulation is deterministic and validated") {
    const HistogramSimulation sim = pulsed_source(0.205, 99);
    CHECK(simulate_histogram(sim).counts == simulate_histogram(sim).counts);
    HistogramSimulation other = sim;
    other.seed = 100;
    CHECK(simulate_histogram(other).counts != simulate_histogram(sim).counts);
    HistogramSimulation bad = sim;
    bad.g2_target = -0.1;
    CHECK_THROWS_AS(simulate_histogram(bad), ArgumentError);
    bad = sim;
    bad.recapture_fraction = 1.5;
    CHECK_THROWS_AS(simulate_histogram(bad), ArgumentError);
    bad = sim;
    bad.periods = 2;
    CHECK_THROWS_AS(simulate_histogram(bad), ArgumentError);
}

TEST_CASE("efficiency budget") {
    const EfficiencyBudget b = efficiency_budget(table_budget());
    double product = 1.0, squares = 0.0;
    for (const auto& e : b.elements) {
        product *= e.transmission;
        squares += e.rel_err * e.rel_err;
    }
    CHECK(b.overall_transmission == product);
    CHECK(b.overall_rel_err == std::sqrt(squares));
    CHECK(std::fabs(b.overall_transmission - 0.027) <= 0.001);
    CHECK(std::fabs(100.0 * b.overall_rel_err - 9.1) <= 0.2);

    const EfficiencyBudget one = efficiency_budget({{"only", 0.42, 0.07}});
    CHECK(one.overall_transmission == 0.42);
    CHECK(one.overall_rel_err == 0.07);
    auto exact = table_budget();
    for (auto& e : exact) e.rel_err = 0.0;
    CHECK(efficiency_budget(exact).overall_rel_err == 0.0);

    CHECK_THROWS_AS(efficiency_budget({}), ArgumentError);
    CHECK_THROWS_AS(efficiency_budget({{"x", 0.0, 0.01}}), ArgumentError);
    CHECK_THROWS_AS(efficiency_budget({{"x", 1.2, 0.01}}), ArgumentError);
    CHECK_THROWS_AS(efficiency_budget({{"x", 0.5, -0.01}}), ArgumentError);
}

TEST_CASE("extraction efficiency") {
    const double rep = 79.3e6;
    const Measured a = extraction_efficiency(1679000.0, rep, {0.027, 0.091}, {0.205, 0.010});
    const Measured b = extraction_efficiency(1657000.0, rep, {0.027, 0.091}, {0.144, 0.012});
    CHECK(std::fabs(a.value - 0.65) <= 0.01);
    CHECK(std::fabs(b.value - 0.68) <= 0.01);
    CHECK(a.sigma == doctest::Approx(a.value * std::hypot(0.091, 0.010 / 1.205)).epsilon(1e-9));
    CHECK(extraction_efficiency(rep, rep, {1.0, 0.0}, {0.0, 0.0}).value == 1.0);

    double previous = INFINITY;
    for (double g2 = 0.0; g2 <= 1.0; g2 += 0.05) {
        const double eta = extraction_efficiency(1679000.0, rep, {0.027, 0.0}, {g2, 0.0}).value;
        CHECK(eta < previous);
        previous = eta;
    }
    previous = INFINITY;
    for (double t = 0.02; t <= 0.05; t += 0.002) {
        const double eta = extraction_efficiency(1679000.0, rep, {t, 0.0}, {0.2, 0.0}).value;
        CHECK(eta < previous);
        previous = eta;
    }
    CHECK_THROWS_AS(extraction_efficiency(1.0, rep, {0.0, 0.0}, {0.1, 0.0}), DomainError);
    CHECK_THROWS_AS(extraction_efficiency(1.0, rep, {0.1, 0.0}, {-0.1, 0.0}), DomainError);
}
