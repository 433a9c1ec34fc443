#include "dotfoundry/cavity_design.hpp"

#include "dotfoundry/errors.hpp"
#include "dotfoundry/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <thread>

namespace dotfoundry {

namespace {

constexpr double kSeriesLimit = 15.0;

double bessel_series(int order, double x) {
    const double half = 0.5 * x;
    const double q = -half * half;
    double term = 1.0;
    for (int k = 1; k <= order; ++k) term *= half / k;
    double sum = term;
    for (int k = 1; k < 500; ++k) {
        term *= q / (static_cast<double>(k) * (k + order));
        sum += term;
        if (std::fabs(term) < 1e-17 * std::fabs(sum) && k > half) break;
    }
    return sum;
}

// Hankel expansion J_n(x) ~ sqrt(2/(pi x)) (P cos w - Q sin w), w = x - n pi/2 - pi/4.
double bessel_asymptotic(int order, double x) {
    const double mu = 4.0 * order * order;
    const double z = 8.0 * x;
    double p = 1.0, q = 0.0;
    double term = 1.0;
    double last = std::numeric_limits<double>::infinity();
    for (int k = 1; k < 60; ++k) {
        term *= (mu - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (k * z);
        if (std::fabs(term) > last) break;  // asymptotic series started to diverge
        last = std::fabs(term);
        if (k % 2 == 1) {
            q += ((k / 2) % 2 == 0 ? 1.0 : -1.0) * term;
        } else {
            p += ((k / 2) % 2 == 1 ? -1.0 : 1.0) * term;
        }
        if (last < 1e-17) break;
    }
    const double w = x - (0.5 * order + 0.25) * std::numbers::pi;
    return std::sqrt(2.0 / (std::numbers::pi * x)) * (p * std::cos(w) - q * std::sin(w));
}

}  // namespace

double bessel_j(int order, double x) {
    if (order < 0) throw DomainError("bessel_j: order must be >= 0");
    if (!(x >= 0.0)) throw DomainError("bessel_j: x must be >= 0");
    if (x < kSeriesLimit) return bessel_series(order, x);
    double j0 = bessel_asymptotic(0, x);
    if (order == 0) return j0;
    double j1 = bessel_asymptotic(1, x);
    for (int n = 1; n < order; ++n) {
        const double next = 2.0 * n / x * j1 - j0;
        j0 = j1;
        j1 = next;
    }
    return j1;
}

double bessel_zero(int order, int index) {
    if (order < 0 || order > 10 || index < 0 || index > 10) {
        throw DomainError("bessel_zero: supported range is order, index in [0, 10]");
    }
    // Zeros of J_n lie above n; consecutive zeros are more than pi apart, so a
    // 0.05 scan cannot step over one.
    constexpr double step = 0.05;
    double a = std::max(static_cast<double>(order), step);
    double fa = bessel_j(order, a);
    int found = -1;
    for (;;) {
        const double b = a + step;
        const double fb = bessel_j(order, b);
        if ((fa < 0.0) != (fb < 0.0) || fb == 0.0) {
            if (++found == index) {
                double lo = a, hi = b, flo = fa;
                for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    const double fm = bessel_j(order, mid);
                    if (fm == 0.0) return mid;
                    if ((fm < 0.0) == (flo < 0.0)) {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                return 0.5 * (lo + hi);
            }
        }
        a = b;
        fa = fb;
    }
}

void PlanarCavity::validate() const {
    if (!(e2d_ev > 0.0)) throw ArgumentError("cavity: e2d_ev must be > 0");
    if (!(epsilon_eff > 1.0)) throw ArgumentError("cavity: epsilon_eff must be > 1");
    if (!(stopband_nm.low_nm < stopband_nm.high_nm)) throw ArgumentError("cavity: stopband low must be < high");
}

ModeIndex ModeIndex::he(int n_phi, int n_r) {
    if (n_phi < 1) throw DomainError("mode: n_phi must be >= 1 for HE modes");
    if (n_r < 0) throw DomainError("mode: n_r must be >= 0");
    return {n_phi, n_r, bessel_zero(n_phi - 1, n_r)};
}

double mode_energy(const PlanarCavity& cavity, const ModeIndex& mode, double radius_nm) {
    if (!(radius_nm > 0.0)) throw DomainError("mode_energy: radius must be > 0");
    const double k = kHbarC_eVnm * mode.chi / radius_nm;
    return std::sqrt(cavity.e2d_ev * cavity.e2d_ev + k * k / cavity.epsilon_eff);
}

double exact_radius(const PlanarCavity& cavity, const ModeIndex& mode, double target_ev) {
    if (!(target_ev > cavity.e2d_ev)) {
        throw InfeasibleTargetError("target " + std::to_string(target_ev) + " eV is not above the planar resonance " +
                                    std::to_string(cavity.e2d_ev) + " eV");
    }
    // (t - E)(t + E) avoids cancellation for targets close to E2D.
    const double gap = (target_ev - cavity.e2d_ev) * (target_ev + cavity.e2d_ev);
    return kHbarC_eVnm * mode.chi / std::sqrt(cavity.epsilon_eff * gap);
}

PillarDesign design_for_radius(const PlanarCavity& cavity, const ModeIndex& mode, double radius_nm, double target_ev) {
    PillarDesign d;
    d.radius_nm = radius_nm;
    d.diameter_um = 2.0 * radius_nm / 1000.0;
    d.mode = mode;
    d.e_mode_ev = mode_energy(cavity, mode, radius_nm);
    d.lambda_mode_nm = energy_to_wavelength_nm(d.e_mode_ev);
    d.target_ev = target_ev;
    d.detuning_mev = 1000.0 * (d.e_mode_ev - target_ev);
    return d;
}

PillarDesign select_radius(const PlanarCavity& cavity, double target_ev, const ModeIndex& mode,
                           const std::vector<double>& diameter_grid_um) {
    if (diameter_grid_um.empty()) throw ArgumentError("select_radius: empty diameter grid");
    const double r_exact = exact_radius(cavity, mode, target_ev);
    std::vector<double> grid = diameter_grid_um;
    std::sort(grid.begin(), grid.end());
    if (!(grid.front() > 0.0)) throw ArgumentError("select_radius: grid diameters must be > 0");

    double best_d = grid.front();
    double best_abs = std::numeric_limits<double>::infinity();
    for (double d : grid) {
        const double detuning = std::fabs(mode_energy(cavity, mode, 500.0 * d) - target_ev);
        if (detuning < best_abs - 1e-12) {
            best_abs = detuning;
            best_d = d;
        }
    }
    PillarDesign design = design_for_radius(cavity, mode, 500.0 * best_d, target_ev);
    design.diameter_um = best_d;
    design.exact_radius_nm = r_exact;
    return design;
}

std::vector<double> diameter_grid(double start_um, double stop_um, double step_um) {
    if (!(step_um > 0.0) || !(start_um > 0.0) || stop_um < start_um) {
        throw ArgumentError("diameter_grid: need 0 < start <= stop and step > 0");
    }
    std::vector<double> grid;
    for (long k = 0;; ++k) {
        const double d = start_um + static_cast<double>(k) * step_um;
        if (d > stop_um + 1e-9) break;
        grid.push_back(d);
    }
    return grid;
}

std::vector<ModeCurvePoint> mode_curve(const PlanarCavity& cavity, const ModeIndex& mode,
                                       const std::vector<double>& diameters_um) {
    std::vector<ModeCurvePoint> curve;
    curve.reserve(diameters_um.size());
    for (double d : diameters_um) {
        const double e = mode_energy(cavity, mode, 500.0 * d);
        curve.push_back({d, e, energy_to_wavelength_nm(e)});
    }
    return curve;
}

void EmitterDistribution::validate() const {
    if (kind == Kind::Uniform && !(low_ev > 0.0 && high_ev >= low_ev)) {
        throw ArgumentError("emitter distribution: uniform needs 0 < low_ev <= high_ev");
    }
    if (kind == Kind::Normal && !(mean_ev > 0.0 && sigma_ev >= 0.0)) {
        throw ArgumentError("emitter distribution: normal needs mean_ev > 0 and sigma_ev >= 0");
    }
    if (!(fabrication_shift_sigma_mev >= 0.0)) {
        throw ArgumentError("emitter distribution: fabrication_shift_sigma_mev must be >= 0");
    }
}

double best_tuned_detuning_ev(double detuning_at_tmin_ev, const TemperatureTuning& tuning) {
    const double slope_ev_per_k = 1e-3 * (tuning.mode_mev_per_k - tuning.qd_mev_per_k);
    const double at_max = detuning_at_tmin_ev + slope_ev_per_k * (tuning.t_max_k - tuning.t_min_k);
    if ((detuning_at_tmin_ev <= 0.0) != (at_max <= 0.0)) return 0.0;
    return std::min(std::fabs(detuning_at_tmin_ev), std::fabs(at_max));
}

YieldEstimate estimate_yield(const YieldRequest& req) {
    req.cavity.validate();
    req.emitters.validate();
    if (req.trials < 1) throw ArgumentError("estimate_yield: trials must be >= 1");
    if (req.diameter_grid_um.empty()) throw ArgumentError("estimate_yield: empty diameter grid");
    if (!(req.q_factor > 0.0)) throw ArgumentError("estimate_yield: q_factor must be > 0");
    if (!(req.tuning.t_max_k >= req.tuning.t_min_k)) throw ArgumentError("estimate_yield: t_max_k < t_min_k");

    // 0 = fail, 1 = success, 2 = infeasible target
    std::vector<unsigned char> outcome(req.trials, 0);
    auto run = [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            Rng rng = Rng::stream(req.seed, t);
            const auto& dist = req.emitters;
            const double e_qd = dist.kind == EmitterDistribution::Kind::Uniform
                                    ? rng.uniform(dist.low_ev, dist.high_ev)
                                    : rng.normal(dist.mean_ev, dist.sigma_ev);
            const double shift_ev = 1e-3 * dist.fabrication_shift_sigma_mev * rng.normal();
            if (!(e_qd > req.cavity.e2d_ev)) {
                outcome[t] = 2;
                continue;
            }
            const PillarDesign design = select_radius(req.cavity, e_qd, req.mode, req.diameter_grid_um);
            const double detuning = design.e_mode_ev - (e_qd + shift_ev);
            const double linewidth = design.e_mode_ev / req.q_factor;
            outcome[t] = best_tuned_detuning_ev(detuning, req.tuning) < linewidth ? 1 : 0;
        }
    };
    const std::size_t threads = static_cast<std::size_t>(std::clamp(req.threads, 1, 64));
    if (threads == 1) {
        run(0, req.trials);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (req.trials + threads - 1) / threads;
        for (std::size_t i = 0; i < threads; ++i) {
            const std::size_t begin = i * chunk;
            const std::size_t end = std::min(req.trials, begin + chunk);
            if (begin < end) pool.emplace_back(run, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    YieldEstimate est;
    est.trials = req.trials;
    est.successes = static_cast<std::size_t>(std::count(outcome.begin(), outcome.end(), 1));
    est.infeasible = static_cast<std::size_t>(std::count(outcome.begin(), outcome.end(), 2));
    const double n = static_cast<double>(req.trials);
    const double p = static_cast<double>(est.successes) / n;
    est.yield_fraction = p;
    est.standard_error = std::sqrt(p * (1.0 - p) / n);
    constexpr double z = 1.959963984540054;
    const double denom = 1.0 + z * z / n;
    const double center = (p + z * z / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
    est.ci_low = est.successes == 0 ? 0.0 : std::max(0.0, center - half);
    est.ci_high = est.successes == req.trials ? 1.0 : std::min(1.0, center + half);
    return est;
}

}  // namespace dotfoundry
