#include "dotfoundry/fit_engine.hpp"

#include "dotfoundry/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace dotfoundry {

namespace {

// Positive parameters are clamped to this floor while iterating.
constexpr double kPositiveFloor = 1e-12;
constexpr double kMaxDamping = 1e20;

std::vector<double> resolve_weights(std::span<const double> y, const FitOptions& options) {
    if (!options.weights.empty()) {
        if (options.weights.size() != y.size()) throw ArgumentError("fit: weights length differs from data length");
        for (double w : options.weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw ArgumentError("fit: weights must be finite and non-negative");
        }
        return options.weights;
    }
    std::vector<double> w(y.size(), 1.0);
    if (options.poisson_weights) {
        for (std::size_t i = 0; i < y.size(); ++i) w[i] = 1.0 / std::max(y[i], 1.0);
    }
    return w;
}

void clamp_parameters(const ModelSpec& spec, std::vector<double>& p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (spec.strictly_positive(i) && p[i] < kPositiveFloor) p[i] = kPositiveFloor;
    }
}

double weighted_rss(const ModelSpec& spec, std::span<const double> p, std::span<const double> x,
                    std::span<const double> y, const std::vector<double>& w, std::vector<double>& residual) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        residual[i] = y[i] - model_value(spec, p, x[i]);
        s += w[i] * residual[i] * residual[i];
    }
    return s;
}

Eigen::MatrixXd jacobian(const ModelSpec& spec, const std::vector<double>& p, std::span<const double> x) {
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto m = static_cast<Eigen::Index>(p.size());
    Eigen::MatrixXd jac(n, m);
    std::vector<double> shifted = p;
    for (Eigen::Index j = 0; j < m; ++j) {
        const double h = std::max(1e-7 * std::fabs(p[j]), 1e-9);
        shifted[j] = p[j] + h;
        const double actual = shifted[j] - p[j];
        for (Eigen::Index i = 0; i < n; ++i) {
            jac(i, j) = (model_value(spec, shifted, x[i]) - model_value(spec, p, x[i])) / actual;
        }
        shifted[j] = p[j];
    }
    return jac;
}

double gradient_measure(const Eigen::MatrixXd& normal, const Eigen::VectorXd& gradient, double rss) {
    if (rss <= 0.0) return 0.0;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < gradient.size(); ++i) {
        const double scale = std::sqrt(normal(i, i) * rss);
        if (scale > 0.0) worst = std::max(worst, std::fabs(gradient(i)) / scale);
    }
    return worst;
}

void require_sample_count(const ModelSpec& spec, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ArgumentError("fit: x and y lengths differ");
    if (x.size() < spec.parameter_count() + 1) {
        throw ArgumentError("fit: need at least " + std::to_string(spec.parameter_count() + 1) + " samples, got " +
                            std::to_string(x.size()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ArgumentError("fit: non-finite sample");
    }
}

}  // namespace

std::string_view model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::Gaussian1D: return "Gaussian1D";
        case ModelKind::Lorentzian1D: return "Lorentzian1D";
        case ModelKind::ExponentialDecay: return "ExponentialDecay";
        case ModelKind::SaturationCurve: return "SaturationCurve";
    }
    return "unknown";
}

std::size_t ModelSpec::parameter_count() const {
    switch (kind) {
        case ModelKind::Gaussian1D:
        case ModelKind::Lorentzian1D: return 4;
        case ModelKind::ExponentialDecay: return 3;
        case ModelKind::SaturationCurve: return 2;
    }
    return 0;
}

std::vector<std::string> ModelSpec::parameter_names() const {
    switch (kind) {
        case ModelKind::Gaussian1D: return {"amplitude", "center", "sigma", "offset"};
        case ModelKind::Lorentzian1D: return {"amplitude", "center", "hwhm", "offset"};
        case ModelKind::ExponentialDecay: return {"amplitude", "lifetime", "offset"};
        case ModelKind::SaturationCurve: return {"saturated", "saturation_power"};
    }
    return {};
}

std::vector<std::string> ModelSpec::parameter_units() const {
    switch (kind) {
        case ModelKind::Gaussian1D:
        case ModelKind::Lorentzian1D: return {y_unit, x_unit, x_unit, y_unit};
        case ModelKind::ExponentialDecay: return {y_unit, x_unit, y_unit};
        case ModelKind::SaturationCurve: return {y_unit, x_unit};
    }
    return {};
}

bool ModelSpec::strictly_positive(std::size_t index) const {
    switch (kind) {
        case ModelKind::Gaussian1D:
        case ModelKind::Lorentzian1D: return index == param::width;
        case ModelKind::ExponentialDecay: return index == param::lifetime;
        case ModelKind::SaturationCurve: return index == param::saturation_power;
    }
    return false;
}

void check_parameters(const ModelSpec& spec, std::span<const double> params) {
    if (params.size() != spec.parameter_count()) {
        throw ArgumentError(std::string(model_kind_name(spec.kind)) + " expects " +
                            std::to_string(spec.parameter_count()) + " parameters, got " +
                            std::to_string(params.size()));
    }
    const auto names = spec.parameter_names();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!std::isfinite(params[i])) throw DomainError("parameter '" + names[i] + "' is not finite");
        if (spec.strictly_positive(i) && !(params[i] > 0.0)) {
            throw DomainError("parameter '" + names[i] + "' must be > 0, got " + std::to_string(params[i]));
        }
    }
}

double model_value(const ModelSpec& spec, std::span<const double> p, double x) {
    switch (spec.kind) {
        case ModelKind::Gaussian1D: {
            const double u = (x - p[1]) / p[2];
            return p[3] + p[0] * std::exp(-0.5 * u * u);
        }
        case ModelKind::Lorentzian1D: {
            const double d = x - p[1];
            const double w2 = p[2] * p[2];
            return p[3] + p[0] * w2 / (d * d + w2);
        }
        case ModelKind::ExponentialDecay: return p[2] + p[0] * std::exp(-x / p[1]);
        case ModelKind::SaturationCurve: return p[0] * -std::expm1(-x / p[1]);
    }
    return 0.0;
}

std::vector<double> evaluate_model(const ModelSpec& spec, std::span<const double> params,
                                   std::span<const double> x) {
    check_parameters(spec, params);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = model_value(spec, params, x[i]);
    return y;
}

FitResult fit(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
              std::span<const double> init, const FitOptions& options) {
    require_sample_count(spec, x, y);
    check_parameters(spec, init);
    const std::vector<double> w = resolve_weights(y, options);
    const auto n = x.size();
    const auto m = spec.parameter_count();
    const Eigen::Map<const Eigen::VectorXd> wv(w.data(), static_cast<Eigen::Index>(n));

    double data_scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) data_scale += w[i] * y[i] * y[i];
    // Below this the residual is at rounding level and the gradient test is moot.
    const double exact_rss = 1e-20 * std::max(data_scale, std::numeric_limits<double>::min());

    std::vector<double> p(init.begin(), init.end());
    clamp_parameters(spec, p);
    std::vector<double> residual(n), trial_residual(n);
    double rss = weighted_rss(spec, p, x, y, w, residual);

    FitResult result;
    result.spec = spec;
    double lambda = options.initial_damping;
    double growth = 2.0;
    int iteration = 0;
    bool converged = false;

    while (iteration < options.max_iterations) {
        ++iteration;
        const Eigen::MatrixXd jac = jacobian(spec, p, x);
        const Eigen::Map<const Eigen::VectorXd> r(residual.data(), static_cast<Eigen::Index>(n));
        const Eigen::MatrixXd normal = jac.transpose() * wv.asDiagonal() * jac;
        const Eigen::VectorXd gradient = jac.transpose() * wv.asDiagonal() * r;
        for (Eigen::Index i = 0; i < normal.rows(); ++i) {
            if (!(normal(i, i) > 0.0)) {
                throw DegenerateFitError("fit: parameter '" + spec.parameter_names()[i] +
                                         "' has no influence on the model");
            }
        }
        if (rss <= exact_rss) {
            converged = true;
            break;
        }

        bool accepted = false;
        std::vector<double> trial(m);
        double trial_rss = rss;
        double gain = 0.0;
        while (lambda <= kMaxDamping) {
            Eigen::MatrixXd damped = normal;
            damped.diagonal() += lambda * normal.diagonal();
            Eigen::VectorXd step = damped.ldlt().solve(gradient);
            for (std::size_t j = 0; j < m; ++j) trial[j] = p[j] + step(static_cast<Eigen::Index>(j));
            clamp_parameters(spec, trial);
            for (std::size_t j = 0; j < m; ++j) step(static_cast<Eigen::Index>(j)) = trial[j] - p[j];
            bool finite = std::all_of(trial.begin(), trial.end(), [](double v) { return std::isfinite(v); });
            trial_rss = finite ? weighted_rss(spec, trial, x, y, w, trial_residual)
                               : std::numeric_limits<double>::infinity();
            if (trial_rss < rss) {
                // Ratio of actual to linearly predicted decrease steers the damping.
                const double predicted = 2.0 * step.dot(gradient) - step.dot(normal * step);
                gain = predicted > 0.0 ? (rss - trial_rss) / predicted : 0.0;
                accepted = true;
                break;
            }
            lambda *= growth;
            growth *= 2.0;
        }
        if (!accepted) {
            // No damped step lowers the objective: the point is stationary to working precision.
            converged = gradient_measure(normal, gradient, rss) <= options.gradient_tolerance;
            break;
        }
        double step_norm = 0.0, param_norm = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            step_norm += (trial[j] - p[j]) * (trial[j] - p[j]);
            param_norm += p[j] * p[j];
        }
        const double relative_decrease = (rss - trial_rss) / rss;
        const double relative_step = std::sqrt(step_norm) / std::max(std::sqrt(param_norm), 1e-300);

        p = trial;
        residual.swap(trial_residual);
        rss = trial_rss;
        lambda = std::max(lambda * std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * gain - 1.0, 3)), 1e-15);
        growth = 2.0;

        if (rss <= exact_rss) {
            converged = true;
            break;
        }
        if (relative_decrease < options.objective_tolerance || relative_step < options.step_tolerance) {
            const Eigen::MatrixXd jac_new = jacobian(spec, p, x);
            const Eigen::Map<const Eigen::VectorXd> r_new(residual.data(), static_cast<Eigen::Index>(n));
            const Eigen::MatrixXd normal_new = jac_new.transpose() * wv.asDiagonal() * jac_new;
            const Eigen::VectorXd gradient_new = jac_new.transpose() * wv.asDiagonal() * r_new;
            if (gradient_measure(normal_new, gradient_new, rss) <= options.gradient_tolerance) {
                converged = true;
                break;
            }
        }
    }

    const Eigen::MatrixXd jac = jacobian(spec, p, x);
    const Eigen::Map<const Eigen::VectorXd> r(residual.data(), static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd normal = jac.transpose() * wv.asDiagonal() * jac;
    const Eigen::VectorXd gradient = jac.transpose() * wv.asDiagonal() * r;

    // Singularity test on the unit-diagonal scaled normal matrix.
    Eigen::VectorXd inv_scale(static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < normal.rows(); ++i) {
        if (!(normal(i, i) > 0.0)) {
            throw DegenerateFitError("fit: parameter '" + spec.parameter_names()[i] + "' has no influence on the model");
        }
        inv_scale(i) = 1.0 / std::sqrt(normal(i, i));
    }
    const Eigen::MatrixXd scaled = inv_scale.asDiagonal() * normal * inv_scale.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    const double min_eig = eig.eigenvalues().minCoeff();
    const double max_eig = eig.eigenvalues().maxCoeff();
    if (!(min_eig > 1e-13 * max_eig)) {
        throw DegenerateFitError("fit: singular normal matrix (condition " +
                                 std::to_string(max_eig / std::max(min_eig, 0.0)) + ")");
    }
    const Eigen::MatrixXd scaled_inverse = scaled.ldlt().solve(Eigen::MatrixXd::Identity(scaled.rows(), scaled.cols()));
    Eigen::MatrixXd inverse = inv_scale.asDiagonal() * scaled_inverse * inv_scale.asDiagonal();

    const double s2 = rss / static_cast<double>(n - m);
    Eigen::MatrixXd covariance = s2 * inverse;
    covariance = 0.5 * (covariance + covariance.transpose()).eval();

    result.parameters = p;
    result.covariance = covariance;
    result.uncertainties.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        result.uncertainties[j] = std::sqrt(std::max(covariance(jj, jj), 0.0));
    }
    result.residual_sum_squares = rss;
    result.gradient_norm = rss <= exact_rss ? 0.0 : gradient_measure(normal, gradient, rss);
    result.converged = converged;
    result.iterations = iteration;
    return result;
}

namespace {

// Second moment of a profile over its above-half-maximum core, in units of
// the width parameter squared.
double gaussian_core_moment() {
    const double a = std::sqrt(2.0 * std::numbers::ln2);
    const double mass = std::sqrt(2.0 * std::numbers::pi) * std::erf(a / std::numbers::sqrt2);
    return 1.0 - 2.0 * a * std::exp(-0.5 * a * a) / mass;
}

double lorentzian_core_moment() { return 4.0 / std::numbers::pi - 1.0; }

std::vector<std::size_t> sorted_order(std::span<const double> x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    return order;
}

std::vector<double> guess_peak(const ModelSpec& spec, std::span<const double> x, std::span<const double> y) {
    const auto order = sorted_order(x);
    std::size_t imax = 0;  // position in sorted order
    double ymin = y[order[0]];
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (y[order[k]] > y[order[imax]]) imax = k;
        ymin = std::min(ymin, y[order[k]]);
    }
    const double ymax = y[order[imax]];
    const double amplitude = ymax - ymin;
    const double center = x[order[imax]];
    const double half = ymin + 0.5 * amplitude;

    std::size_t left = imax, right = imax;
    while (left > 0 && y[order[left - 1]] >= half) --left;
    while (right + 1 < order.size() && y[order[right + 1]] >= half) ++right;

    double m0 = 0.0, m2 = 0.0;
    for (std::size_t k = left; k <= right; ++k) {
        const double excess = y[order[k]] - ymin;
        const double d = x[order[k]] - center;
        m0 += excess;
        m2 += excess * d * d;
    }
    const double core = spec.kind == ModelKind::Gaussian1D ? gaussian_core_moment() : lorentzian_core_moment();
    double width = (right > left && m0 > 0.0) ? std::sqrt(m2 / m0 / core) : 0.0;
    if (!(width > 0.0)) {
        // Peak narrower than the sampling: fall back to the local spacing.
        const std::size_t k = imax + 1 < order.size() ? imax + 1 : imax - 1;
        width = std::fabs(x[order[k]] - center);
    }
    return {amplitude, center, width, ymin};
}

std::vector<double> guess_decay(std::span<const double> x, std::span<const double> y) {
    const double ymin = *std::min_element(y.begin(), y.end());
    const double ymax = *std::max_element(y.begin(), y.end());
    const double floor = ymin + 0.1 * (ymax - ymin);
    // Weighted log-linear regression, weight ~ counts above background.
    double sw = 0.0, st = 0.0, sl = 0.0, stt = 0.0, stl = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double excess = y[i] - ymin;
        if (y[i] < floor || excess <= 0.0) continue;
        const double l = std::log(excess);
        sw += excess;
        st += excess * x[i];
        sl += excess * l;
        stt += excess * x[i] * x[i];
        stl += excess * x[i] * l;
        ++used;
    }
    const double det = sw * stt - st * st;
    if (used < 2 || !(det > 0.0)) throw DegenerateDataError("initial_guess: too few decaying samples above background");
    const double slope = (sw * stl - st * sl) / det;
    const double intercept = (sl - slope * st) / sw;
    if (!(slope < 0.0)) throw DegenerateDataError("initial_guess: data do not decay");
    return {std::exp(intercept), -1.0 / slope, ymin};
}

std::vector<double> guess_saturation(std::span<const double> x, std::span<const double> y) {
    const auto order = sorted_order(x);
    const double top = *std::max_element(y.begin(), y.end());
    const double target = (1.0 - std::exp(-1.0)) * top;
    double prev_x = 0.0, prev_y = 0.0;
    double p_sat = 0.0;
    for (std::size_t idx : order) {
        if (y[idx] >= target) {
            const double dy = y[idx] - prev_y;
            p_sat = dy > 0.0 ? prev_x + (target - prev_y) / dy * (x[idx] - prev_x) : x[idx];
            break;
        }
        prev_x = x[idx];
        prev_y = y[idx];
    }
    if (!(p_sat > 0.0)) {
        for (std::size_t idx : order) {
            if (x[idx] > 0.0) {
                p_sat = x[idx];
                break;
            }
        }
    }
    if (!(p_sat > 0.0)) throw DegenerateDataError("initial_guess: saturation data need positive powers");
    return {top, p_sat};
}

}  // namespace

std::vector<double> initial_guess(const ModelSpec& spec, std::span<const double> x, std::span<const double> y) {
    if (x.empty() || x.size() != y.size()) throw ArgumentError("initial_guess: need non-empty x and y of equal length");
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    if (!(*hi > *lo)) throw DegenerateDataError("initial_guess: data are flat (max == min)");
    std::vector<double> guess;
    switch (spec.kind) {
        case ModelKind::Gaussian1D:
        case ModelKind::Lorentzian1D: guess = guess_peak(spec, x, y); break;
        case ModelKind::ExponentialDecay: guess = guess_decay(x, y); break;
        case ModelKind::SaturationCurve: guess = guess_saturation(x, y); break;
    }
    clamp_parameters(spec, guess);
    return guess;
}

}  // namespace dotfoundry
