#pragma once

#include "dotfoundry/errors.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dotfoundry {

enum class ModelKind { Gaussian1D, Lorentzian1D, ExponentialDecay, SaturationCurve };

std::string_view model_kind_name(ModelKind kind);

/// Model family plus the units of its abscissa and ordinate. Parameter units
/// follow from these (center/width in x units, amplitude/offset in y units).
struct ModelSpec {
    ModelKind kind = ModelKind::Gaussian1D;
    std::string x_unit = "px";
    std::string y_unit = "counts";

    std::size_t parameter_count() const;
    std::vector<std::string> parameter_names() const;
    std::vector<std::string> parameter_units() const;
    /// True for parameters that must stay strictly positive (widths, lifetime, P_sat).
    bool strictly_positive(std::size_t index) const;
};

/// Parameter layouts:
///   Gaussian1D       amplitude, center, sigma, offset
///   Lorentzian1D     amplitude, center, hwhm, offset
///   ExponentialDecay amplitude, lifetime, offset
///   SaturationCurve  saturated, saturation_power
namespace param {
inline constexpr std::size_t amplitude = 0;
inline constexpr std::size_t center = 1;
inline constexpr std::size_t width = 2;
inline constexpr std::size_t peak_offset = 3;
inline constexpr std::size_t lifetime = 1;
inline constexpr std::size_t decay_offset = 2;
inline constexpr std::size_t saturated = 0;
inline constexpr std::size_t saturation_power = 1;
}  // namespace param

struct FitResult {
    ModelSpec spec;
    std::vector<double> parameters;
    std::vector<double> uncertainties;  ///< sqrt of the covariance diagonal
    Eigen::MatrixXd covariance;
    double residual_sum_squares = 0.0;
    /// max_i |g_i| / sqrt(A_ii * RSS) at the solution (g = J^T W r, A = J^T W J).
    /// Scale free; zero when the residual vanishes.
    double gradient_norm = 0.0;
    bool converged = false;
    int iterations = 0;
};

/// A fit that ran out of iterations where the caller needs a converged one.
class FitFailure : public Error {
public:
    FitFailure(const std::string& what, FitResult result) : Error(what), result_(std::move(result)) {}
    const FitResult& result() const noexcept { return result_; }

private:
    FitResult result_;
};

struct FitOptions {
    /// Explicit per-sample weights; empty means unit weights.
    std::vector<double> weights;
    /// Use w = 1/max(y, 1). Ignored when explicit weights are given.
    bool poisson_weights = false;
    int max_iterations = 200;
    double initial_damping = 1e-3;
    double objective_tolerance = 1e-10;
    double step_tolerance = 1e-10;
    /// Bound on max_i |g_i| / sqrt(N_ii RSS), the cosine between the residual and
    /// each Jacobian column. Forward differences leave a floor near 1e-5.
    double gradient_tolerance = 1e-4;
};

/// Throws DomainError naming the first out-of-bounds parameter.
void check_parameters(const ModelSpec& spec, std::span<const double> params);

/// Single-point evaluation without bounds checking (hot path of the fitter).
double model_value(const ModelSpec& spec, std::span<const double> params, double x);

std::vector<double> evaluate_model(const ModelSpec& spec, std::span<const double> params,
                                   std::span<const double> x);

/// Damped Gauss-Newton fit of the weighted squared residuals.
///
/// Damping is Marquardt-scaled (lambda * diag(J^T W J)), starting at
/// `initial_damping`. Rejected steps raise it by growing factors (2, 4, 8, ...);
/// accepted steps rescale it by the ratio of actual to predicted decrease,
/// which avoids oscillating in curved valleys. The Jacobian uses forward differences with step
/// max(1e-7 |p|, 1e-9). A run is flagged converged only when either the
/// relative objective decrease or the relative step falls below tolerance
/// *and* the gradient measure is below `gradient_tolerance`. When no damped step
/// lowers the objective the run stops, converged only if the gradient test holds.
///
/// Covariance is s^2 (J^T W J)^-1 with s^2 = RSS / (n - p).
/// Throws DegenerateFitError if J^T W J is singular at the solution.
FitResult fit(const ModelSpec& spec, std::span<const double> x, std::span<const double> y,
              std::span<const double> init, const FitOptions& options = {});

/// Data-driven starting point for `fit`. Throws DegenerateDataError on flat data.
std::vector<double> initial_guess(const ModelSpec& spec, std::span<const double> x, std::span<const double> y);

}  // namespace dotfoundry
