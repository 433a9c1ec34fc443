#pragma once

#include "dotfoundry/errors.hpp"
#include "dotfoundry/fit_engine.hpp"
#include "dotfoundry/imaging.hpp"

#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dotfoundry {

enum class Axis { X, Y };
enum class PeakModel { Gaussian, Lorentzian };

/// 1D profile through a frame. `positions` are pixel coordinates along `axis`,
/// `fixed_index` the row (axis X) or column (axis Y) the band is centered on.
struct LineCut {
    Axis axis = Axis::X;
    int fixed_index = 0;
    std::vector<double> positions;
    std::vector<double> values;
    int averaging_halfwidth = 0;
};

struct PixelPoint {
    int x = 0;
    int y = 0;
};

/// Inclusive longitudinal index range of a cut.
struct IndexSpan {
    int begin = 0;
    int end = 0;
};

struct Calibration {
    double nm_per_px = 0.0;
    double sigma_nm_per_px = 0.0;
    std::pair<std::string, std::string> source_marks;
    double known_separation_nm = 0.0;
};

/// Calibration plus the pixel coordinate that maps to 0 nm.
struct CalibrationFrame {
    Calibration calibration;
    double origin_px = 0.0;
    /// Add the scale-factor term (distance-from-origin * sigma_nm_per_px) to sigma_nm.
    bool include_calibration_uncertainty = true;
};

struct PeakLocation {
    double center_px = 0.0;
    double sigma_center_px = 0.0;
    /// Relative to the calibration origin; NaN when no calibration was supplied.
    double center_nm = std::numeric_limits<double>::quiet_NaN();
    double sigma_center_nm = std::numeric_limits<double>::quiet_NaN();
    PeakModel model_used = PeakModel::Gaussian;
    FitResult fit;
};

struct PeakFitOptions {
    bool poisson_weights = true;
};

/// Throws BoundsError when the band or span leaves the frame.
LineCut extract_line_cut(const Frame& frame, Axis axis, PixelPoint through, int averaging_halfwidth,
                         std::optional<IndexSpan> span = std::nullopt);

/// Throws DegenerateDataError if the cut's maximum sits on its boundary and
/// FitFailure if the fit does not converge.
PeakLocation locate_peak(const LineCut& cut, PeakModel model,
                         const std::optional<CalibrationFrame>& calibration = std::nullopt,
                         const PeakFitOptions& options = {});

/// Converts a pixel-space location to nm relative to the calibration origin.
PeakLocation apply_calibration(PeakLocation location, const CalibrationFrame& calibration);

/// nm/px from two marks a known distance apart. Throws DegenerateDataError
/// when the marks are less than 1 px apart.
Calibration calibrate(const PeakLocation& mark_a, const PeakLocation& mark_b, double known_separation_nm,
                      std::pair<std::string, std::string> mark_ids = {"a", "b"});

struct SearchWindow {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  ///< inclusive pixel bounds
};

struct MarkLayoutEntry {
    std::string id;
    double x_nm = 0.0;  ///< design position on the sample
    double y_nm = 0.0;
    SearchWindow window;
};

/// What the user knows about the fiducials before imaging.
struct MarkLayout {
    std::vector<MarkLayoutEntry> marks;
    double arm_length_nm = 3000.0;
    double arm_width_nm = 500.0;
    std::size_t calibration_a = 0;
    std::size_t calibration_b = 1;
    Axis calibration_axis = Axis::X;

    double known_separation_nm() const;
    void validate() const;
};

struct LocalizationOptions {
    int averaging_halfwidth = 2;
    int mark_fit_halfwindow_px = 12;
    int emitter_fit_halfwindow_px = 16;
    bool include_calibration_uncertainty = true;
    PeakFitOptions fit;
};

struct AxisLocations {
    PeakLocation x;
    PeakLocation y;
};

/// Emitter minus mark, per axis, in calibrated nm.
struct Separation {
    std::string mark_id;
    double delta_x_nm = 0.0;
    double sigma_x_nm = 0.0;
    double delta_y_nm = 0.0;
    double sigma_y_nm = 0.0;
};

struct LocalizationReport {
    AxisLocations emitter;
    std::vector<std::string> mark_ids;
    std::vector<AxisLocations> marks;
    std::vector<Separation> separations;
    Calibration calibration;
    double origin_x_px = 0.0;
    double origin_y_px = 0.0;
    /// Emitter in design coordinates: origin mark's design position + relative offset.
    double emitter_sample_x_nm = 0.0;
    double emitter_sample_y_nm = 0.0;
};

/// Failure of one localization stage; `stage()` names it.
class LocalizationError : public Error {
public:
    LocalizationError(std::string stage, const std::string& what)
        : Error("localize[" + stage + "]: " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// 3x3 box blur then global argmax (ties to the lowest row-major index).
PixelPoint coarse_emitter_position(const Frame& frame);

/// Argmax of the column and row projections inside the window.
PixelPoint coarse_mark_position(const Frame& frame, const SearchWindow& window);

LocalizationReport localize(const Frame& surface_frame, const Frame& emitter_frame, const MarkLayout& layout,
                            const LocalizationOptions& options = {});

struct UncertaintyCategory {
    std::string name;
    std::vector<double> values_nm;
    double mean_nm = 0.0;
    double bin_width_nm = 2.0;
    std::vector<std::size_t> counts;  ///< bin k covers [k*w, (k+1)*w)
};

struct UncertaintySummary {
    UncertaintyCategory emitter;
    UncertaintyCategory mark;
    UncertaintyCategory separation;
};

/// Pools the per-axis sigmas of emitter, every mark, and every separation.
UncertaintySummary uncertainty_histogram(const std::vector<LocalizationReport>& reports, double bin_width_nm = 2.0);

}  // namespace dotfoundry
