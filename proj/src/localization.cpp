#include "dotfoundry/localization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dotfoundry {

LineCut extract_line_cut(const Frame& frame, Axis axis, PixelPoint through, int averaging_halfwidth,
                         std::optional<IndexSpan> span) {
    if (!frame.contains(through.x, through.y)) throw BoundsError("line cut: through point outside the frame");
    if (averaging_halfwidth < 0) throw BoundsError("line cut: averaging halfwidth must be >= 0");
    const bool along_x = axis == Axis::X;
    const int fixed = along_x ? through.y : through.x;
    const int transverse_size = along_x ? frame.height : frame.width;
    const int length = along_x ? frame.width : frame.height;
    if (fixed - averaging_halfwidth < 0 || fixed + averaging_halfwidth >= transverse_size) {
        throw BoundsError("line cut: averaging band leaves the frame");
    }
    IndexSpan range = span.value_or(IndexSpan{0, length - 1});
    if (range.begin < 0 || range.end >= length || range.begin > range.end) {
        throw BoundsError("line cut: span outside the frame");
    }

    LineCut cut;
    cut.axis = axis;
    cut.fixed_index = fixed;
    cut.averaging_halfwidth = averaging_halfwidth;
    const double band = 2.0 * averaging_halfwidth + 1.0;
    for (int i = range.begin; i <= range.end; ++i) {
        double sum = 0.0;
        for (int t = fixed - averaging_halfwidth; t <= fixed + averaging_halfwidth; ++t) {
            sum += along_x ? frame.at(i, t) : frame.at(t, i);
        }
        cut.positions.push_back(static_cast<double>(i));
        cut.values.push_back(sum / band);
    }
    return cut;
}

PeakLocation apply_calibration(PeakLocation location, const CalibrationFrame& cf) {
    const Calibration& c = cf.calibration;
    const double distance_px = location.center_px - cf.origin_px;
    location.center_nm = c.nm_per_px * distance_px;
    double variance = std::pow(c.nm_per_px * location.sigma_center_px, 2);
    if (cf.include_calibration_uncertainty) variance += std::pow(distance_px * c.sigma_nm_per_px, 2);
    location.sigma_center_nm = std::sqrt(variance);
    return location;
}

PeakLocation locate_peak(const LineCut& cut, PeakModel model, const std::optional<CalibrationFrame>& calibration,
                         const PeakFitOptions& options) {
    if (cut.values.size() != cut.positions.size() || cut.values.size() < 5) {
        throw ArgumentError("locate_peak: cut needs at least 5 samples");
    }
    const auto peak = std::max_element(cut.values.begin(), cut.values.end());
    const auto index = static_cast<std::size_t>(std::distance(cut.values.begin(), peak));
    if (index == 0 || index + 1 == cut.values.size()) {
        throw DegenerateDataError("locate_peak: cut maximum lies on its boundary");
    }

    ModelSpec spec{model == PeakModel::Gaussian ? ModelKind::Gaussian1D : ModelKind::Lorentzian1D, "px", "counts"};
    FitOptions fit_options;
    fit_options.poisson_weights = options.poisson_weights;
    const auto init = initial_guess(spec, cut.positions, cut.values);
    FitResult result = fit(spec, cut.positions, cut.values, init, fit_options);
    if (!result.converged) throw FitFailure("locate_peak: fit did not converge", result);

    PeakLocation location;
    location.center_px = result.parameters[param::center];
    location.sigma_center_px = result.uncertainties[param::center];
    location.model_used = model;
    location.fit = std::move(result);
    if (calibration) location = apply_calibration(std::move(location), *calibration);
    return location;
}

Calibration calibrate(const PeakLocation& mark_a, const PeakLocation& mark_b, double known_separation_nm,
                      std::pair<std::string, std::string> mark_ids) {
    if (!(known_separation_nm > 0.0)) throw ArgumentError("calibrate: known separation must be > 0");
    const double delta = mark_b.center_px - mark_a.center_px;
    if (!(std::fabs(delta) >= 1.0)) throw DegenerateDataError("calibrate: marks are less than 1 px apart");
    Calibration c;
    c.nm_per_px = known_separation_nm / std::fabs(delta);
    c.sigma_nm_per_px = c.nm_per_px * std::hypot(mark_a.sigma_center_px, mark_b.sigma_center_px) / std::fabs(delta);
    c.source_marks = std::move(mark_ids);
    c.known_separation_nm = known_separation_nm;
    return c;
}

double MarkLayout::known_separation_nm() const {
    const auto& a = marks.at(calibration_a);
    const auto& b = marks.at(calibration_b);
    return calibration_axis == Axis::X ? std::fabs(b.x_nm - a.x_nm) : std::fabs(b.y_nm - a.y_nm);
}

void MarkLayout::validate() const {
    if (marks.size() < 2) throw ArgumentError("layout: need at least two marks");
    if (calibration_a >= marks.size() || calibration_b >= marks.size() || calibration_a == calibration_b) {
        throw ArgumentError("layout: calibration marks must be two distinct entries");
    }
    if (!(arm_length_nm > 0.0 && arm_width_nm > 0.0 && arm_width_nm <= arm_length_nm)) {
        throw ArgumentError("layout: need 0 < arm_width_nm <= arm_length_nm");
    }
    if (!(known_separation_nm() > 0.0)) throw ArgumentError("layout: calibration marks share a coordinate");
    for (const auto& m : marks) {
        if (m.window.x0 > m.window.x1 || m.window.y0 > m.window.y1) {
            throw ArgumentError("layout: empty search window for mark '" + m.id + "'");
        }
    }
}

PixelPoint coarse_emitter_position(const Frame& frame) {
    PixelPoint best{0, 0};
    double best_value = -1.0;
    for (int iy = 0; iy < frame.height; ++iy) {
        for (int ix = 0; ix < frame.width; ++ix) {
            double sum = 0.0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (frame.contains(ix + dx, iy + dy)) {
                        sum += frame.at(ix + dx, iy + dy);
                        ++n;
                    }
                }
            }
            const double mean = sum / n;
            if (mean > best_value) {
                best_value = mean;
                best = {ix, iy};
            }
        }
    }
    return best;
}

PixelPoint coarse_mark_position(const Frame& frame, const SearchWindow& w) {
    if (!frame.contains(w.x0, w.y0) || !frame.contains(w.x1, w.y1) || w.x0 > w.x1 || w.y0 > w.y1) {
        throw BoundsError("mark search window outside the frame");
    }
    std::vector<double> columns(static_cast<std::size_t>(w.x1 - w.x0 + 1), 0.0);
    std::vector<double> rows(static_cast<std::size_t>(w.y1 - w.y0 + 1), 0.0);
    for (int iy = w.y0; iy <= w.y1; ++iy) {
        for (int ix = w.x0; ix <= w.x1; ++ix) {
            columns[ix - w.x0] += frame.at(ix, iy);
            rows[iy - w.y0] += frame.at(ix, iy);
        }
    }
    const auto cx = std::distance(columns.begin(), std::max_element(columns.begin(), columns.end()));
    const auto cy = std::distance(rows.begin(), std::max_element(rows.begin(), rows.end()));
    return {w.x0 + static_cast<int>(cx), w.y0 + static_cast<int>(cy)};
}

namespace {

IndexSpan window_around(int center, int halfwindow, int length) {
    return {std::max(0, center - halfwindow), std::min(length - 1, center + halfwindow)};
}

// Fit, then refit once with the window re-centered on the fitted peak.
PeakLocation fit_feature(const Frame& frame, Axis axis, PixelPoint through, int halfwidth, int halfwindow,
                         PeakModel model, const PeakFitOptions& options) {
    const int length = axis == Axis::X ? frame.width : frame.height;
    const int coarse = axis == Axis::X ? through.x : through.y;
    PeakLocation loc = locate_peak(
        extract_line_cut(frame, axis, through, halfwidth, window_around(coarse, halfwindow, length)), model,
        std::nullopt, options);
    const int refined = static_cast<int>(std::lround(loc.center_px));
    if (refined != coarse && refined >= 0 && refined < length) {
        loc = locate_peak(extract_line_cut(frame, axis, through, halfwidth, window_around(refined, halfwindow, length)),
                          model, std::nullopt, options);
    }
    return loc;
}

template <typename F>
auto run_stage(const std::string& stage, F&& body) {
    try {
        return body();
    } catch (const LocalizationError&) {
        throw;
    } catch (const std::exception& e) {
        throw LocalizationError(stage, e.what());
    }
}

}  // namespace

LocalizationReport localize(const Frame& surface_frame, const Frame& emitter_frame, const MarkLayout& layout,
                            const LocalizationOptions& options) {
    run_stage("input", [&] {
        surface_frame.validate();
        emitter_frame.validate();
        layout.validate();
        if (surface_frame.width != emitter_frame.width || surface_frame.height != emitter_frame.height) {
            throw ArgumentError("surface and emitter frames differ in geometry");
        }
        return 0;
    });

    const double pitch = surface_frame.pixel_pitch_nm;
    const double half_arm = 0.5 * layout.arm_length_nm;
    const double half_width = 0.5 * layout.arm_width_nm;
    // Cut each arm midway between the crossing and its tip, clear of the other arm.
    const int arm_offset_px = static_cast<int>(std::lround(0.5 * (half_arm + half_width) / pitch));

    LocalizationReport report;
    std::vector<AxisLocations> marks_px;
    for (const auto& entry : layout.marks) {
        const PixelPoint coarse =
            run_stage("mark_detection", [&] { return coarse_mark_position(surface_frame, entry.window); });
        AxisLocations loc = run_stage("mark_fit", [&] {
            AxisLocations l;
            l.x = fit_feature(surface_frame, Axis::X, {coarse.x, coarse.y + arm_offset_px}, options.averaging_halfwidth,
                              options.mark_fit_halfwindow_px, PeakModel::Gaussian, options.fit);
            l.y = fit_feature(surface_frame, Axis::Y, {coarse.x + arm_offset_px, coarse.y}, options.averaging_halfwidth,
                              options.mark_fit_halfwindow_px, PeakModel::Gaussian, options.fit);
            return l;
        });
        report.mark_ids.push_back(entry.id);
        marks_px.push_back(std::move(loc));
    }

    const auto& mark_a = marks_px[layout.calibration_a];
    const auto& mark_b = marks_px[layout.calibration_b];
    report.calibration = run_stage("calibration", [&] {
        const bool x_axis = layout.calibration_axis == Axis::X;
        return calibrate(x_axis ? mark_a.x : mark_a.y, x_axis ? mark_b.x : mark_b.y, layout.known_separation_nm(),
                         {layout.marks[layout.calibration_a].id, layout.marks[layout.calibration_b].id});
    });
    report.origin_x_px = mark_a.x.center_px;
    report.origin_y_px = mark_a.y.center_px;
    const CalibrationFrame frame_x{report.calibration, report.origin_x_px, options.include_calibration_uncertainty};
    const CalibrationFrame frame_y{report.calibration, report.origin_y_px, options.include_calibration_uncertainty};

    for (auto& m : marks_px) {
        report.marks.push_back({apply_calibration(m.x, frame_x), apply_calibration(m.y, frame_y)});
    }

    const PixelPoint emitter_coarse =
        run_stage("emitter_detection", [&] { return coarse_emitter_position(emitter_frame); });
    report.emitter = run_stage("emitter_fit", [&] {
        AxisLocations l;
        l.x = fit_feature(emitter_frame, Axis::X, emitter_coarse, options.averaging_halfwidth,
                          options.emitter_fit_halfwindow_px, PeakModel::Lorentzian, options.fit);
        l.y = fit_feature(emitter_frame, Axis::Y, emitter_coarse, options.averaging_halfwidth,
                          options.emitter_fit_halfwindow_px, PeakModel::Lorentzian, options.fit);
        return AxisLocations{apply_calibration(l.x, frame_x), apply_calibration(l.y, frame_y)};
    });

    for (std::size_t i = 0; i < report.marks.size(); ++i) {
        const auto& m = report.marks[i];
        Separation s;
        s.mark_id = report.mark_ids[i];
        s.delta_x_nm = report.emitter.x.center_nm - m.x.center_nm;
        s.delta_y_nm = report.emitter.y.center_nm - m.y.center_nm;
        s.sigma_x_nm = std::sqrt(report.emitter.x.sigma_center_nm * report.emitter.x.sigma_center_nm +
                                 m.x.sigma_center_nm * m.x.sigma_center_nm);
        s.sigma_y_nm = std::sqrt(report.emitter.y.sigma_center_nm * report.emitter.y.sigma_center_nm +
                                 m.y.sigma_center_nm * m.y.sigma_center_nm);
        report.separations.push_back(s);
    }
    const auto& origin = layout.marks[layout.calibration_a];
    report.emitter_sample_x_nm = origin.x_nm + report.emitter.x.center_nm;
    report.emitter_sample_y_nm = origin.y_nm + report.emitter.y.center_nm;
    return report;
}

namespace {

UncertaintyCategory make_category(std::string name, std::vector<double> values, double bin_width) {
    UncertaintyCategory c;
    c.name = std::move(name);
    c.bin_width_nm = bin_width;
    c.mean_nm = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    for (double v : values) {
        const auto bin = static_cast<std::size_t>(std::floor(std::max(v, 0.0) / bin_width));
        if (bin >= c.counts.size()) c.counts.resize(bin + 1, 0);
        ++c.counts[bin];
    }
    c.values_nm = std::move(values);
    return c;
}

}  // namespace

UncertaintySummary uncertainty_histogram(const std::vector<LocalizationReport>& reports, double bin_width_nm) {
    if (reports.empty()) throw ArgumentError("uncertainty_histogram: no reports");
    if (!(bin_width_nm > 0.0)) throw ArgumentError("uncertainty_histogram: bin width must be > 0");
    std::vector<double> emitter, mark, separation;
    for (const auto& r : reports) {
        emitter.push_back(r.emitter.x.sigma_center_nm);
        emitter.push_back(r.emitter.y.sigma_center_nm);
        for (const auto& m : r.marks) {
            mark.push_back(m.x.sigma_center_nm);
            mark.push_back(m.y.sigma_center_nm);
        }
        for (const auto& s : r.separations) {
            separation.push_back(s.sigma_x_nm);
            separation.push_back(s.sigma_y_nm);
        }
    }
    return {make_category("emitter", std::move(emitter), bin_width_nm),
            make_category("mark", std::move(mark), bin_width_nm),
            make_category("separation", std::move(separation), bin_width_nm)};
}

}  // namespace dotfoundry
