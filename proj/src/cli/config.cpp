#include "config.hpp"

#include "dotfoundry/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace dotfoundry::cli {

Section::Section(const nlohmann::json& j, std::string path, std::initializer_list<const char*> allowed)
    : json_(j), path_(std::move(path)) {
    const std::string label = path_.empty() ? "config" : path_;
    if (!j.is_object()) throw UsageError(label + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* key : allowed) known = known || it.key() == key;
        if (!known) throw UsageError(label + ": unknown key '" + it.key() + "'");
    }
}

std::string Section::where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

const nlohmann::json& Section::raw(const char* key) const {
    if (!json_.contains(key)) throw UsageError(where(key) + ": required key is missing");
    return json_.at(key);
}

double Section::number(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_number()) throw UsageError(where(key) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw UsageError(where(key) + ": must be finite");
    return d;
}

double Section::number(const char* key, double fallback) const { return has(key) ? number(key) : fallback; }

double Section::positive(const char* key) const {
    const double d = number(key);
    if (!(d > 0.0)) throw UsageError(where(key) + ": must be > 0");
    return d;
}

double Section::positive(const char* key, double fallback) const { return has(key) ? positive(key) : fallback; }

double Section::non_negative(const char* key, double fallback) const {
    const double d = number(key, fallback);
    if (!(d >= 0.0)) throw UsageError(where(key) + ": must be >= 0");
    return d;
}

long long Section::integer(const char* key, long long fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_number_integer()) throw UsageError(where(key) + ": expected an integer");
    return v.get<long long>();
}

std::uint64_t Section::seed(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_number_unsigned()) throw UsageError(where(key) + ": expected a non-negative integer");
    return v.get<std::uint64_t>();
}

bool Section::boolean(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw UsageError(where(key) + ": expected true or false");
    return v.get<bool>();
}

std::string Section::string(const char* key) const {
    const auto& v = raw(key);
    if (!v.is_string()) throw UsageError(where(key) + ": expected a string");
    return v.get<std::string>();
}

std::string Section::string(const char* key, const std::string& fallback) const {
    return has(key) ? string(key) : fallback;
}

Section Section::child(const char* key, std::initializer_list<const char*> allowed) const {
    return Section(raw(key), where(key), allowed);
}

namespace {

GridSpec parse_grid(const Section& s) {
    GridSpec g{s.positive("start"), s.positive("stop"), s.positive("step")};
    if (g.stop_um < g.start_um) throw UsageError(s.where("stop") + ": must be >= start");
    return g;
}

PlanarCavity parse_cavity(const Section& s) {
    PlanarCavity c;
    if (s.has("e2d_ev") == s.has("e2d_wavelength_nm")) {
        throw UsageError(s.where("e2d_ev") + ": give exactly one of e2d_ev or e2d_wavelength_nm");
    }
    c.e2d_ev = s.has("e2d_ev") ? s.positive("e2d_ev") : wavelength_to_energy_ev(s.positive("e2d_wavelength_nm"));
    c.epsilon_eff = s.number("epsilon_eff", c.epsilon_eff);
    if (!(c.epsilon_eff > 1.0)) throw UsageError(s.where("epsilon_eff") + ": must be > 1");
    if (s.has("stopband_nm")) {
        const Section sb = s.child("stopband_nm", {"low", "high"});
        c.stopband_nm = {sb.positive("low"), sb.positive("high")};
        if (!(c.stopband_nm.low_nm < c.stopband_nm.high_nm)) throw UsageError(sb.where("high") + ": must exceed low");
    }
    return c;
}

ModeIndex parse_mode(const Section& parent) {
    if (!parent.has("mode")) return ModeIndex::fundamental();
    const Section s = parent.child("mode", {"n_phi", "n_r"});
    const long long n_phi = s.integer("n_phi", 1);
    const long long n_r = s.integer("n_r", 0);
    if (n_phi < 1 || n_phi > 11) throw UsageError(s.where("n_phi") + ": must be in [1, 11]");
    if (n_r < 0 || n_r > 10) throw UsageError(s.where("n_r") + ": must be in [0, 10]");
    return ModeIndex::he(static_cast<int>(n_phi), static_cast<int>(n_r));
}

std::optional<double> parse_target(const Section& s) {
    if (s.has("target_ev") && s.has("target_wavelength_nm")) {
        throw UsageError(s.where("target_ev") + ": give only one of target_ev or target_wavelength_nm");
    }
    if (s.has("target_ev")) return s.positive("target_ev");
    if (s.has("target_wavelength_nm")) return wavelength_to_energy_ev(s.positive("target_wavelength_nm"));
    return std::nullopt;
}

Measured parse_measured(const Section& s) { return {s.positive("value"), s.non_negative("sigma", 0.0)}; }

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

std::vector<double> make_grid(const GridSpec& grid, const std::string& what) {
    if ((grid.stop_um - grid.start_um) / grid.step_um > 1e6) throw UsageError(what + ": grid has too many points");
    return diameter_grid(grid.start_um, grid.stop_um, grid.step_um);
}

FrameSimConfig parse_frame_config(const nlohmann::json& j) {
    const Section root(j, "", {"seed", "geometry", "emitter", "marks", "background_counts", "defocus_blur_nm", "noise",
                               "focus", "calibration", "search_halfwindow_px", "batch"});
    FrameSimConfig c;
    if (root.has("seed")) c.seed = root.seed("seed");

    const Section g = root.child("geometry", {"width_px", "height_px", "pixel_pitch_nm", "exposure_s"});
    const long long w = g.integer("width_px", 0), h = g.integer("height_px", 0);
    if (w <= 0 || w > 8192) throw UsageError(g.where("width_px") + ": must be in [1, 8192]");
    if (h <= 0 || h > 8192) throw UsageError(g.where("height_px") + ": must be in [1, 8192]");
    c.geometry = {static_cast<int>(w), static_cast<int>(h), g.positive("pixel_pitch_nm"), g.positive("exposure_s", 0.1)};

    const Section e = root.child("emitter", {"x_nm", "y_nm", "peak_counts", "psf_fwhm_nm", "profile"});
    c.scene.emitter.x_nm = e.number("x_nm");
    c.scene.emitter.y_nm = e.number("y_nm");
    c.scene.emitter.peak_counts = e.non_negative("peak_counts", 0.0);
    c.scene.emitter.psf_fwhm_nm = e.positive("psf_fwhm_nm", 1000.0);
    const std::string profile = e.string("profile", "lorentzian");
    if (profile != "lorentzian" && profile != "gaussian") {
        throw UsageError(e.where("profile") + ": expected 'lorentzian' or 'gaussian'");
    }
    c.scene.emitter.profile = profile == "gaussian" ? PsfProfile::Gaussian : PsfProfile::Lorentzian;

    if (root.has("marks")) {
        const auto& marks = root.raw("marks");
        if (!marks.is_array()) throw UsageError("marks: expected an array");
        for (std::size_t i = 0; i < marks.size(); ++i) {
            const Section m(marks[i], "marks[" + std::to_string(i) + "]",
                            {"id", "center_x_nm", "center_y_nm", "arm_length_nm", "arm_width_nm", "reflectance_counts",
                             "edge_blur_nm"});
            MarkSpec spec;
            spec.center_x_nm = m.number("center_x_nm");
            spec.center_y_nm = m.number("center_y_nm");
            spec.arm_length_nm = m.positive("arm_length_nm", spec.arm_length_nm);
            spec.arm_width_nm = m.positive("arm_width_nm", spec.arm_width_nm);
            spec.reflectance_counts = m.positive("reflectance_counts");
            spec.edge_blur_nm = m.non_negative("edge_blur_nm", 0.0);
            c.scene.marks.push_back(spec);
            c.mark_ids.push_back(m.string("id", std::string(1, static_cast<char>('A' + i % 26))));
        }
    }
    c.scene.background_counts = root.non_negative("background_counts", 0.0);
    if (root.has("defocus_blur_nm")) {
        const Section d = root.child("defocus_blur_nm", {"surface_nm", "emitter_nm"});
        c.scene.defocus_blur_nm = {d.non_negative("surface_nm", 0.0), d.non_negative("emitter_nm", 0.0)};
    }
    if (root.has("noise")) {
        const Section n = root.child("noise", {"photon_shot", "emccd_gain", "read_noise_rms", "quantize"});
        c.noise.photon_shot = n.boolean("photon_shot", false);
        c.noise.emccd_gain = n.number("emccd_gain", 1.0);
        if (!(c.noise.emccd_gain >= 1.0)) throw UsageError(n.where("emccd_gain") + ": must be >= 1");
        c.noise.read_noise_rms = n.non_negative("read_noise_rms", 0.0);
        c.noise.quantize = n.boolean("quantize", true);
    }
    const std::string focus = root.string("focus", "both");
    if (focus == "surface") {
        c.focus = FocusSelection::Surface;
    } else if (focus == "emitter") {
        c.focus = FocusSelection::Emitter;
    } else if (focus == "both") {
        c.focus = FocusSelection::Both;
    } else {
        throw UsageError("focus: expected 'surface', 'emitter' or 'both'");
    }

    if (root.has("calibration")) {
        const Section cal = root.child("calibration", {"mark_a", "mark_b", "axis"});
        c.calibration_a = cal.string("mark_a");
        c.calibration_b = cal.string("mark_b");
        const std::string axis = cal.string("axis", "x");
        if (axis != "x" && axis != "y") throw UsageError(cal.where("axis") + ": expected 'x' or 'y'");
        c.calibration_axis = axis == "x" ? Axis::X : Axis::Y;
    } else if (c.mark_ids.size() >= 2) {
        c.calibration_a = c.mark_ids[0];
        c.calibration_b = c.mark_ids[1];
    }
    const long long hw = root.integer("search_halfwindow_px", c.search_halfwindow_px);
    if (hw < 1 || hw > 1000) throw UsageError("search_halfwindow_px: must be in [1, 1000]");
    c.search_halfwindow_px = static_cast<int>(hw);

    if (root.has("batch")) {
        const Section b = root.child("batch", {"count", "emitter_jitter_nm"});
        const long long count = b.integer("count", 1);
        if (count < 1 || count > 100000) throw UsageError(b.where("count") + ": must be in [1, 100000]");
        c.count = static_cast<int>(count);
        c.emitter_jitter_nm = b.non_negative("emitter_jitter_nm", 0.0);
    }
    if (c.focus == FocusSelection::Both && !c.calibration_a.empty()) {
        auto known = [&](const std::string& id) {
            return std::find(c.mark_ids.begin(), c.mark_ids.end(), id) != c.mark_ids.end();
        };
        if (!known(c.calibration_a) || !known(c.calibration_b) || c.calibration_a == c.calibration_b) {
            throw UsageError("calibration: mark_a and mark_b must name two distinct marks");
        }
    }
    return c;
}

LocalizeConfig parse_localize_config(const nlohmann::json& j) {
    const Section s(j, "", {"averaging_halfwidth", "mark_fit_halfwindow_px", "emitter_fit_halfwindow_px",
                            "include_calibration_uncertainty", "poisson_weights", "bin_width_nm"});
    LocalizeConfig c;
    auto& o = c.options;
    const long long avg = s.integer("averaging_halfwidth", o.averaging_halfwidth);
    const long long mark_hw = s.integer("mark_fit_halfwindow_px", o.mark_fit_halfwindow_px);
    const long long emit_hw = s.integer("emitter_fit_halfwindow_px", o.emitter_fit_halfwindow_px);
    if (avg < 0 || avg > 50) throw UsageError("averaging_halfwidth: must be in [0, 50]");
    if (mark_hw < 3 || mark_hw > 1000) throw UsageError("mark_fit_halfwindow_px: must be in [3, 1000]");
    if (emit_hw < 3 || emit_hw > 1000) throw UsageError("emitter_fit_halfwindow_px: must be in [3, 1000]");
    o.averaging_halfwidth = static_cast<int>(avg);
    o.mark_fit_halfwindow_px = static_cast<int>(mark_hw);
    o.emitter_fit_halfwindow_px = static_cast<int>(emit_hw);
    o.include_calibration_uncertainty = s.boolean("include_calibration_uncertainty", true);
    o.fit.poisson_weights = s.boolean("poisson_weights", true);
    c.bin_width_nm = s.positive("bin_width_nm", 2.0);
    return c;
}

DesignConfig parse_design_config(const nlohmann::json& j) {
    const Section s(j, "", {"cavity", "mode", "target_ev", "target_wavelength_nm", "diameter_grid_um",
                            "curve_diameters_um"});
    DesignConfig c;
    c.cavity = parse_cavity(s.child("cavity", {"e2d_ev", "e2d_wavelength_nm", "epsilon_eff", "stopband_nm"}));
    c.mode = parse_mode(s);
    c.target_ev = parse_target(s);
    if (s.has("diameter_grid_um")) c.grid = parse_grid(s.child("diameter_grid_um", {"start", "stop", "step"}));
    if (s.has("curve_diameters_um")) c.curve = parse_grid(s.child("curve_diameters_um", {"start", "stop", "step"}));
    return c;
}

HistogramConfig parse_histogram_config(const nlohmann::json& j) {
    const Section s(j, "", {"seed", "g2_target", "recapture_delay_ns", "recapture_fraction", "rep_period_ns",
                            "peak_shape", "total_pairs", "bin_width_ns", "periods"});
    HistogramConfig c;
    auto& sim = c.simulation;
    if (s.has("seed")) c.seed = s.seed("seed");
    sim.g2_target = s.non_negative("g2_target", 0.0);
    sim.recapture_delay_ns = s.non_negative("recapture_delay_ns", 0.0);
    sim.recapture_fraction = s.non_negative("recapture_fraction", 0.0);
    if (sim.recapture_fraction > 1.0) throw UsageError("recapture_fraction: must be in [0, 1]");
    sim.rep_period_ns = s.positive("rep_period_ns", kDefaultRepPeriodNs);
    if (s.has("peak_shape")) {
        const Section p = s.child("peak_shape", {"kind", "width_ns"});
        const std::string kind = p.string("kind", "two_sided_exponential");
        if (kind == "gaussian") {
            sim.peak_shape.kind = PeakShape::Kind::Gaussian;
        } else if (kind != "two_sided_exponential") {
            throw UsageError(p.where("kind") + ": expected 'two_sided_exponential' or 'gaussian'");
        }
        sim.peak_shape.width_ns = p.positive("width_ns", sim.peak_shape.width_ns);
    }
    sim.total_pairs = s.non_negative("total_pairs", sim.total_pairs);
    sim.bin_width_ns = s.positive("bin_width_ns", sim.bin_width_ns);
    const long long periods = s.integer("periods", sim.periods);
    if (periods < 3 || periods > 1000) throw UsageError("periods: must be in [3, 1000]");
    sim.periods = static_cast<int>(periods);
    try {
        sim.validate();
    } catch (const ArgumentError& e) {
        throw UsageError(e.what());
    }
    return c;
}

CharacterizeConfig parse_characterize_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    const Section s(j, "", {"reference_trace", "cavity_trace", "lifetime_window_ps", "reference_lifetime_ps",
                            "cavity_lifetime_ps", "spectrum", "saturation", "histogram",
                            "g2_integration_halfwidth_ns", "budget", "efficiency"});
    CharacterizeConfig c;
    auto path = [&](const char* key) -> std::optional<std::filesystem::path> {
        if (!s.has(key)) return std::nullopt;
        return resolve(base_dir, s.string(key));
    };
    c.reference_trace = path("reference_trace");
    c.cavity_trace = path("cavity_trace");
    c.spectrum = path("spectrum");
    c.saturation = path("saturation");
    c.histogram = path("histogram");
    if (s.has("lifetime_window_ps")) {
        const auto& w = s.raw("lifetime_window_ps");
        if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number() ||
            !(w[1].get<double>() > w[0].get<double>())) {
            throw UsageError("lifetime_window_ps: expected [start, end] with end > start");
        }
        c.lifetime_window = TimeWindow{w[0].get<double>(), w[1].get<double>()};
    }
    if (s.has("reference_lifetime_ps")) c.reference_lifetime_ps = parse_measured(s.child("reference_lifetime_ps", {"value", "sigma"}));
    if (s.has("cavity_lifetime_ps")) c.cavity_lifetime_ps = parse_measured(s.child("cavity_lifetime_ps", {"value", "sigma"}));
    if (s.has("g2_integration_halfwidth_ns")) c.g2_integration_halfwidth_ns = s.positive("g2_integration_halfwidth_ns");
    if (s.has("budget")) {
        const auto& b = s.raw("budget");
        if (b.is_string()) {
            c.budget_path = resolve(base_dir, b.get<std::string>());
        } else {
            try {
                c.budget = io::budget_elements_from_json(b);
            } catch (const nlohmann::json::exception& e) {
                throw UsageError(std::string("budget: ") + e.what());
            } catch (const ArgumentError& e) {
                throw UsageError(e.what());
            }
        }
    }
    if (s.has("efficiency")) {
        const Section e = s.child("efficiency", {"detected_counts_per_s", "sigma_detected_counts_per_s", "rep_rate_hz",
                                                 "transmission", "transmission_rel_err", "g2", "sigma_g2"});
        auto& eff = c.efficiency;
        if (e.has("detected_counts_per_s")) eff.detected_counts_per_s = e.positive("detected_counts_per_s");
        eff.sigma_detected_counts_per_s = e.non_negative("sigma_detected_counts_per_s", 0.0);
        eff.rep_rate_hz = e.positive("rep_rate_hz", eff.rep_rate_hz);
        if (e.has("transmission")) {
            eff.transmission = e.positive("transmission");
            if (*eff.transmission > 1.0) throw UsageError(e.where("transmission") + ": must be <= 1");
        }
        eff.transmission_rel_err = e.non_negative("transmission_rel_err", 0.0);
        if (e.has("g2")) eff.g2 = Measured{e.non_negative("g2", 0.0), e.non_negative("sigma_g2", 0.0)};
    }
    return c;
}

YieldConfig parse_yield_config(const nlohmann::json& j) {
    const Section s(j, "", {"seed", "cavity", "mode", "emitters", "tuning", "diameter_grid_um", "q_factor", "trials"});
    YieldConfig c;
    auto& r = c.request;
    if (s.has("seed")) c.seed = s.seed("seed");
    r.cavity = parse_cavity(s.child("cavity", {"e2d_ev", "e2d_wavelength_nm", "epsilon_eff", "stopband_nm"}));
    r.mode = parse_mode(s);

    const Section e = s.child("emitters", {"distribution", "low_ev", "high_ev", "mean_ev", "sigma_ev",
                                           "fabrication_shift_sigma_mev"});
    const std::string kind = e.string("distribution", "uniform");
    if (kind == "uniform") {
        r.emitters.kind = EmitterDistribution::Kind::Uniform;
        r.emitters.low_ev = e.positive("low_ev");
        r.emitters.high_ev = e.positive("high_ev");
        if (!(r.emitters.high_ev > r.emitters.low_ev)) throw UsageError(e.where("high_ev") + ": must exceed low_ev");
    } else if (kind == "normal") {
        r.emitters.kind = EmitterDistribution::Kind::Normal;
        r.emitters.mean_ev = e.positive("mean_ev");
        r.emitters.sigma_ev = e.non_negative("sigma_ev", 0.0);
    } else {
        throw UsageError(e.where("distribution") + ": expected 'uniform' or 'normal'");
    }
    r.emitters.fabrication_shift_sigma_mev = e.non_negative("fabrication_shift_sigma_mev", 0.0);

    if (s.has("tuning")) {
        const Section t = s.child("tuning", {"t_min_k", "t_max_k", "qd_mev_per_k", "mode_mev_per_k"});
        r.tuning.t_min_k = t.non_negative("t_min_k", r.tuning.t_min_k);
        r.tuning.t_max_k = t.non_negative("t_max_k", r.tuning.t_max_k);
        if (!(r.tuning.t_max_k >= r.tuning.t_min_k)) throw UsageError(t.where("t_max_k") + ": must be >= t_min_k");
        r.tuning.qd_mev_per_k = t.number("qd_mev_per_k", r.tuning.qd_mev_per_k);
        r.tuning.mode_mev_per_k = t.number("mode_mev_per_k", r.tuning.mode_mev_per_k);
    }
    if (s.has("diameter_grid_um")) c.grid = parse_grid(s.child("diameter_grid_um", {"start", "stop", "step"}));
    r.diameter_grid_um = make_grid(c.grid, "diameter_grid_um");
    r.q_factor = s.positive("q_factor", r.q_factor);
    const long long trials = s.integer("trials", static_cast<long long>(r.trials));
    if (trials < 1 || trials > 100000000) throw UsageError("trials: must be in [1, 1e8]");
    r.trials = static_cast<std::size_t>(trials);
    return c;
}

nlohmann::json load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error("config file not found: " + path.string());
    try {
        return io::read_json_file(path);
    } catch (const ParseError& e) {
        throw UsageError(e.what());
    }
}

}  // namespace dotfoundry::cli
