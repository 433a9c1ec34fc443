#include "dotfoundry/cli.hpp"

#include "config.hpp"
#include "dotfoundry/io.hpp"
#include "dotfoundry/rng.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <thread>

namespace dotfoundry::cli {
namespace {

namespace fs = std::filesystem;
using io::Json;

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out = ".";
    int threads = 1;
    bool verbose = false;
};

void add_common(CLI::App* sub, Common& c, bool with_seed) {
    sub->add_option("-c,--config", c.config, "JSON configuration file");
    if (with_seed) sub->add_option("--seed", c.seed, "RNG seed (overrides config and DOTFOUNDRY_SEED)");
    sub->add_option("-o,--out", c.out, "output directory")->capture_default_str();
    sub->add_option("--threads", c.threads, "worker threads; results do not depend on it")
        ->check(CLI::Range(1, 64))
        ->capture_default_str();
    sub->add_flag("-v,--verbose", c.verbose, "progress on stderr");
}

// Flag, then config, then DOTFOUNDRY_SEED, then 0.
std::uint64_t resolve_seed(const CLI::App* sub, const Common& c, std::optional<std::uint64_t> from_config) {
    if (sub->count("--seed") > 0) return c.seed;
    if (from_config) return *from_config;
    if (const char* env = std::getenv("DOTFOUNDRY_SEED"); env && *env) {
        char* end = nullptr;
        errno = 0;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (errno != 0 || *end != '\0' || env[0] == '-') {
            throw UsageError(std::string("DOTFOUNDRY_SEED: not an unsigned integer: '") + env + "'");
        }
        return v;
    }
    return 0;
}

nlohmann::json config_or_empty(const Common& c) {
    return c.config.empty() ? nlohmann::json::object() : load_config(c.config);
}

fs::path out_dir(const Common& c) {
    fs::path dir(c.out);
    fs::create_directories(dir);
    return dir;
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

// Runs body(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t n, int threads, F body) {
    const std::size_t workers = std::min<std::size_t>(std::max(threads, 1), std::max<std::size_t>(n, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

// simulate-frame

MarkLayout layout_for(const FrameSimConfig& cfg) {
    MarkLayout layout;
    const double pitch = cfg.geometry.pixel_pitch_nm;
    const int hw = cfg.search_halfwindow_px;
    for (std::size_t i = 0; i < cfg.scene.marks.size(); ++i) {
        const MarkSpec& m = cfg.scene.marks[i];
        const int cx = static_cast<int>(std::lround(nm_to_px(m.center_x_nm, pitch)));
        const int cy = static_cast<int>(std::lround(nm_to_px(m.center_y_nm, pitch)));
        SearchWindow w{std::max(cx - hw, 0), std::max(cy - hw, 0), std::min(cx + hw, cfg.geometry.width_px - 1),
                       std::min(cy + hw, cfg.geometry.height_px - 1)};
        layout.marks.push_back({cfg.mark_ids[i], m.center_x_nm, m.center_y_nm, w});
        if (cfg.mark_ids[i] == cfg.calibration_a) layout.calibration_a = i;
        if (cfg.mark_ids[i] == cfg.calibration_b) layout.calibration_b = i;
    }
    layout.arm_length_nm = cfg.scene.marks.front().arm_length_nm;
    layout.arm_width_nm = cfg.scene.marks.front().arm_width_nm;
    layout.calibration_axis = cfg.calibration_axis;
    return layout;
}

int cmd_simulate_frame(const CLI::App* sub, const Common& common, std::optional<int> count,
                       const std::string& focus_override, std::ostream& out, std::ostream& err) {
    if (common.config.empty()) throw UsageError("simulate-frame: --config is required");
    FrameSimConfig cfg = parse_frame_config(load_config(common.config));
    if (count) {
        if (*count < 1) throw UsageError("--count: must be >= 1");
        cfg.count = *count;
    }
    if (!focus_override.empty()) {
        cfg.focus = focus_override == "surface"   ? FocusSelection::Surface
                    : focus_override == "emitter" ? FocusSelection::Emitter
                                                  : FocusSelection::Both;
    }
    const std::uint64_t seed = resolve_seed(sub, common, cfg.seed);
    const bool surface = cfg.focus != FocusSelection::Emitter;
    const bool emitter = cfg.focus != FocusSelection::Surface;
    const bool write_layout = cfg.focus == FocusSelection::Both && cfg.scene.marks.size() >= 2;
    if (cfg.focus == FocusSelection::Both && cfg.scene.marks.size() < 2) {
        throw UsageError("marks: focus 'both' needs at least two marks for a layout");
    }
    const fs::path root = out_dir(common);
    Json truths = Json::array();
    for (int i = 0; i < cfg.count; ++i) {
        Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
        SceneSpec scene = cfg.scene;
        if (cfg.emitter_jitter_nm > 0.0) {
            scene.emitter.x_nm += rng.uniform(-cfg.emitter_jitter_nm, cfg.emitter_jitter_nm);
            scene.emitter.y_nm += rng.uniform(-cfg.emitter_jitter_nm, cfg.emitter_jitter_nm);
        }
        const std::uint64_t surface_seed = rng.next_u64();
        const std::uint64_t emitter_seed = rng.next_u64();

        fs::path dir = root;
        if (cfg.count > 1) {
            char name[32];
            std::snprintf(name, sizeof name, "scene_%03d", i);
            dir /= name;
            fs::create_directories(dir);
        }
        Json files = Json::array();
        auto render = [&](FocusPlane plane, std::uint64_t frame_seed, const char* file) {
            scene.focus = plane;
            NoiseSpec noise = cfg.noise;
            noise.seed = frame_seed;
            Frame frame;
            try {
                frame = render_frame(scene, noise, cfg.geometry);
            } catch (const BoundsError& e) {
                throw UsageError(e.what());
            } catch (const ArgumentError& e) {
                throw UsageError(e.what());
            }
            write_frame(frame, dir / file);
            files.push_back((dir / file).string());
        };
        if (surface) render(FocusPlane::SurfacePlane, surface_seed, "surface.pgm");
        if (emitter) render(FocusPlane::EmitterPlane, emitter_seed, "emitter.pgm");
        if (write_layout) {
            io::write_report(dir / "layout.json", io::to_json(layout_for(cfg)));
            files.push_back((dir / "layout.json").string());
        }

        Json truth;
        truth["scene"] = i;
        truth["seed"] = seed;
        truth["pixel_pitch_nm"] = cfg.geometry.pixel_pitch_nm;
        truth["emitter"] = {{"x_nm", scene.emitter.x_nm}, {"y_nm", scene.emitter.y_nm},
                            {"x_px", nm_to_px(scene.emitter.x_nm, cfg.geometry.pixel_pitch_nm)},
                            {"y_px", nm_to_px(scene.emitter.y_nm, cfg.geometry.pixel_pitch_nm)}};
        Json marks = Json::array();
        for (std::size_t m = 0; m < scene.marks.size(); ++m) {
            marks.push_back({{"id", cfg.mark_ids[m]},
                             {"x_nm", scene.marks[m].center_x_nm},
                             {"y_nm", scene.marks[m].center_y_nm}});
        }
        truth["marks"] = marks;
        truth["files"] = files;
        truths.push_back(truth);
        if (common.verbose) err << "simulate-frame: scene " << i << " -> " << dir.string() << "\n";
    }
    out << io::dump_report(cfg.count == 1 ? truths.front() : truths);
    return kSuccess;
}

// simulate-histogram

int cmd_simulate_histogram(const CLI::App* sub, const Common& common, std::optional<double> g2, std::ostream& out,
                           std::ostream& err) {
    HistogramConfig cfg = parse_histogram_config(config_or_empty(common));
    if (g2) {
        if (!(*g2 >= 0.0)) throw UsageError("--g2: must be >= 0");
        cfg.simulation.g2_target = *g2;
    }
    cfg.simulation.seed = resolve_seed(sub, common, cfg.seed);
    const CoincidenceHistogram hist = simulate_histogram(cfg.simulation);
    const fs::path path = out_dir(common) / "histogram.csv";
    io::write_histogram(path, hist);
    if (common.verbose) err << "simulate-histogram: wrote " << path.string() << "\n";
    const G2Result r = g2_zero(hist);
    out << "histogram: " << path.string() << "\n"
        << "g2(0) = " << fmt("%.4f", r.g2) << " +/- " << fmt("%.4f", r.sigma_g2) << " (target "
        << fmt("%.4f", cfg.simulation.g2_target) << ")\n";
    return kSuccess;
}

// localize

struct LocalizeArgs {
    std::string surface;
    std::string emitter;
    std::string layout;
    std::string batch;
};

void write_histogram_csv(const fs::path& path, const UncertaintyCategory& c) {
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < c.counts.size(); ++k) {
        rows.push_back({static_cast<double>(k) * c.bin_width_nm, static_cast<double>(c.counts[k])});
    }
    io::write_csv(path, {"bin_left_nm", "count"}, rows);
}

LocalizationReport localize_files(const fs::path& surface, const fs::path& emitter, const fs::path& layout,
                                  const LocalizationOptions& options) {
    const MarkLayout l = io::read_layout(layout);
    return localize(read_frame(surface), read_frame(emitter), l, options);
}

int cmd_localize(const Common& common, const LocalizeArgs& args, std::ostream& out, std::ostream& err) {
    const LocalizeConfig cfg = parse_localize_config(config_or_empty(common));
    if (args.batch.empty()) {
        if (args.surface.empty() || args.emitter.empty() || args.layout.empty()) {
            throw UsageError("localize: give --surface, --emitter and --layout, or --batch DIR");
        }
        const LocalizationReport report = localize_files(args.surface, args.emitter, args.layout, cfg.options);
        const fs::path path = out_dir(common) / "localization.json";
        io::write_report(path, io::to_json(report));
        const auto& e = report.emitter;
        out << "calibration: " << fmt("%.4f", report.calibration.nm_per_px) << " +/- "
            << fmt("%.4f", report.calibration.sigma_nm_per_px) << " nm/px\n"
            << "emitter: x = " << fmt("%.1f", e.x.center_nm) << " +/- " << fmt("%.1f", e.x.sigma_center_nm)
            << " nm, y = " << fmt("%.1f", e.y.center_nm) << " +/- " << fmt("%.1f", e.y.sigma_center_nm)
            << " nm (relative to mark " << report.calibration.source_marks.first << ")\n"
            << "report: " << path.string() << "\n";
        return kSuccess;
    }

    if (!args.surface.empty() || !args.emitter.empty() || !args.layout.empty()) {
        throw UsageError("localize: --batch cannot be combined with single-scene inputs");
    }
    const fs::path batch(args.batch);
    if (!fs::is_directory(batch)) throw Error("localize: batch directory not found: " + batch.string());
    std::vector<fs::path> scenes;
    for (const auto& entry : fs::directory_iterator(batch)) {
        const fs::path d = entry.path();
        if (entry.is_directory() && fs::exists(d / "surface.pgm") && fs::exists(d / "emitter.pgm") &&
            fs::exists(d / "layout.json")) {
            scenes.push_back(d);
        }
    }
    std::sort(scenes.begin(), scenes.end());
    if (scenes.empty()) throw Error("localize: no scene directories with surface.pgm, emitter.pgm, layout.json");

    std::vector<std::optional<LocalizationReport>> reports(scenes.size());
    std::vector<std::string> failures(scenes.size());
    std::mutex log;
    parallel_for(scenes.size(), common.threads, [&](std::size_t i) {
        const fs::path& d = scenes[i];
        try {
            reports[i] = localize_files(d / "surface.pgm", d / "emitter.pgm", d / "layout.json", cfg.options);
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
        if (common.verbose) {
            std::lock_guard lock(log);
            err << "localize: " << d.filename().string() << (reports[i] ? " ok" : " failed") << "\n";
        }
    });

    std::vector<LocalizationReport> ok;
    Json per_scene = Json::array();
    Json failed = Json::array();
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const std::string name = scenes[i].filename().string();
        if (reports[i]) {
            ok.push_back(*reports[i]);
            per_scene.push_back({{"scene", name}, {"report", io::to_json(*reports[i])}});
        } else {
            failed.push_back({{"scene", name}, {"error", failures[i]}});
            err << "localize: " << name << ": " << failures[i] << "\n";
        }
    }
    if (ok.empty()) throw Error("localize: every scene failed");
    const UncertaintySummary summary = uncertainty_histogram(ok, cfg.bin_width_nm);

    const fs::path dir = common.out == "." ? batch : out_dir(common);
    fs::create_directories(dir);
    Json j;
    j["scenes"] = scenes.size();
    j["localized"] = ok.size();
    j["failed"] = failed;
    j["uncertainty"] = io::to_json(summary);
    j["reports"] = per_scene;
    io::write_report(dir / "localization_summary.json", j);
    write_histogram_csv(dir / "histogram_emitter.csv", summary.emitter);
    write_histogram_csv(dir / "histogram_mark.csv", summary.mark);
    write_histogram_csv(dir / "histogram_separation.csv", summary.separation);

    out << "scenes: " << ok.size() << " of " << scenes.size() << " localized\n";
    for (const auto* c : {&summary.emitter, &summary.mark, &summary.separation}) {
        out << "mean uncertainty " << c->name << ": " << fmt("%.1f", c->mean_nm) << " nm (" << c->values_nm.size()
            << " values)\n";
    }
    out << "summary: " << (dir / "localization_summary.json").string() << "\n";
    return failed.empty() ? kSuccess : kRuntimeError;
}

// design

int cmd_design(const Common& common, std::optional<double> target_nm, std::optional<double> target_ev,
               std::ostream& out, std::ostream& err) {
    if (common.config.empty()) throw UsageError("design: --config is required");
    DesignConfig cfg = parse_design_config(load_config(common.config));
    if (target_nm && target_ev) throw UsageError("design: give only one of --target-nm or --target-ev");
    if (target_nm) {
        if (!(*target_nm > 0.0)) throw UsageError("--target-nm: must be > 0");
        cfg.target_ev = wavelength_to_energy_ev(*target_nm);
    }
    if (target_ev) {
        if (!(*target_ev > 0.0)) throw UsageError("--target-ev: must be > 0");
        cfg.target_ev = *target_ev;
    }
    if (!cfg.target_ev) throw UsageError("design: no target (target_ev, target_wavelength_nm, or a flag)");

    const PillarDesign d = select_radius(cfg.cavity, *cfg.target_ev, cfg.mode, make_grid(cfg.grid, "diameter_grid_um"));
    const auto curve = mode_curve(cfg.cavity, cfg.mode, make_grid(cfg.curve, "curve_diameters_um"));

    Json warnings = Json::array();
    const auto& sb = cfg.cavity.stopband_nm;
    if (d.lambda_mode_nm < sb.low_nm || d.lambda_mode_nm > sb.high_nm) {
        warnings.push_back("mode wavelength lies outside the mirror stopband");
    }
    Json j;
    j["cavity"] = {{"e2d_ev", cfg.cavity.e2d_ev},
                   {"e2d_wavelength_nm", energy_to_wavelength_nm(cfg.cavity.e2d_ev)},
                   {"epsilon_eff", cfg.cavity.epsilon_eff},
                   {"stopband_nm", {sb.low_nm, sb.high_nm}}};
    j["design"] = io::to_json(d);
    j["warnings"] = warnings;

    const fs::path dir = out_dir(common);
    io::write_report(dir / "design.json", j);
    std::vector<std::vector<double>> rows;
    for (const auto& p : curve) rows.push_back({p.diameter_um, p.energy_ev, p.wavelength_nm});
    io::write_csv(dir / "mode_curve.csv", {"diameter_um", "energy_eV", "wavelength_nm"}, rows);
    if (common.verbose) err << "design: wrote design.json and mode_curve.csv to " << dir.string() << "\n";

    out << "target: " << fmt("%.6f", d.target_ev) << " eV (" << fmt("%.3f", energy_to_wavelength_nm(d.target_ev))
        << " nm)\n"
        << "exact diameter: " << fmt("%.4f", 2.0 * d.exact_radius_nm / 1000.0) << " um\n"
        << "grid diameter: " << fmt("%.4f", d.diameter_um) << " um, mode " << fmt("%.6f", d.e_mode_ev) << " eV ("
        << fmt("%.3f", d.lambda_mode_nm) << " nm), detuning " << fmt("%.3f", d.detuning_mev) << " meV\n";
    for (const auto& w : warnings) out << "warning: " << w.get<std::string>() << "\n";
    return kSuccess;
}

// characterize

struct CharacterizeArgs {
    std::string reference_trace;
    std::string cavity_trace;
    std::string spectrum;
    std::string saturation;
    std::string histogram;
    std::string budget;
};

int cmd_characterize(const Common& common, const CharacterizeArgs& args, std::ostream& out, std::ostream& err) {
    const fs::path base = common.config.empty() ? fs::path() : fs::path(common.config).parent_path();
    CharacterizeConfig cfg = parse_characterize_config(config_or_empty(common), base);
    if (!args.reference_trace.empty()) cfg.reference_trace = args.reference_trace;
    if (!args.cavity_trace.empty()) cfg.cavity_trace = args.cavity_trace;
    if (!args.spectrum.empty()) cfg.spectrum = args.spectrum;
    if (!args.saturation.empty()) cfg.saturation = args.saturation;
    if (!args.histogram.empty()) cfg.histogram = args.histogram;
    if (!args.budget.empty()) {
        cfg.budget_path = args.budget;
        cfg.budget.reset();
    }

    Json report;
    Json warnings = Json::array();
    auto lifetime = [&](const std::optional<fs::path>& path, const std::optional<Measured>& given,
                        const char* label) -> std::optional<Measured> {
        if (path) {
            const LifetimeResult r = fit_lifetime(io::read_trace(*path), cfg.lifetime_window);
            report["lifetime"][label] = io::to_json(r);
            for (const auto& w : r.warnings) warnings.push_back(std::string(label) + " lifetime: " + w);
            return Measured{r.tau_ps, r.sigma_tau_ps};
        }
        if (given) {
            report["lifetime"][label] = {{"tau_ps", given->value}, {"sigma_tau_ps", given->sigma}, {"source", "input"}};
            return given;
        }
        return std::nullopt;
    };
    const auto tau_ref = lifetime(cfg.reference_trace, cfg.reference_lifetime_ps, "reference");
    const auto tau_cav = lifetime(cfg.cavity_trace, cfg.cavity_lifetime_ps, "cavity");
    if (tau_ref && tau_cav) report["purcell_factor"] = io::to_json(purcell_factor(*tau_ref, *tau_cav));

    if (cfg.spectrum) report["q_factor"] = io::to_json(q_factor(io::read_spectrum(*cfg.spectrum)));

    std::optional<Measured> saturated;
    if (cfg.saturation) {
        const auto series = io::read_saturation(*cfg.saturation);
        const SaturationResult r = fit_saturation(series.power, series.counts_per_s);
        report["saturation"] = io::to_json(r);
        saturated = r.saturated_counts_per_s;
    }

    std::optional<Measured> g2 = cfg.efficiency.g2;
    if (cfg.histogram) {
        const G2Result r = g2_zero(io::read_histogram(*cfg.histogram), cfg.g2_integration_halfwidth_ns);
        report["g2"] = io::to_json(r);
        if (!g2) g2 = Measured{r.g2, r.sigma_g2};
    }

    std::optional<Transmission> transmission;
    if (cfg.budget_path) cfg.budget = io::read_budget(*cfg.budget_path);
    if (cfg.budget) {
        const EfficiencyBudget b = efficiency_budget(*cfg.budget);
        report["budget"] = io::to_json(b);
        transmission = overall(b);
    }
    if (cfg.efficiency.transmission) {
        transmission = Transmission{*cfg.efficiency.transmission, cfg.efficiency.transmission_rel_err};
    }

    std::optional<double> detected = cfg.efficiency.detected_counts_per_s;
    double sigma_detected = cfg.efficiency.sigma_detected_counts_per_s;
    if (!detected && saturated) {
        detected = saturated->value;
        sigma_detected = saturated->sigma;
    }
    const bool any_efficiency_input = detected || cfg.efficiency.transmission || cfg.efficiency.g2;
    if (detected && transmission && g2) {
        const Measured eta =
            extraction_efficiency(*detected, cfg.efficiency.rep_rate_hz, *transmission, *g2, sigma_detected);
        report["extraction_efficiency"] = {{"detected_counts_per_s", *detected},
                                           {"rep_rate_hz", cfg.efficiency.rep_rate_hz},
                                           {"transmission", transmission->value},
                                           {"transmission_rel_err", transmission->rel_err},
                                           {"g2", g2->value},
                                           {"value", eta.value},
                                           {"sigma", eta.sigma}};
    } else if (any_efficiency_input) {
        warnings.push_back("extraction efficiency needs a detected rate, a transmission and g2; skipped");
    }
    if (report.empty()) throw UsageError("characterize: no inputs given");
    report["warnings"] = warnings;

    const fs::path path = out_dir(common) / "source_report.json";
    io::write_report(path, report);
    if (common.verbose) err << "characterize: wrote " << path.string() << "\n";

    if (report.contains("purcell_factor")) {
        out << "purcell factor: " << fmt("%.3f", report["purcell_factor"]["value"].get<double>()) << " +/- "
            << fmt("%.3f", report["purcell_factor"]["sigma"].get<double>()) << "\n";
    }
    if (report.contains("q_factor")) out << "Q: " << fmt("%.1f", report["q_factor"]["q"].get<double>()) << "\n";
    if (report.contains("g2")) out << "g2(0): " << fmt("%.4f", report["g2"]["g2"].get<double>()) << "\n";
    if (report.contains("budget")) {
        out << "transmission: " << fmt("%.4f", report["budget"]["overall"]["transmission"].get<double>()) << " +/- "
            << fmt("%.1f", 100.0 * report["budget"]["overall"]["rel_err"].get<double>()) << "%\n";
    }
    if (report.contains("extraction_efficiency")) {
        out << "extraction efficiency: " << fmt("%.3f", report["extraction_efficiency"]["value"].get<double>())
            << " +/- " << fmt("%.3f", report["extraction_efficiency"]["sigma"].get<double>()) << "\n";
    }
    for (const auto& w : warnings) out << "warning: " << w.get<std::string>() << "\n";
    out << "report: " << path.string() << "\n";
    return kSuccess;
}

// yield

int cmd_yield(const CLI::App* sub, const Common& common, std::optional<long long> trials, std::ostream& out,
              std::ostream& err) {
    if (common.config.empty()) throw UsageError("yield: --config is required");
    YieldConfig cfg = parse_yield_config(load_config(common.config));
    if (trials) {
        if (*trials < 1) throw UsageError("--trials: must be >= 1");
        cfg.request.trials = static_cast<std::size_t>(*trials);
    }
    cfg.request.seed = resolve_seed(sub, common, cfg.seed);
    cfg.request.threads = common.threads;
    const YieldEstimate y = estimate_yield(cfg.request);

    const auto& r = cfg.request;
    Json j;
    j["seed"] = r.seed;
    j["q_factor"] = r.q_factor;
    j["tuning"] = {{"t_min_k", r.tuning.t_min_k},
                   {"t_max_k", r.tuning.t_max_k},
                   {"qd_mev_per_k", r.tuning.qd_mev_per_k},
                   {"mode_mev_per_k", r.tuning.mode_mev_per_k}};
    j["grid_points"] = r.diameter_grid_um.size();
    j["estimate"] = io::to_json(y);
    const fs::path path = out_dir(common) / "yield.json";
    io::write_report(path, j);
    if (common.verbose) err << "yield: wrote " << path.string() << "\n";
    out << "yield: " << fmt("%.4f", y.yield_fraction) << " +/- " << fmt("%.4f", y.standard_error) << " (95% CI "
        << fmt("%.4f", y.ci_low) << " to " << fmt("%.4f", y.ci_high) << "), " << y.successes << " of " << y.trials
        << " trials\n";
    if (y.infeasible > 0) out << "warning: " << y.infeasible << " emitters were redder than the planar resonance\n";
    return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Quantum-dot source pipeline: localization, pillar design, photon statistics"};
    app.name(args.empty() ? "dotfoundry" : fs::path(args.front()).filename().string());
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    Common c_frame, c_hist, c_loc, c_design, c_char, c_yield;

    auto* frame = app.add_subcommand("simulate-frame", "render synthetic surface/emitter frames");
    add_common(frame, c_frame, true);
    std::optional<int> count;
    std::string focus;
    frame->add_option("--count", count, "number of scenes (overrides batch.count)");
    frame->add_option("--focus", focus, "surface, emitter or both")->check(CLI::IsMember({"surface", "emitter", "both"}));

    auto* hist = app.add_subcommand("simulate-histogram", "simulate a pulsed coincidence histogram");
    add_common(hist, c_hist, true);
    std::optional<double> g2;
    hist->add_option("--g2", g2, "target g2(0)");

    auto* loc = app.add_subcommand("localize", "locate an emitter relative to alignment marks");
    add_common(loc, c_loc, false);
    LocalizeArgs largs;
    loc->add_option("--surface", largs.surface, "surface-focus frame (PGM)");
    loc->add_option("--emitter", largs.emitter, "emitter-focus frame (PGM)");
    loc->add_option("--layout", largs.layout, "mark layout JSON");
    loc->add_option("--batch", largs.batch, "directory of scene_* subdirectories");

    auto* design = app.add_subcommand("design", "choose a pillar diameter for a target emitter line");
    add_common(design, c_design, false);
    std::optional<double> target_nm, target_ev;
    design->add_option("--target-nm", target_nm, "target wavelength in nm");
    design->add_option("--target-ev", target_ev, "target energy in eV");

    auto* chr = app.add_subcommand("characterize", "lifetime, Purcell, Q, g2, budget and efficiency report");
    add_common(chr, c_char, false);
    CharacterizeArgs cargs;
    chr->add_option("--reference-trace", cargs.reference_trace, "decay trace of the reference emitter (CSV)");
    chr->add_option("--cavity-trace", cargs.cavity_trace, "decay trace of the emitter in the cavity (CSV)");
    chr->add_option("--spectrum", cargs.spectrum, "cavity-mode spectrum (CSV)");
    chr->add_option("--saturation", cargs.saturation, "count rate vs. power (CSV)");
    chr->add_option("--histogram", cargs.histogram, "coincidence histogram (CSV + JSON sidecar)");
    chr->add_option("--budget", cargs.budget, "transmission budget (JSON)");

    auto* yld = app.add_subcommand("yield", "Monte-Carlo device yield");
    add_common(yld, c_yield, true);
    std::optional<long long> trials;
    yld->add_option("--trials", trials, "number of devices (overrides config)");

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    if (argv.empty()) argv.push_back("dotfoundry");
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kSuccess : kUsageError;
    }

    try {
        if (*frame) return cmd_simulate_frame(frame, c_frame, count, focus, out, err);
        if (*hist) return cmd_simulate_histogram(hist, c_hist, g2, out, err);
        if (*loc) return cmd_localize(c_loc, largs, out, err);
        if (*design) return cmd_design(c_design, target_nm, target_ev, out, err);
        if (*chr) return cmd_characterize(c_char, cargs, out, err);
        if (*yld) return cmd_yield(yld, c_yield, trials, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const InfeasibleTargetError& e) {
        err << "error: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kUsageError;
}

}  // namespace dotfoundry::cli
