#pragma once

#include "dotfoundry/cavity_design.hpp"
#include "dotfoundry/errors.hpp"
#include "dotfoundry/imaging.hpp"
#include "dotfoundry/localization.hpp"
#include "dotfoundry/photon_stats.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace dotfoundry::cli {

/// Bad configuration or invocation; maps to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Typed, strict view of one JSON object. Unknown keys are rejected on
/// construction; getters throw UsageError naming the dotted key path.
class Section {
public:
    Section(const nlohmann::json& j, std::string path, std::initializer_list<const char*> allowed);

    bool has(const char* key) const { return json_.contains(key); }
    double number(const char* key) const;
    double number(const char* key, double fallback) const;
    double positive(const char* key) const;
    double positive(const char* key, double fallback) const;
    double non_negative(const char* key, double fallback) const;
    long long integer(const char* key, long long fallback) const;
    std::uint64_t seed(const char* key) const;
    bool boolean(const char* key, bool fallback) const;
    std::string string(const char* key) const;
    std::string string(const char* key, const std::string& fallback) const;
    const nlohmann::json& raw(const char* key) const;
    Section child(const char* key, std::initializer_list<const char*> allowed) const;
    std::string where(const char* key) const;

private:
    const nlohmann::json& json_;
    std::string path_;
};

struct GridSpec {
    double start_um = 0.0;
    double stop_um = 0.0;
    double step_um = 0.0;
};

enum class FocusSelection { Surface, Emitter, Both };

struct FrameSimConfig {
    SceneSpec scene;
    std::vector<std::string> mark_ids;
    FrameGeometry geometry;
    NoiseSpec noise;  ///< seed filled per frame
    FocusSelection focus = FocusSelection::Both;
    std::string calibration_a;
    std::string calibration_b;
    Axis calibration_axis = Axis::X;
    int search_halfwindow_px = 12;
    int count = 1;
    double emitter_jitter_nm = 0.0;
    std::optional<std::uint64_t> seed;
};

struct LocalizeConfig {
    LocalizationOptions options;
    double bin_width_nm = 2.0;
};

struct DesignConfig {
    PlanarCavity cavity;
    ModeIndex mode = ModeIndex::fundamental();
    std::optional<double> target_ev;
    GridSpec grid{0.5, 10.0, 0.5};
    GridSpec curve{0.5, 10.0, 0.1};
};

struct HistogramConfig {
    HistogramSimulation simulation;
    std::optional<std::uint64_t> seed;
};

struct EfficiencyInputs {
    std::optional<double> detected_counts_per_s;
    double sigma_detected_counts_per_s = 0.0;
    double rep_rate_hz = 79.3e6;
    std::optional<double> transmission;
    double transmission_rel_err = 0.0;
    std::optional<Measured> g2;
};

struct CharacterizeConfig {
    std::optional<std::filesystem::path> reference_trace;
    std::optional<std::filesystem::path> cavity_trace;
    std::optional<TimeWindow> lifetime_window;
    std::optional<Measured> reference_lifetime_ps;
    std::optional<Measured> cavity_lifetime_ps;
    std::optional<std::filesystem::path> spectrum;
    std::optional<std::filesystem::path> saturation;
    std::optional<std::filesystem::path> histogram;
    std::optional<double> g2_integration_halfwidth_ns;
    std::optional<std::filesystem::path> budget_path;
    std::optional<std::vector<BudgetElement>> budget;
    EfficiencyInputs efficiency;
};

struct YieldConfig {
    YieldRequest request;
    GridSpec grid{0.5, 10.0, 0.5};
    std::optional<std::uint64_t> seed;
};

/// Relative paths inside a config resolve against `base_dir`.
FrameSimConfig parse_frame_config(const nlohmann::json& j);
LocalizeConfig parse_localize_config(const nlohmann::json& j);
DesignConfig parse_design_config(const nlohmann::json& j);
HistogramConfig parse_histogram_config(const nlohmann::json& j);
CharacterizeConfig parse_characterize_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
YieldConfig parse_yield_config(const nlohmann::json& j);

/// Reads a config file; a missing file is a runtime error, bad JSON a usage error.
nlohmann::json load_config(const std::filesystem::path& path);

std::vector<double> make_grid(const GridSpec& grid, const std::string& what);

}  // namespace dotfoundry::cli
