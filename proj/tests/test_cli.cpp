#include <doctest.h>

#include "dotfoundry/cli.hpp"
#include "dotfoundry/io.hpp"
#include "test_support.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace dotfoundry;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(DOTFOUNDRY_SOURCE_DIR) / "configs";

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "dotfoundry");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path write_text(const fs::path& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
    return path;
}

std::vector<std::string> listing(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::recursive_directory_iterator(dir)) names.push_back(fs::relative(e.path(), dir).string());
    std::sort(names.begin(), names.end());
    return names;
}

// `text` with every occurrence of `dir` replaced by a fixed token.
std::string without(std::string text, const std::string& dir) {
    for (auto at = text.find(dir); at != std::string::npos; at = text.find(dir, at)) text.replace(at, dir.size(), "OUT");
    return text;
}

nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(read_text(path)); }

// Scene config with the given JSON fragments substituted into a minimal frame config.
std::string scene_config(const std::string& pitch, const std::string& extra = "") {
    return R"({"seed": 5, "geometry": {"width_px": 128, "height_px": 96, "pixel_pitch_nm": )" + pitch +
           R"(}, "emitter": {"x_nm": 7500.0, "y_nm": 8400.0, "peak_counts": 600.0, "psf_fwhm_nm": 1000.0},
               "marks": [{"id": "A", "center_x_nm": 2700.0, "center_y_nm": 3000.0, "reflectance_counts": 100.0},
                         {"id": "B", "center_x_nm": 12700.0, "center_y_nm": 3000.0, "reflectance_counts": 100.0}])" +
           extra + "}";
}

struct EnvSeed {
    explicit EnvSeed(const char* value) {
        if (value) ::setenv("DOTFOUNDRY_SEED", value, 1);
        else ::unsetenv("DOTFOUNDRY_SEED");
    }
    ~EnvSeed() { ::unsetenv("DOTFOUNDRY_SEED"); }
};

}  // namespace

TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(run({}).code == cli::kUsageError);
    CHECK(run({"--help"}).code == cli::kSuccess);
    CHECK(run({"frobnicate"}).code == cli::kUsageError);
    CHECK(run({"design", "--no-such-flag"}).code == cli::kUsageError);
    CHECK(run({"characterize"}).code == cli::kUsageError);
}

TEST_CASE("minimal frame config writes two files and reruns bit-identically") {
    TempDir a("cli_min_a"), b("cli_min_b");
    const std::string config = (kConfigs / "minimal_scene.json").string();
    const Run first = run({"simulate-frame", "-c", config, "--focus", "surface", "-o", a.path().string()});
    REQUIRE(first.code == 0);
    CHECK(listing(a.path()) == std::vector<std::string>{"surface.json", "surface.pgm"});
    const Run second = run({"simulate-frame", "-c", config, "--focus", "surface", "-o", b.path().string()});
    CHECK(without(second.out, b.path().string()) == without(first.out, a.path().string()));
    CHECK(read_text(a / "surface.pgm") == read_text(b / "surface.pgm"));
    CHECK(read_text(a / "surface.json") == read_text(b / "surface.json"));
}

TEST_CASE("config errors name the field") {
    TempDir dir("cli_cfg");
    const Run pitch = run({"simulate-frame", "-c", write_text(dir / "p.json", scene_config("0.0")).string(), "-o",
                           dir.path().string()});
    CHECK(pitch.code == cli::kUsageError);
    CHECK(pitch.err.find("geometry.pixel_pitch_nm") != std::string::npos);

    const Run negative = run({"simulate-frame", "-c", write_text(dir / "n.json", scene_config("-5")).string()});
    CHECK(negative.code == cli::kUsageError);

    const Run unknown = run({"simulate-frame", "-c",
                             write_text(dir / "u.json", scene_config("120", R"(, "colour": "blue")")).string()});
    CHECK(unknown.code == cli::kUsageError);
    CHECK(unknown.err.find("colour") != std::string::npos);

    const Run syntax = run({"design", "-c", write_text(dir / "s.json", "{\"cavity\": ").string()});
    CHECK(syntax.code == cli::kUsageError);

    CHECK(run({"design", "-c", (dir / "absent.json").string()}).code == cli::kRuntimeError);
}

TEST_CASE("simulate then localize round trip") {
    TempDir dir("cli_loc");
    const std::string config = scene_config(
        "120", R"(, "noise": {"photon_shot": false, "emccd_gain": 1, "read_noise_rms": 0, "quantize": true},
                   "background_counts": 20.0)");
    const Run sim = run({"simulate-frame", "-c", write_text(dir / "scene.json", config).string(), "-o", dir.path().string()});
    REQUIRE(sim.code == 0);
    const auto truth = nlohmann::json::parse(sim.out);

    const Run loc = run({"localize", "--surface", (dir / "surface.pgm").string(), "--emitter",
                         (dir / "emitter.pgm").string(), "--layout", (dir / "layout.json").string(), "-o",
                         dir.path().string()});
    REQUIRE(loc.code == 0);
    const auto report = read_json(dir / "localization.json");
    const double tx = truth["emitter"]["x_nm"].get<double>() - truth["marks"][0]["x_nm"].get<double>();
    const double ty = truth["emitter"]["y_nm"].get<double>() - truth["marks"][0]["y_nm"].get<double>();
    const auto& sep = report["separations"][0];
    CHECK(std::fabs(sep["delta_x_nm"].get<double>() - tx) < 5.0);
    CHECK(std::fabs(sep["delta_y_nm"].get<double>() - ty) < 5.0);

    const Run missing = run({"localize", "--surface", (dir / "nope.pgm").string(), "--emitter",
                             (dir / "emitter.pgm").string(), "--layout", (dir / "layout.json").string()});
    CHECK(missing.code == cli::kRuntimeError);
    CHECK(run({"localize", "--surface", (dir / "surface.pgm").string()}).code == cli::kUsageError);
}

TEST_CASE("batch localization summarizes every scene") {
    TempDir dir("cli_batch");
    const std::string config = (kConfigs / "marker_scene.json").string();
    REQUIRE(run({"simulate-frame", "-c", config, "--count", "3", "-o", dir.path().string()}).code == 0);
    CHECK(fs::exists(dir / "scene_002" / "layout.json"));
    const Run batch = run({"localize", "--batch", dir.path().string()});
    REQUIRE(batch.code == 0);
    const auto summary = read_json(dir / "localization_summary.json");
    CHECK(summary["scenes"].get<int>() == 3);
    CHECK(summary["localized"].get<int>() == 3);
    const double mean = summary["uncertainty"]["emitter"]["mean_nm"].get<double>();
    CHECK(mean > 5.0);
    CHECK(mean < 25.0);
    CHECK(fs::exists(dir / "histogram_separation.csv"));
}

TEST_CASE("design command") {
    TempDir dir("cli_design");
    const std::string config = (kConfigs / "pillar_design.json").string();
    REQUIRE(run({"design", "-c", config, "-o", dir.path().string()}).code == 0);
    const auto design = read_json(dir / "design.json")["design"];
    CHECK(design["diameter_um"].get<double>() == 1.5);

    // Targeting a grid mode exactly gives zero detuning.
    const double e_mode = design["e_mode_ev"].get<double>();
    REQUIRE(run({"design", "-c", config, "--target-ev", std::to_string(e_mode), "-o", dir.path().string()}).code == 0);
    CHECK(std::fabs(read_json(dir / "design.json")["design"]["detuning_mev"].get<double>()) < 1e-3);

    const io::CsvTable curve = io::read_csv(dir / "mode_curve.csv");
    CHECK(curve.header == std::vector<std::string>{"diameter_um", "energy_eV", "wavelength_nm"});
    const auto energy = curve.column(1);
    for (std::size_t i = 1; i < energy.size(); ++i) CHECK(energy[i] < energy[i - 1]);

    const Run infeasible = run({"design", "-c", config, "--target-nm", "930", "-o", dir.path().string()});
    CHECK(infeasible.code == cli::kUsageError);
    CHECK(infeasible.err.find("planar") != std::string::npos);
}

TEST_CASE("characterize command") {
    TempDir dir("cli_char");
    REQUIRE(run({"characterize", "--budget", (kConfigs / "detection_budget.json").string(), "-o", dir.path().string()})
                .code == 0);
    const auto budget = read_json(dir / "source_report.json")["budget"]["overall"];
    CHECK(std::fabs(budget["transmission"].get<double>() - 0.027) <= 0.001);
    CHECK(std::fabs(100.0 * budget["rel_err"].get<double>() - 9.1) <= 0.2);

    REQUIRE(run({"characterize", "-c", (kConfigs / "source_characterization.json").string(), "-o",
                 dir.path().string()})
                .code == 0);
    const auto report = read_json(dir / "source_report.json");
    CHECK(std::fabs(report["extraction_efficiency"]["value"].get<double>() - 0.65) <= 0.01);
    CHECK(std::fabs(report["purcell_factor"]["value"].get<double>() - 2.11) < 0.005);

    write_text(dir / "trace.csv", "time_ps,counts\n0,1\n16,2\n32,x\n");
    const Run malformed = run({"characterize", "--reference-trace", (dir / "trace.csv").string()});
    CHECK(malformed.code == cli::kRuntimeError);
    CHECK(malformed.err.find("trace.csv:line 4") != std::string::npos);
    CHECK(run({"characterize", "--spectrum", (dir / "missing.csv").string()}).code == cli::kRuntimeError);
}

TEST_CASE("seed precedence: flag, config, environment") {
    TempDir dir("cli_seed");
    const fs::path config = write_text(dir / "h.json", R"({"g2_target": 0.2, "total_pairs": 20000})");
    auto histogram = [&](std::vector<std::string> extra) {
        std::vector<std::string> args{"simulate-histogram", "-c", config.string(), "-o", dir.path().string()};
        args.insert(args.end(), extra.begin(), extra.end());
        REQUIRE(run(args).code == 0);
        return read_text(dir / "histogram.csv");
    };
    std::string from_env, from_flag, other;
    {
        EnvSeed env("123");
        from_env = histogram({});
    }
    {
        EnvSeed env(nullptr);
        from_flag = histogram({"--seed", "123"});
        other = histogram({});
    }
    CHECK(from_env == from_flag);
    CHECK(other != from_env);
    {
        EnvSeed env("999");
        CHECK(histogram({"--seed", "123"}) == from_flag);
    }
    {
        EnvSeed env("not-a-number");
        CHECK(run({"simulate-histogram", "-c", config.string(), "-o", dir.path().string()}).code == cli::kUsageError);
    }
}

TEST_CASE("yield output does not depend on the thread count") {
    TempDir a("cli_yield_a"), b("cli_yield_b");
    const std::string config = (kConfigs / "device_yield.json").string();
    REQUIRE(run({"yield", "-c", config, "--trials", "2000", "--threads", "1", "-o", a.path().string()}).code == 0);
    REQUIRE(run({"yield", "-c", config, "--trials", "2000", "--threads", "3", "-o", b.path().string()}).code == 0);
    CHECK(read_text(a / "yield.json") == read_text(b / "yield.json"));
    CHECK(run({"yield", "-c", config, "--threads", "0"}).code == cli::kUsageError);
}
