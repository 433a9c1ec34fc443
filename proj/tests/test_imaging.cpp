#include <doctest.h>

#include "dotfoundry/imaging.hpp"
#include "dotfoundry/localization.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

using namespace dotfoundry;
using testing::TempDir;

namespace {

constexpr double kPitch = 120.0;

SceneSpec emitter_only(double x_px, double y_px, PsfProfile profile, double peak = 1000.0) {
    SceneSpec s;
    s.emitter = {px_to_nm(x_px, kPitch), px_to_nm(y_px, kPitch), peak, 1000.0, profile};
    s.focus = FocusPlane::EmitterPlane;
    return s;
}

MarkSpec cross(double x_nm, double y_nm, double counts) {
    MarkSpec m;
    m.center_x_nm = x_nm;
    m.center_y_nm = y_nm;
    m.arm_length_nm = 3000.0;
    m.arm_width_nm = 500.0;
    m.reflectance_counts = counts;
    m.edge_blur_nm = 200.0;
    return m;
}

}  // namespace

TEST_CASE("noise-free emitter on a pixel center is mirror symmetric") {
    for (PsfProfile profile : {PsfProfile::Gaussian, PsfProfile::Lorentzian}) {
        const FrameGeometry g{21, 21, kPitch};
        const Frame f = expected_image(emitter_only(10, 10, profile), g);
        const auto peak = std::max_element(f.pixels.begin(), f.pixels.end()) - f.pixels.begin();
        CHECK(peak == 10 * 21 + 10);
        for (int iy = 0; iy < 21; ++iy) {
            for (int ix = 0; ix < 21; ++ix) {
                CHECK(std::fabs(f.at(ix, iy) - f.at(20 - ix, iy)) <= 1e-12 * f.at(ix, iy));
                CHECK(std::fabs(f.at(ix, iy) - f.at(ix, 20 - iy)) <= 1e-12 * f.at(ix, iy));
            }
        }
    }
}

TEST_CASE("expected flux matches the analytic integrals") {
    const FrameGeometry g{96, 96, kPitch};
    SceneSpec s = emitter_only(47.5, 47.5, PsfProfile::Gaussian, 500.0);
    s.background_counts = 7.0;
    s.marks.push_back(cross(2500.0, 2500.0, 80.0));
    s.marks.push_back(cross(8500.0, 2500.0, 80.0));
    const Frame f = expected_image(s, g);
    double total = 0.0;
    for (double v : f.pixels) total += v;

    const double sigma = 1000.0 / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    const double emitter = 500.0 * 2.0 * std::numbers::pi * sigma * sigma / (kPitch * kPitch);
    const double cross_area = 2.0 * 3000.0 * 500.0 - 500.0 * 500.0;
    const double marks = 2.0 * 80.0 * cross_area / (kPitch * kPitch);
    const double analytic = 7.0 * 96 * 96 + emitter + marks;
    CHECK(std::fabs(total - analytic) <= 0.005 * analytic);
}

TEST_CASE("rendering is deterministic in the seed") {
    const FrameGeometry g{32, 32, kPitch};
    const SceneSpec s = emitter_only(15.2, 16.7, PsfProfile::Lorentzian, 300.0);
    NoiseSpec n{true, 10.0, 2.0, true, 42};
    const Frame a = render_frame(s, n, g);
    const Frame b = render_frame(s, n, g);
    CHECK(a.pixels == b.pixels);
    n.seed = 43;
    CHECK(render_frame(s, n, g).pixels != a.pixels);
}

TEST_CASE("shot noise is unbiased") {
    const FrameGeometry g{6, 6, kPitch};
    SceneSpec s = emitter_only(2.5, 2.5, PsfProfile::Gaussian, 40.0);
    s.background_counts = 3.0;
    const Frame expected = expected_image(s, g);
    const int n = 10000;
    std::vector<double> sum(expected.pixels.size(), 0.0);
    for (int r = 0; r < n; ++r) {
        const Frame f = apply_noise(expected, NoiseSpec{true, 1.0, 0.0, false, static_cast<std::uint64_t>(r)});
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += f.pixels[i];
    }
    for (std::size_t i = 0; i < sum.size(); ++i) {
        const double standard_error = std::sqrt(expected.pixels[i] / n);
        CHECK(std::fabs(sum[i] / n - expected.pixels[i]) <= 3.0 * standard_error);
    }
}

TEST_CASE("EM gain doubles the shot-noise variance") {
    const double gain = 300.0;
    Frame expected(4, 4, kPitch, 0.1);
    for (std::size_t i = 0; i < expected.pixels.size(); ++i) expected.pixels[i] = 2.0 + 3.0 * i;
    const int n = 10000;
    std::vector<std::vector<double>> samples(expected.pixels.size());
    for (int r = 0; r < n; ++r) {
        const Frame f = apply_noise(expected, NoiseSpec{true, gain, 0.0, false, 1000u + r});
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i].push_back(f.pixels[i]);
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double var = std::pow(testing::stddev(samples[i]), 2);
        const double model = 2.0 * gain * gain * expected.pixels[i];
        CHECK(std::fabs(var / model - 1.0) < 0.10);
        CHECK(std::fabs(testing::mean(samples[i]) / (gain * expected.pixels[i]) - 1.0) < 0.05);
    }
}

TEST_CASE("marks fade when focused on the emitter plane") {
    const FrameGeometry g{64, 48, kPitch};
    SceneSpec s = emitter_only(50, 40, PsfProfile::Lorentzian, 100.0);
    s.marks.push_back(cross(3000.0, 3000.0, 200.0));
    s.defocus_blur_nm = {800.0, 800.0};
    s.focus = FocusPlane::SurfacePlane;
    const Frame surface = expected_image(s, g);
    s.focus = FocusPlane::EmitterPlane;
    const Frame emitter = expected_image(s, g);
    const int mx = static_cast<int>(nm_to_px(3000.0, kPitch) + 0.5);
    const int my = mx;
    CHECK(emitter.at(mx, my) < 0.9 * surface.at(mx, my));
    CHECK(surface.at(50, 40) < 0.9 * emitter.at(50, 40));
}

TEST_CASE("two marks 10 um apart are re-estimated within their uncertainty") {
    const FrameGeometry g{128, 64, kPitch};
    SceneSpec s;
    s.emitter = {7000.0, 5000.0, 800.0, 1000.0, PsfProfile::Lorentzian};
    s.background_counts = 10.0;
    s.focus = FocusPlane::SurfacePlane;
    s.marks = {cross(2510.0, 3000.0, 150.0), cross(12510.0, 3000.0, 150.0)};
    const Frame f = render_frame(s, NoiseSpec{true, 1.0, 1.0, true, 9}, g);
    s.focus = FocusPlane::EmitterPlane;
    const Frame e = render_frame(s, NoiseSpec{true, 1.0, 1.0, true, 10}, g);
    MarkLayout layout;
    layout.marks = {{"A", 2510.0, 3000.0, {10, 14, 30, 34}}, {"B", 12510.0, 3000.0, {93, 14, 113, 34}}};
    layout.arm_length_nm = 3000.0;
    layout.arm_width_nm = 500.0;
    const LocalizationReport r = localize(f, e, layout);
    const auto& a = r.marks[0].x;
    const auto& b = r.marks[1].x;
    const double measured_px = b.center_px - a.center_px;
    const double sigma_px = std::hypot(a.sigma_center_px, b.sigma_center_px);
    CHECK(std::fabs(measured_px * kPitch - 10000.0) <= 3.0 * sigma_px * kPitch);
}

TEST_CASE("geometry and scene validation") {
    const SceneSpec s = emitter_only(5, 5, PsfProfile::Gaussian);
    CHECK_THROWS_AS(expected_image(s, FrameGeometry{16, 16, 0.0}), ArgumentError);
    CHECK_THROWS_AS(expected_image(s, FrameGeometry{0, 16, kPitch}), ArgumentError);
    CHECK_THROWS_AS(expected_image(emitter_only(40, 5, PsfProfile::Gaussian), FrameGeometry{16, 16, kPitch}), BoundsError);
    SceneSpec with_mark = s;
    with_mark.marks.push_back(cross(100.0, 100.0, 10.0));
    CHECK_THROWS_AS(expected_image(with_mark, FrameGeometry{16, 16, kPitch}), BoundsError);
    CHECK_THROWS_AS(apply_noise(Frame(2, 2, kPitch, 0.1), NoiseSpec{false, 0.5, 0.0, true, 0}), ArgumentError);
}

TEST_CASE("frame file round trip") {
    TempDir dir("imaging");
    const FrameGeometry g{40, 30, 117.5, 0.25};
    const Frame f = render_frame(emitter_only(20.3, 14.8, PsfProfile::Lorentzian, 5000.0),
                                 NoiseSpec{true, 20.0, 4.0, true, 5}, g);
    write_frame(f, dir / "f.pgm");
    CHECK(std::filesystem::exists(dir / "f.json"));
    const Frame back = read_frame(dir / "f.pgm");
    CHECK(back.width == 40);
    CHECK(back.height == 30);
    CHECK(back.pixel_pitch_nm == 117.5);
    CHECK(back.exposure_s == 0.25);
    CHECK(back.pixels == f.pixels);

    Frame fractional(2, 2, kPitch, 0.1, 1.5);
    CHECK_THROWS_AS(write_frame(fractional, dir / "bad.pgm"), ArgumentError);
}

TEST_CASE("8-bit frames and malformed files") {
    TempDir dir("imaging_bad");
    auto write = [&](const std::string& name, const std::string& bytes, bool sidecar = true) {
        std::ofstream(dir / name, std::ios::binary) << bytes;
        if (sidecar) {
            std::filesystem::path side = dir / name;
            side.replace_extension(".json");
            std::ofstream(side) << R"({"pixel_pitch_nm": 100.0, "exposure_s": 0.1})";
        }
        return dir / name;
    };
    const Frame eight = read_frame(write("eight.pgm", std::string("P5\n# c\n2 1\n255\n") + char(7) + char(200)));
    CHECK(eight.pixels == std::vector<double>{7.0, 200.0});
    CHECK(eight.pixel_pitch_nm == 100.0);

    try {
        read_frame(write("trunc.pgm", "P5\n4 4\n65535\n\x01\x02\x03"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.unit() == ParseError::Unit::Byte);
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    CHECK_THROWS_AS(read_frame(write("magic.pgm", "P2\n1 1\n255\n1")), ParseError);
    try {
        read_frame(write("header.pgm", "P5\n4 x\n255\n"));
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.location() == 5);
    }
    CHECK_THROWS_AS(read_frame(write("nosidecar.pgm", std::string("P5 1 1 255\n") + char(1), false)), Error);
    CHECK_THROWS_AS(read_frame(dir / "missing.pgm"), Error);
}
