#include "dotfoundry/imaging.hpp"

#include "dotfoundry/errors.hpp"
#include "dotfoundry/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>

namespace dotfoundry {

namespace {

constexpr double kFwhmPerSigma = 2.3548200450309493;  // 2 sqrt(2 ln 2)

struct EffectiveEmitter {
    PsfProfile profile;
    double peak;
    double width_nm;  // Gaussian sigma or Lorentzian HWHM
};

EffectiveEmitter effective_emitter(const SceneSpec& scene) {
    const EmitterSpec& e = scene.emitter;
    const double blur = scene.focus == FocusPlane::SurfacePlane ? scene.defocus_blur_nm.emitter_nm : 0.0;
    if (e.profile == PsfProfile::Gaussian) {
        const double sigma = e.psf_fwhm_nm / kFwhmPerSigma;
        const double blurred = std::sqrt(sigma * sigma + blur * blur);
        return {e.profile, e.peak_counts * (sigma * sigma) / (blurred * blurred), blurred};
    }
    // Lorentzian convolved with a Gaussian is a Voigt profile; keep a
    // Lorentzian whose FWHM matches the Voigt FWHM (Olivero-Longbothum).
    const double fl = e.psf_fwhm_nm;
    const double fg = kFwhmPerSigma * blur;
    const double fv = 0.5346 * fl + std::sqrt(0.2166 * fl * fl + fg * fg);
    const double ratio = fl / fv;
    return {e.profile, e.peak_counts * ratio * ratio, 0.5 * fv};
}

double emitter_density(const EffectiveEmitter& e, double dx, double dy) {
    const double r2 = dx * dx + dy * dy;
    if (e.profile == PsfProfile::Gaussian) return e.peak * std::exp(-0.5 * r2 / (e.width_nm * e.width_nm));
    return e.peak / (1.0 + r2 / (e.width_nm * e.width_nm));
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Antiderivative of the blurred unit step Phi((x - a)/s).
double step_antiderivative(double x, double a, double s) {
    if (s <= 0.0) return std::max(0.0, x - a);
    const double z = (x - a) / s;
    return (x - a) * normal_cdf(z) + s * normal_pdf(z);
}

// Integral over [x0, x1] of the indicator of [a, b] blurred by a Gaussian of sigma s.
double blurred_interval(double x0, double x1, double a, double b, double s) {
    return (step_antiderivative(x1, a, s) - step_antiderivative(x0, a, s)) -
           (step_antiderivative(x1, b, s) - step_antiderivative(x0, b, s));
}

// Mean mark intensity over one pixel; exact for the Gaussian-blurred cross.
double mark_pixel_mean(const MarkSpec& m, double blur, double x0, double x1, double y0, double y1) {
    const double hl = 0.5 * m.arm_length_nm;
    const double hw = 0.5 * m.arm_width_nm;
    const double cx = m.center_x_nm, cy = m.center_y_nm;
    // union(H, V) = H + V - (H intersect V); blurring is linear.
    const double horizontal = blurred_interval(x0, x1, cx - hl, cx + hl, blur) *
                              blurred_interval(y0, y1, cy - hw, cy + hw, blur);
    const double vertical = blurred_interval(x0, x1, cx - hw, cx + hw, blur) *
                            blurred_interval(y0, y1, cy - hl, cy + hl, blur);
    const double overlap = blurred_interval(x0, x1, cx - hw, cx + hw, blur) *
                           blurred_interval(y0, y1, cy - hw, cy + hw, blur);
    return m.reflectance_counts * (horizontal + vertical - overlap) / ((x1 - x0) * (y1 - y0));
}

void check_scene(const SceneSpec& scene, const FrameGeometry& g) {
    const double width_nm = g.width_px * g.pixel_pitch_nm;
    const double height_nm = g.height_px * g.pixel_pitch_nm;
    const EmitterSpec& e = scene.emitter;
    if (!(e.psf_fwhm_nm > 0.0)) throw ArgumentError("scene: emitter psf_fwhm_nm must be > 0");
    if (!(e.peak_counts >= 0.0)) throw ArgumentError("scene: emitter peak_counts must be >= 0");
    if (!(e.x_nm >= 0.0 && e.x_nm <= width_nm && e.y_nm >= 0.0 && e.y_nm <= height_nm)) {
        throw BoundsError("scene: emitter lies outside the frame");
    }
    if (!(scene.background_counts >= 0.0)) throw ArgumentError("scene: background_counts must be >= 0");
    if (!(scene.defocus_blur_nm.surface_nm >= 0.0 && scene.defocus_blur_nm.emitter_nm >= 0.0)) {
        throw ArgumentError("scene: defocus blur must be >= 0");
    }
    for (std::size_t i = 0; i < scene.marks.size(); ++i) {
        const MarkSpec& m = scene.marks[i];
        const std::string tag = "scene: mark " + std::to_string(i);
        if (!(m.arm_length_nm > 0.0 && m.arm_width_nm > 0.0 && m.arm_width_nm <= m.arm_length_nm)) {
            throw ArgumentError(tag + " needs 0 < arm_width_nm <= arm_length_nm");
        }
        if (!(m.reflectance_counts >= 0.0 && m.edge_blur_nm >= 0.0)) {
            throw ArgumentError(tag + " needs non-negative reflectance_counts and edge_blur_nm");
        }
        const double hl = 0.5 * m.arm_length_nm;
        if (m.center_x_nm - hl < 0.0 || m.center_x_nm + hl > width_nm || m.center_y_nm - hl < 0.0 ||
            m.center_y_nm + hl > height_nm) {
            throw BoundsError(tag + " lies outside the frame");
        }
    }
}

}  // namespace

Frame::Frame(int width_px, int height_px, double pitch_nm, double exposure, double fill)
    : width(width_px), height(height_px), pixel_pitch_nm(pitch_nm), exposure_s(exposure),
      pixels(static_cast<std::size_t>(std::max(width_px, 0)) * static_cast<std::size_t>(std::max(height_px, 0)), fill) {}

void Frame::validate() const {
    if (width <= 0 || height <= 0) throw ArgumentError("frame: width and height must be positive");
    if (!(pixel_pitch_nm > 0.0)) throw ArgumentError("frame: pixel_pitch_nm must be > 0");
    if (pixels.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw ArgumentError("frame: pixel buffer does not match width*height");
    }
    for (double v : pixels) {
        if (!std::isfinite(v) || v < 0.0) throw ArgumentError("frame: pixel values must be finite and >= 0");
    }
}

void NoiseSpec::validate() const {
    if (!(emccd_gain >= 1.0)) throw ArgumentError("noise: emccd_gain must be >= 1");
    if (!(read_noise_rms >= 0.0)) throw ArgumentError("noise: read_noise_rms must be >= 0");
}

void FrameGeometry::validate() const {
    if (width_px <= 0 || height_px <= 0) throw ArgumentError("geometry: width_px and height_px must be > 0");
    if (!(pixel_pitch_nm > 0.0)) throw ArgumentError("geometry: pixel_pitch_nm must be > 0");
    if (!(exposure_s > 0.0)) throw ArgumentError("geometry: exposure_s must be > 0");
}

Frame expected_image(const SceneSpec& scene, const FrameGeometry& g) {
    g.validate();
    check_scene(scene, g);
    Frame frame(g.width_px, g.height_px, g.pixel_pitch_nm, g.exposure_s, scene.background_counts);
    const double p = g.pixel_pitch_nm;

    const EffectiveEmitter emitter = effective_emitter(scene);
    constexpr int ns = kEmitterSubsamples;
    if (emitter.peak > 0.0) {
        for (int iy = 0; iy < g.height_px; ++iy) {
            for (int ix = 0; ix < g.width_px; ++ix) {
                double sum = 0.0;
                for (int sy = 0; sy < ns; ++sy) {
                    const double y = (iy + (sy + 0.5) / ns) * p;
                    for (int sx = 0; sx < ns; ++sx) {
                        const double x = (ix + (sx + 0.5) / ns) * p;
                        sum += emitter_density(emitter, x - scene.emitter.x_nm, y - scene.emitter.y_nm);
                    }
                }
                frame.at(ix, iy) += sum / (ns * ns);
            }
        }
    }

    const double surface_defocus = scene.focus == FocusPlane::EmitterPlane ? scene.defocus_blur_nm.surface_nm : 0.0;
    for (const MarkSpec& m : scene.marks) {
        const double blur = std::sqrt(m.edge_blur_nm * m.edge_blur_nm + surface_defocus * surface_defocus);
        for (int iy = 0; iy < g.height_px; ++iy) {
            for (int ix = 0; ix < g.width_px; ++ix) {
                frame.at(ix, iy) += mark_pixel_mean(m, blur, ix * p, (ix + 1) * p, iy * p, (iy + 1) * p);
            }
        }
    }
    for (double& v : frame.pixels) v = std::max(v, 0.0);
    return frame;
}

Frame apply_noise(const Frame& expected, const NoiseSpec& noise) {
    noise.validate();
    Frame out = expected;
    Rng rng(noise.seed);
    const bool em_register = noise.emccd_gain > 1.0;
    for (double& v : out.pixels) {
        double signal = noise.photon_shot ? static_cast<double>(rng.poisson(v)) : v;
        if (em_register) signal = signal > 0.0 ? rng.gamma(signal, noise.emccd_gain) : 0.0;
        if (noise.read_noise_rms > 0.0) signal += noise.read_noise_rms * rng.normal();
        signal = std::max(signal, 0.0);
        if (noise.quantize) signal = std::min(std::round(signal), 65535.0);
        v = signal;
    }
    return out;
}

Frame render_frame(const SceneSpec& scene, const NoiseSpec& noise, const FrameGeometry& geometry) {
    return apply_noise(expected_image(scene, geometry), noise);
}

std::filesystem::path sidecar_path(const std::filesystem::path& frame_path) {
    std::filesystem::path sidecar = frame_path;
    sidecar.replace_extension(".json");
    return sidecar;
}

void write_frame(const Frame& frame, const std::filesystem::path& path) {
    frame.validate();
    std::string bytes = "P5\n" + std::to_string(frame.width) + " " + std::to_string(frame.height) + "\n65535\n";
    bytes.reserve(bytes.size() + 2 * frame.pixels.size());
    for (double v : frame.pixels) {
        if (v != std::floor(v) || v > 65535.0) {
            throw ArgumentError("write_frame: pixel value " + std::to_string(v) + " is not a 16-bit integer");
        }
        const auto u = static_cast<std::uint16_t>(v);
        bytes.push_back(static_cast<char>(u >> 8));
        bytes.push_back(static_cast<char>(u & 0xFF));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("write_frame: cannot open " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

    nlohmann::ordered_json meta;
    meta["pixel_pitch_nm"] = frame.pixel_pitch_nm;
    meta["exposure_s"] = frame.exposure_s;
    std::ofstream side(sidecar_path(path));
    if (!side) throw Error("write_frame: cannot open sidecar for " + path.string());
    side << meta.dump(2) << '\n';
    if (!out || !side) throw Error("write_frame: write failed for " + path.string());
}

namespace {

class PgmCursor {
public:
    PgmCursor(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}

    void skip_separators() {
        while (pos_ < data_.size()) {
            const char c = data_[pos_];
            if (c == '#') {
                while (pos_ < data_.size() && data_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    long read_uint(const char* what) {
        skip_separators();
        const std::size_t start = pos_;
        long value = 0;
        while (pos_ < data_.size() && std::isdigit(static_cast<unsigned char>(data_[pos_]))) {
            value = value * 10 + (data_[pos_] - '0');
            if (value > 1'000'000'000) fail(start, std::string("header ") + what + " is too large");
            ++pos_;
        }
        if (pos_ == start) fail(start, std::string("expected header ") + what);
        return value;
    }

    [[noreturn]] void fail(std::size_t offset, const std::string& what) const {
        throw ParseError(source_, offset, ParseError::Unit::Byte, what);
    }

    std::size_t pos_ = 0;
    const std::string& data_;
    std::string source_;
};

}  // namespace

Frame read_frame(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("read_frame: cannot open " + path.string());
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    PgmCursor cur(data, path.string());
    if (data.size() < 2 || data[0] != 'P' || data[1] != '5') cur.fail(0, "missing P5 magic");
    cur.pos_ = 2;
    const long width = cur.read_uint("width");
    const long height = cur.read_uint("height");
    const std::size_t maxval_at = cur.pos_;
    const long maxval = cur.read_uint("maxval");
    if (width <= 0 || height <= 0) cur.fail(maxval_at, "width and height must be positive");
    if (maxval <= 0 || maxval > 65535) cur.fail(maxval_at, "maxval must be in [1, 65535]");
    if (cur.pos_ >= data.size() || !std::isspace(static_cast<unsigned char>(data[cur.pos_]))) {
        cur.fail(cur.pos_, "expected single whitespace after maxval");
    }
    ++cur.pos_;

    const std::size_t bytes_per_px = maxval > 255 ? 2 : 1;
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    const std::size_t need = count * bytes_per_px;
    if (data.size() - cur.pos_ < need) {
        cur.fail(data.size(), "truncated pixel data: expected " + std::to_string(need) + " bytes, found " +
                                  std::to_string(data.size() - cur.pos_));
    }

    Frame frame(static_cast<int>(width), static_cast<int>(height), 0.0, 0.0);
    const auto* raw = reinterpret_cast<const unsigned char*>(data.data() + cur.pos_);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned v = bytes_per_px == 2 ? (unsigned{raw[2 * i]} << 8) | raw[2 * i + 1] : raw[i];
        if (v > static_cast<unsigned>(maxval)) cur.fail(cur.pos_ + i * bytes_per_px, "pixel exceeds maxval");
        frame.pixels[i] = static_cast<double>(v);
    }

    const auto side_path = sidecar_path(path);
    std::ifstream side(side_path);
    if (!side) throw Error("read_frame: missing metadata sidecar " + side_path.string());
    const std::string text((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(side_path.string(), e.byte, ParseError::Unit::Byte, "invalid JSON sidecar");
    }
    try {
        frame.pixel_pitch_nm = meta.at("pixel_pitch_nm").get<double>();
        frame.exposure_s = meta.at("exposure_s").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(side_path.string(), 0, ParseError::Unit::Byte, std::string("sidecar: ") + e.what());
    }
    frame.validate();
    return frame;
}

}  // namespace dotfoundry
