#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dotfoundry {

/// Row-major intensity image. Pixel (ix, iy) covers
/// [ix*pitch, (ix+1)*pitch) x [iy*pitch, (iy+1)*pitch) nm on the sample, so its
/// center sits at pixel coordinate (ix, iy) == nm position ((ix+0.5)*pitch, ...).
struct Frame {
    int width = 0;
    int height = 0;
    double pixel_pitch_nm = 0.0;
    double exposure_s = 0.0;
    std::vector<double> pixels;

    Frame() = default;
    Frame(int width_px, int height_px, double pitch_nm, double exposure, double fill = 0.0);

    double at(int ix, int iy) const { return pixels[static_cast<std::size_t>(iy) * width + ix]; }
    double& at(int ix, int iy) { return pixels[static_cast<std::size_t>(iy) * width + ix]; }
    bool contains(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < width && iy < height; }

    /// Throws ArgumentError if any invariant (finite, non-negative, positive geometry) is broken.
    void validate() const;
};

/// nm on the sample -> continuous pixel coordinate (pixel centers are integers).
inline double nm_to_px(double nm, double pitch_nm) { return nm / pitch_nm - 0.5; }
inline double px_to_nm(double px, double pitch_nm) { return (px + 0.5) * pitch_nm; }

enum class PsfProfile { Gaussian, Lorentzian };
enum class FocusPlane { SurfacePlane, EmitterPlane };

struct EmitterSpec {
    double x_nm = 0.0;
    double y_nm = 0.0;
    double peak_counts = 0.0;  ///< counts per pixel at the profile maximum
    double psf_fwhm_nm = 1000.0;
    PsfProfile profile = PsfProfile::Lorentzian;
};

/// Cross-shaped metal fiducial: two perpendicular arms of arm_length x arm_width.
struct MarkSpec {
    double center_x_nm = 0.0;
    double center_y_nm = 0.0;
    double arm_length_nm = 3000.0;
    double arm_width_nm = 500.0;
    double reflectance_counts = 0.0;  ///< counts per fully covered pixel
    double edge_blur_nm = 0.0;        ///< Gaussian sigma of the in-focus edge
};

/// Extra Gaussian blur (sigma, nm) applied to a plane's features while the
/// objective is focused on the other plane.
struct DefocusBlur {
    double surface_nm = 0.0;
    double emitter_nm = 0.0;
};

struct SceneSpec {
    EmitterSpec emitter;
    std::vector<MarkSpec> marks;
    double background_counts = 0.0;
    FocusPlane focus = FocusPlane::EmitterPlane;
    DefocusBlur defocus_blur_nm;
};

/// Camera noise. The EM register is modeled as Gamma(n, gain) on the
/// photo-electron count n, giving mean gain*E and variance 2*gain^2*E at high
/// gain; gain == 1 disables the register.
struct NoiseSpec {
    bool photon_shot = false;
    double emccd_gain = 1.0;
    double read_noise_rms = 0.0;
    /// Round to integer ADU and clip to [0, 65535], as a 16-bit ADC does.
    bool quantize = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct FrameGeometry {
    int width_px = 0;
    int height_px = 0;
    double pixel_pitch_nm = 0.0;
    double exposure_s = 0.1;

    void validate() const;
};

/// Sub-samples per pixel axis for the emitter's midpoint-rule integration.
inline constexpr int kEmitterSubsamples = 5;

/// Noise-free image of the scene (mean counts per pixel).
Frame expected_image(const SceneSpec& scene, const FrameGeometry& geometry);

/// Applies NoiseSpec to an expected image, deterministically in its seed.
Frame apply_noise(const Frame& expected, const NoiseSpec& noise);

Frame render_frame(const SceneSpec& scene, const NoiseSpec& noise, const FrameGeometry& geometry);

/// Metadata sidecar of a frame file: same stem, ".json" extension.
std::filesystem::path sidecar_path(const std::filesystem::path& frame_path);

/// Writes a 16-bit big-endian PGM (P5) plus its JSON sidecar. Pixels must be
/// integers in [0, 65535]; anything else throws ArgumentError.
void write_frame(const Frame& frame, const std::filesystem::path& path);

/// Reads an 8- or 16-bit P5 PGM and its sidecar. Throws ParseError with the
/// byte offset of the first malformed token.
Frame read_frame(const std::filesystem::path& path);

}  // namespace dotfoundry
