#pragma once

// Seeded synthetic hyperspectral scenes and artefact injection.

#include <hsicae/datacube.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace hsicae {

struct GaussianPeak {
    double center_nm = 0.0;
    double width_nm = 100.0;
    double amplitude = 0.5;
};

// Reflectance-like spectrum: baseline plus Gaussian peaks, clamped to [0, 1].
struct SpectralProfile {
    double baseline = 0.1;
    std::vector<GaussianPeak> peaks;

    double at(double wavelength_nm) const;
};

struct SpatialField {
    std::size_t classes = 4;      // used when no profiles are given
    std::size_t waves = 3;        // cosine components per class
    double wavelength_px = 64.0;  // typical spatial period
    double sharpness = 4.0;       // softmax temperature over class fields
};

struct SceneConfig {
    std::uint32_t bands = 8;
    std::uint32_t rows = 48;
    std::uint32_t cols = 48;
    std::vector<SpectralProfile> spectral_profiles; // empty: drawn from the seed
    SpatialField spatial_field;
    double noise_sigma = 0.01;
    double intensity_scale = 10000.0;
    double min_wavelength_nm = 400.0;
    double max_wavelength_nm = 2500.0;
    std::uint64_t seed = 0;
    std::string name = "synthetic";

    void validate() const; // throws ArgError
};

// Evenly spaced band centers over the configured range.
std::vector<double> scene_wavelengths(const SceneConfig& cfg);

// Profiles used for a scene: the configured ones or a seeded draw.
std::vector<SpectralProfile> scene_profiles(const SceneConfig& cfg);

// Per-pixel class abundances (classes x rows x cols), each pixel summing to 1.
std::vector<double> scene_abundances(const SceneConfig& cfg, std::size_t classes);

// value = scale * sum_c a_c(x,y) p_c(band) * (1 + clip(sigma * n, +-4 sigma)),
// floored at 0.
HsiCube gen_cube(const SceneConfig& cfg);

enum class ArtefactKind { CloudOcclusion, SpectralShift, SensorStripe };

struct ArtefactSpec {
    ArtefactKind kind = ArtefactKind::CloudOcclusion;
    double coverage_fraction = 0.25;
    // Cloud: radiance of the cloud top. Shift: relative gain minus one.
    // Stripe: value written to the stripe (0 = dead rows).
    double magnitude = 9000.0;
    std::uint64_t seed = 0;

    void validate() const; // throws ArgError
};

struct ArtefactResult {
    HsiCube cube;
    std::vector<std::uint8_t> mask; // bands x rows x cols, 1 = affected

    // Fraction of affected pixels in a square window of one band.
    double affected_fraction(std::size_t band, std::size_t row, std::size_t col, std::size_t size) const;
    std::size_t count() const;
};

ArtefactResult inject_artefact(const HsiCube& cube, const ArtefactSpec& spec);

std::string to_string(ArtefactKind k);
ArtefactKind parse_artefact_kind(const std::string& s);

} // namespace hsicae
