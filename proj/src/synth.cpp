#include <hsicae/synth.hpp>

#include <hsicae/rng.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace hsicae {

double SpectralProfile::at(double wavelength_nm) const {
    double v = baseline;
    for (const auto& p : peaks) {
        const double d = (wavelength_nm - p.center_nm) / p.width_nm;
        v += p.amplitude * std::exp(-0.5 * d * d);
    }
    return std::clamp(v, 0.0, 1.0);
}

void SceneConfig::validate() const {
    if (bands < 1) throw ArgError("scene needs at least one band");
    if (rows < 1 || cols < 1) throw ArgError("scene needs a non-empty raster");
    if (!(noise_sigma >= 0.0)) throw ArgError("noise_sigma must be >= 0");
    if (!(intensity_scale > 0.0)) throw ArgError("intensity_scale must be > 0");
    if (!(max_wavelength_nm > min_wavelength_nm)) throw ArgError("wavelength range is empty");
    if (spectral_profiles.empty() && spatial_field.classes < 1) throw ArgError("scene needs at least one class");
    for (const auto& p : spectral_profiles)
        for (const auto& g : p.peaks)
            if (!(g.width_nm > 0.0)) throw ArgError("spectral peak width must be > 0");
    if (!(spatial_field.wavelength_px > 0.0)) throw ArgError("spatial wavelength must be > 0");
}

std::vector<double> scene_wavelengths(const SceneConfig& cfg) {
    std::vector<double> w(cfg.bands);
    const double step = cfg.bands > 1 ? (cfg.max_wavelength_nm - cfg.min_wavelength_nm) / (cfg.bands - 1) : 0.0;
    for (std::uint32_t b = 0; b < cfg.bands; ++b) w[b] = cfg.min_wavelength_nm + step * b;
    return w;
}

std::vector<SpectralProfile> scene_profiles(const SceneConfig& cfg) {
    if (!cfg.spectral_profiles.empty()) return cfg.spectral_profiles;
    Rng rng(mix_seed(cfg.seed, 1));
    std::vector<SpectralProfile> out(cfg.spatial_field.classes);
    const double span = cfg.max_wavelength_nm - cfg.min_wavelength_nm;
    for (auto& p : out) {
        p.baseline = rng.uniform(0.05, 0.2);
        const std::size_t n = 2 + static_cast<std::size_t>(rng.below(2));
        for (std::size_t i = 0; i < n; ++i) {
            GaussianPeak g;
            g.center_nm = cfg.min_wavelength_nm + rng.uniform() * span;
            g.width_nm = rng.uniform(0.05, 0.25) * span;
            g.amplitude = rng.uniform(0.15, 0.45);
            p.peaks.push_back(g);
        }
    }
    return out;
}

std::vector<double> scene_abundances(const SceneConfig& cfg, std::size_t classes) {
    const std::size_t rows = cfg.rows, cols = cfg.cols, n = rows * cols;
    std::vector<double> a(classes * n, 1.0);
    if (classes == 1) return a;
    Rng rng(mix_seed(cfg.seed, 2));
    const SpatialField& f = cfg.spatial_field;
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<double> fx(f.waves), fy(f.waves), ph(f.waves);
        for (std::size_t k = 0; k < f.waves; ++k) {
            const double period = f.wavelength_px * rng.uniform(0.6, 1.6);
            const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
            fx[k] = 2.0 * std::numbers::pi * std::cos(angle) / period;
            fy[k] = 2.0 * std::numbers::pi * std::sin(angle) / period;
            ph[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
                double v = 0.0;
                for (std::size_t k = 0; k < f.waves; ++k)
                    v += std::cos(fx[k] * static_cast<double>(j) + fy[k] * static_cast<double>(i) + ph[k]);
                a[c * n + i * cols + j] = f.sharpness * v / static_cast<double>(f.waves);
            }
    }
    for (std::size_t p = 0; p < n; ++p) {
        double m = a[p];
        for (std::size_t c = 1; c < classes; ++c) m = std::max(m, a[c * n + p]);
        double s = 0.0;
        for (std::size_t c = 0; c < classes; ++c) s += (a[c * n + p] = std::exp(a[c * n + p] - m));
        for (std::size_t c = 0; c < classes; ++c) a[c * n + p] /= s;
    }
    return a;
}

HsiCube gen_cube(const SceneConfig& cfg) {
    cfg.validate();
    const auto wl = scene_wavelengths(cfg);
    const auto profiles = scene_profiles(cfg);
    const std::size_t classes = profiles.size();
    const auto abund = scene_abundances(cfg, classes);
    const std::size_t n = static_cast<std::size_t>(cfg.rows) * cfg.cols;

    HsiCube cube;
    cube.bands = cfg.bands;
    cube.rows = cfg.rows;
    cube.cols = cfg.cols;
    cube.name = cfg.name;
    cube.band_wavelengths_nm = wl;
    cube.data.resize(cfg.bands * n);

    Rng noise(mix_seed(cfg.seed, 3));
    const double clip = 4.0 * cfg.noise_sigma;
    for (std::uint32_t b = 0; b < cfg.bands; ++b) {
        std::vector<double> spec(classes);
        for (std::size_t c = 0; c < classes; ++c) spec[c] = profiles[c].at(wl[b]);
        for (std::size_t p = 0; p < n; ++p) {
            double v = 0.0;
            for (std::size_t c = 0; c < classes; ++c) v += abund[c * n + p] * spec[c];
            double e = 0.0;
            if (cfg.noise_sigma > 0.0) e = std::clamp(cfg.noise_sigma * noise.normal(), -clip, clip);
            cube.data[b * n + p] = static_cast<float>(std::max(0.0, cfg.intensity_scale * v * (1.0 + e)));
        }
    }
    return cube;
}

void ArtefactSpec::validate() const {
    if (!(coverage_fraction > 0.0 && coverage_fraction <= 1.0)) throw ArgError("coverage_fraction must be in (0, 1]");
    if (!std::isfinite(magnitude)) throw ArgError("artefact magnitude must be finite");
    if (kind == ArtefactKind::SpectralShift && magnitude < -1.0)
        throw ArgError("spectral shift magnitude below -1 would make intensities negative");
    if (kind != ArtefactKind::SpectralShift && magnitude < 0.0) throw ArgError("artefact magnitude must be >= 0");
}

double ArtefactResult::affected_fraction(std::size_t band, std::size_t row, std::size_t col, std::size_t size) const {
    const std::size_t bs = cube.band_size();
    std::size_t hit = 0;
    for (std::size_t i = row; i < row + size; ++i)
        for (std::size_t j = col; j < col + size; ++j) hit += mask[band * bs + i * cube.cols + j];
    return static_cast<double>(hit) / static_cast<double>(size * size);
}

std::size_t ArtefactResult::count() const { return std::accumulate(mask.begin(), mask.end(), std::size_t{0}); }

namespace {

// Separable Gaussian blur with clamped borders.
std::vector<double> blur(const std::vector<double>& in, std::size_t rows, std::size_t cols, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    for (int t = -radius; t <= radius; ++t) k[t + radius] = std::exp(-0.5 * (t / sigma) * (t / sigma));
    const double ks = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& v : k) v /= ks;
    std::vector<double> tmp(in.size()), out(in.size());
    const int r = static_cast<int>(rows), c = static_cast<int>(cols);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int t = -radius; t <= radius; ++t) s += k[t + radius] * in[i * c + std::clamp(j + t, 0, c - 1)];
            tmp[i * c + j] = s;
        }
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int t = -radius; t <= radius; ++t) s += k[t + radius] * tmp[std::clamp(i + t, 0, r - 1) * c + j];
            out[i * c + j] = s;
        }
    return out;
}

std::size_t target_count(double fraction, std::size_t total) {
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
    if (n == 0) throw ArgError("artefact coverage rounds to zero pixels");
    return std::min(n, total);
}

void cloud(ArtefactResult& r, const ArtefactSpec& spec, Rng& rng) {
    HsiCube& c = r.cube;
    const std::size_t n = c.band_size();
    const std::size_t want = target_count(spec.coverage_fraction, n);
    std::vector<double> field(n);
    for (double& v : field) v = rng.normal();
    field = blur(field, c.rows, c.cols, std::max(1.0, std::min(c.rows, c.cols) / 8.0));

    // The `want` highest field values form the blob.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return field[a] > field[b]; });
    const double top = field[order.front()];
    const double edge = field[order[want - 1]];
    const double span = top > edge ? top - edge : 1.0;
    for (std::size_t q = 0; q < want; ++q) {
        const std::size_t p = order[q];
        // Opacity rises from 0.6 at the blob edge to 1 at its core.
        const double alpha = 0.6 + 0.4 * (field[p] - edge) / span;
        for (std::size_t b = 0; b < c.bands; ++b) {
            float& v = c.data[b * n + p];
            v = static_cast<float>((1.0 - alpha) * v + alpha * spec.magnitude);
            r.mask[b * n + p] = 1;
        }
    }
}

void shift(ArtefactResult& r, const ArtefactSpec& spec, Rng& rng) {
    HsiCube& c = r.cube;
    const std::size_t n = c.band_size();
    const std::size_t want = target_count(spec.coverage_fraction, n);
    // Rectangle of the requested area with the scene's aspect ratio.
    const double side = std::sqrt(static_cast<double>(want) / static_cast<double>(n));
    const std::size_t h = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(side * c.rows)), 1, c.rows);
    const std::size_t w =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(static_cast<double>(want) / h)), 1, c.cols);
    const std::size_t r0 = rng.below(c.rows - h + 1), c0 = rng.below(c.cols - w + 1);
    const std::size_t nb = std::max<std::size_t>(1, c.bands / 2);
    const std::size_t b0 = rng.below(c.bands - nb + 1);
    const float gain = static_cast<float>(1.0 + spec.magnitude);
    for (std::size_t b = b0; b < b0 + nb; ++b)
        for (std::size_t i = r0; i < r0 + h; ++i)
            for (std::size_t j = c0; j < c0 + w; ++j) {
                const std::size_t idx = b * n + i * c.cols + j;
                c.data[idx] *= gain;
                r.mask[idx] = 1;
            }
}

void stripe(ArtefactResult& r, const ArtefactSpec& spec, Rng& rng) {
    HsiCube& c = r.cube;
    const std::size_t n = c.band_size();
    const std::size_t nrows = target_count(spec.coverage_fraction, c.rows);
    std::vector<std::size_t> rows(c.rows);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(rows));
    rows.resize(nrows);
    const std::size_t nb = std::max<std::size_t>(1, (c.bands + 2) / 3);
    const std::size_t b0 = rng.below(c.bands - nb + 1);
    const float value = static_cast<float>(spec.magnitude);
    for (std::size_t b = b0; b < b0 + nb; ++b)
        for (std::size_t i : rows)
            for (std::size_t j = 0; j < c.cols; ++j) {
                const std::size_t idx = b * n + i * c.cols + j;
                c.data[idx] = value;
                r.mask[idx] = 1;
            }
}

} // namespace

ArtefactResult inject_artefact(const HsiCube& cube, const ArtefactSpec& spec) {
    spec.validate();
    cube.validate();
    ArtefactResult r{cube, std::vector<std::uint8_t>(cube.data.size(), 0)};
    Rng rng(mix_seed(spec.seed, 17));
    switch (spec.kind) {
    case ArtefactKind::CloudOcclusion: cloud(r, spec, rng); break;
    case ArtefactKind::SpectralShift: shift(r, spec, rng); break;
    case ArtefactKind::SensorStripe: stripe(r, spec, rng); break;
    }
    return r;
}

std::string to_string(ArtefactKind k) {
    switch (k) {
    case ArtefactKind::CloudOcclusion: return "cloud";
    case ArtefactKind::SpectralShift: return "spectral_shift";
    case ArtefactKind::SensorStripe: return "stripe";
    }
    return "?";
}

ArtefactKind parse_artefact_kind(const std::string& s) {
    if (s == "cloud") return ArtefactKind::CloudOcclusion;
    if (s == "spectral_shift") return ArtefactKind::SpectralShift;
    if (s == "stripe") return ArtefactKind::SensorStripe;
    throw ConfigError("unknown artefact kind '" + s + "' (expected cloud, spectral_shift or stripe)");
}

} // namespace hsicae
