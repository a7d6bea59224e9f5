#pragma once

// Hyperspectral cube ingestion: file formats, band filtering, patching and
// dataset splitting.

#include <hsicae/errors.hpp>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace hsicae {

/// A (bands x rows x cols) radiance raster, band-sequential and row-major
/// within each band.
struct HsiCube {
    std::uint32_t bands = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<float> data;
    std::vector<double> band_wavelengths_nm; // empty or one entry per band
    std::string name;

    std::size_t band_size() const { return static_cast<std::size_t>(rows) * cols; }
    float at(std::size_t band, std::size_t row, std::size_t col) const {
        return data[band * band_size() + row * cols + col];
    }
    float& at(std::size_t band, std::size_t row, std::size_t col) { return data[band * band_size() + row * cols + col]; }

    /// Throws DataError (or FormatError for size mismatches) when an
    /// invariant does not hold.
    void validate() const;

    bool operator==(const HsiCube&) const = default;
};

enum class CubeFormat { Hsib, RawWithHeader };

// Longest cube name that fits the fixed 64-byte HSIB header.
inline constexpr std::size_t kHsibMaxName = 36;
inline constexpr std::size_t kHsibHeaderSize = 64;

HsiCube load_cube(const std::filesystem::path& path, CubeFormat format = CubeFormat::Hsib);
void save_cube(const HsiCube& cube, const std::filesystem::path& path);

// Headerless f32 BSQ payload plus a `<path>.hdr` sidecar.
void save_cube_raw(const HsiCube& cube, const std::filesystem::path& path);
std::filesystem::path raw_header_path(const std::filesystem::path& path);

HsiCube remove_bands(const HsiCube& cube, const std::set<std::size_t>& excluded);

// 0-based water-absorption bands for 224-band AVIRIS scenes:
// 103-107, 149-162, 223 (20 bands).
std::set<std::size_t> default_aviris_exclusion();
// The same absorption windows for the 220-band Indian Pines scene, where the
// final band is 219: leaves 200 bands.
std::set<std::size_t> indian_pines_exclusion();

enum class PatchPolicy { NonOverlapTruncate, CenterCrop };
enum class PatchLabel { Unlabeled, Seen, Unseen };

struct PatchSource {
    std::string cube;
    std::uint32_t band = 0;
    std::uint32_t row = 0;
    std::uint32_t col = 0;

    auto operator<=>(const PatchSource&) const = default;
    std::string str() const;
};

struct Patch {
    std::size_t size = 0;
    std::vector<float> pixels; // size x size, row-major
    PatchSource source;
    PatchLabel label = PatchLabel::Unlabeled;
};

std::vector<Patch> extract_patches(const HsiCube& cube, std::size_t size, PatchPolicy policy);

struct SplitFractions {
    double train = 0.67;
    double test = 0.22;
    double validation = 0.11;
};

struct DatasetSplit {
    std::vector<Patch> train;
    std::vector<Patch> test;
    std::vector<Patch> validation;
};

// Shuffles the seen patches with `seed` and divides them by `fractions`; the
// validation part is labeled Seen and every unseen patch is appended to it
// labeled Unseen.
DatasetSplit split_dataset(std::vector<Patch> seen, std::vector<Patch> unseen, const SplitFractions& fractions,
                           std::uint64_t seed);

std::string to_string(PatchLabel label);
std::string to_string(PatchPolicy policy);
PatchPolicy parse_patch_policy(const std::string& s);

} // namespace hsicae
