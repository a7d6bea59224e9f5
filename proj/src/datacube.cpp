#include <hsicae/datacube.hpp>
#include <hsicae/rng.hpp>

#include "binio.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace hsicae {

namespace {

constexpr std::uint32_t kHsibVersion = 1;
constexpr std::uint32_t kFlagWavelengths = 1u;

std::uint64_t checked_volume(std::uint64_t bands, std::uint64_t rows, std::uint64_t cols) {
    const unsigned __int128 v = static_cast<unsigned __int128>(bands) * rows * cols;
    if (v > (static_cast<unsigned __int128>(1) << 40)) throw FormatError("cube volume too large");
    return static_cast<std::uint64_t>(v);
}

void check_intensities(const HsiCube& cube) {
    for (std::size_t i = 0; i < cube.data.size(); ++i) {
        const float v = cube.data[i];
        if (!std::isfinite(v)) throw DataError("cube '" + cube.name + "': non-finite intensity at index " + std::to_string(i));
        if (v < 0.0f) throw DataError("cube '" + cube.name + "': negative intensity at index " + std::to_string(i));
    }
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace

void HsiCube::validate() const {
    if (bands == 0 || rows == 0 || cols == 0) throw DataError("cube '" + name + "' has a zero dimension");
    if (data.size() != checked_volume(bands, rows, cols))
        throw FormatError("cube '" + name + "': data length " + std::to_string(data.size()) +
                          " != bands*rows*cols");
    if (!band_wavelengths_nm.empty()) {
        if (band_wavelengths_nm.size() != bands)
            throw DataError("cube '" + name + "': wavelength list length differs from band count");
        for (std::size_t i = 0; i < band_wavelengths_nm.size(); ++i) {
            if (!std::isfinite(band_wavelengths_nm[i])) throw DataError("non-finite wavelength");
            if (i > 0 && !(band_wavelengths_nm[i] > band_wavelengths_nm[i - 1]))
                throw DataError("cube '" + name + "': wavelengths not strictly increasing");
        }
    }
    check_intensities(*this);
}

void save_cube(const HsiCube& cube, const std::filesystem::path& path) {
    cube.validate();
    if (cube.name.size() > kHsibMaxName)
        throw ArgError("cube name longer than " + std::to_string(kHsibMaxName) + " bytes does not fit the HSIB header");
    detail::ByteWriter w;
    w.magic("HSIB");
    w.u32(kHsibVersion);
    w.u32(cube.bands);
    w.u32(cube.rows);
    w.u32(cube.cols);
    w.u32(cube.band_wavelengths_nm.empty() ? 0u : kFlagWavelengths);
    w.u32(static_cast<std::uint32_t>(cube.name.size()));
    w.bytes(cube.name.data(), cube.name.size());
    w.zeros((8 - w.size() % 8) % 8);
    w.zeros(kHsibHeaderSize - w.size());
    w.array<double>(cube.band_wavelengths_nm);
    w.array<float>(cube.data);
    w.write_file(path);
}

static HsiCube load_hsib(const std::filesystem::path& path) {
    auto r = detail::ByteReader::from_file(path);
    r.expect_magic("HSIB");
    const std::uint32_t version = r.u32();
    if (version != kHsibVersion) r.fail("unsupported HSIB version " + std::to_string(version));
    HsiCube cube;
    cube.bands = r.u32();
    cube.rows = r.u32();
    cube.cols = r.u32();
    const std::uint32_t flags = r.u32();
    if (flags & ~kFlagWavelengths) r.fail("unknown flag bits");
    const std::uint32_t name_len = r.u32();
    if (name_len > kHsibMaxName) r.fail("name length exceeds header");
    cube.name = r.raw_string(name_len);
    if (cube.bands == 0 || cube.rows == 0 || cube.cols == 0) r.fail("zero dimension in header");

    const std::uint64_t volume = checked_volume(cube.bands, cube.rows, cube.cols);
    const std::uint64_t expected = kHsibHeaderSize + ((flags & kFlagWavelengths) ? 8ull * cube.bands : 0ull) + 4ull * volume;
    if (r.size() != expected)
        r.fail("file size " + std::to_string(r.size()) + " does not match header dimensions (expected " +
               std::to_string(expected) + ")");
    r.seek(kHsibHeaderSize);
    if (flags & kFlagWavelengths) {
        cube.band_wavelengths_nm.resize(cube.bands);
        r.array<double>(cube.band_wavelengths_nm);
    }
    cube.data.resize(volume);
    r.array<float>(cube.data);
    cube.validate();
    return cube;
}

std::filesystem::path raw_header_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".hdr");
}

static HsiCube load_raw(const std::filesystem::path& path) {
    const auto hdr_path = raw_header_path(path);
    std::ifstream hdr(hdr_path);
    if (!hdr) throw IoError("missing sidecar header '" + hdr_path.string() + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(hdr, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(hdr_path.string() + ": malformed line '" + line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(hdr_path.string() + ": missing '" + key + "='");
        return it->second;
    };
    auto parse_dim = [&](const std::string& key) -> std::uint32_t {
        try {
            const unsigned long v = std::stoul(need(key));
            if (v == 0 || v > 0xFFFFFFFFul) throw FormatError(hdr_path.string() + ": bad " + key);
            return static_cast<std::uint32_t>(v);
        } catch (const std::logic_error&) {
            throw FormatError(hdr_path.string() + ": bad " + key);
        }
    };
    HsiCube cube;
    cube.bands = parse_dim("bands");
    cube.rows = parse_dim("rows");
    cube.cols = parse_dim("cols");
    if (need("dtype") != "f32") throw FormatError(hdr_path.string() + ": only dtype=f32 is supported");
    if (need("interleave") != "bsq") throw FormatError(hdr_path.string() + ": only interleave=bsq is supported");
    cube.name = kv.count("name") ? kv["name"] : path.stem().string();
    if (kv.count("wavelengths") && !kv["wavelengths"].empty()) {
        std::stringstream ss(kv["wavelengths"]);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            try {
                cube.band_wavelengths_nm.push_back(std::stod(trim(tok)));
            } catch (const std::logic_error&) {
                throw FormatError(hdr_path.string() + ": bad wavelength '" + tok + "'");
            }
        }
    }
    auto r = detail::ByteReader::from_file(path);
    const std::uint64_t volume = checked_volume(cube.bands, cube.rows, cube.cols);
    if (r.size() != 4 * volume)
        r.fail("payload size " + std::to_string(r.size()) + " does not match header dimensions");
    cube.data.resize(volume);
    r.array<float>(cube.data);
    cube.validate();
    return cube;
}

HsiCube load_cube(const std::filesystem::path& path, CubeFormat format) {
    if (!std::filesystem::exists(path)) throw IoError("no such file '" + path.string() + "'");
    return format == CubeFormat::Hsib ? load_hsib(path) : load_raw(path);
}

void save_cube_raw(const HsiCube& cube, const std::filesystem::path& path) {
    cube.validate();
    detail::ByteWriter w;
    w.array<float>(cube.data);
    w.write_file(path);
    std::ofstream hdr(raw_header_path(path), std::ios::trunc);
    if (!hdr) throw IoError("cannot write '" + raw_header_path(path).string() + "'");
    hdr << "bands=" << cube.bands << "\nrows=" << cube.rows << "\ncols=" << cube.cols
        << "\ndtype=f32\ninterleave=bsq\nname=" << cube.name << "\n";
    if (!cube.band_wavelengths_nm.empty()) {
        hdr << "wavelengths=";
        hdr.precision(17);
        for (std::size_t i = 0; i < cube.band_wavelengths_nm.size(); ++i)
            hdr << (i ? "," : "") << cube.band_wavelengths_nm[i];
        hdr << "\n";
    }
}

HsiCube remove_bands(const HsiCube& cube, const std::set<std::size_t>& excluded) {
    for (std::size_t b : excluded)
        if (b >= cube.bands)
            throw ArgError("band index " + std::to_string(b) + " out of range for " + std::to_string(cube.bands) +
                           " bands");
    if (excluded.size() >= cube.bands) throw ArgError("cannot exclude every band");
    HsiCube out;
    out.name = cube.name;
    out.rows = cube.rows;
    out.cols = cube.cols;
    out.bands = static_cast<std::uint32_t>(cube.bands - excluded.size());
    out.data.reserve(out.bands * cube.band_size());
    for (std::size_t b = 0; b < cube.bands; ++b) {
        if (excluded.count(b)) continue;
        const auto first = cube.data.begin() + static_cast<std::ptrdiff_t>(b * cube.band_size());
        out.data.insert(out.data.end(), first, first + static_cast<std::ptrdiff_t>(cube.band_size()));
        if (!cube.band_wavelengths_nm.empty()) out.band_wavelengths_nm.push_back(cube.band_wavelengths_nm[b]);
    }
    return out;
}

static std::set<std::size_t> absorption_windows(std::size_t last_band) {
    std::set<std::size_t> s;
    for (std::size_t b = 103; b <= 107; ++b) s.insert(b);
    for (std::size_t b = 149; b <= 162; ++b) s.insert(b);
    s.insert(last_band);
    return s;
}

std::set<std::size_t> default_aviris_exclusion() { return absorption_windows(223); }
std::set<std::size_t> indian_pines_exclusion() { return absorption_windows(219); }

std::string PatchSource::str() const {
    return cube + ":b" + std::to_string(band) + ":r" + std::to_string(row) + ":c" + std::to_string(col);
}

std::vector<Patch> extract_patches(const HsiCube& cube, std::size_t size, PatchPolicy policy) {
    if (size == 0) throw ArgError("patch size must be positive");
    if (size > cube.rows || size > cube.cols)
        throw ArgError("patch size " + std::to_string(size) + " exceeds spatial extent " + std::to_string(cube.rows) +
                       "x" + std::to_string(cube.cols));
    std::vector<std::pair<std::size_t, std::size_t>> origins;
    if (policy == PatchPolicy::CenterCrop) {
        origins.emplace_back((cube.rows - size) / 2, (cube.cols - size) / 2);
    } else {
        for (std::size_t r = 0; r + size <= cube.rows; r += size)
            for (std::size_t c = 0; c + size <= cube.cols; c += size) origins.emplace_back(r, c);
    }
    std::vector<Patch> out;
    out.reserve(cube.bands * origins.size());
    for (std::uint32_t b = 0; b < cube.bands; ++b) {
        for (const auto& [r0, c0] : origins) {
            Patch p;
            p.size = size;
            p.source = {cube.name, b, static_cast<std::uint32_t>(r0), static_cast<std::uint32_t>(c0)};
            p.pixels.resize(size * size);
            for (std::size_t i = 0; i < size; ++i)
                for (std::size_t j = 0; j < size; ++j) p.pixels[i * size + j] = cube.at(b, r0 + i, c0 + j);
            out.push_back(std::move(p));
        }
    }
    return out;
}

DatasetSplit split_dataset(std::vector<Patch> seen, std::vector<Patch> unseen, const SplitFractions& f,
                           std::uint64_t seed) {
    if (seen.empty()) throw ArgError("split_dataset needs at least one seen patch");
    if (f.train < 0 || f.test < 0 || f.validation < 0 || std::abs(f.train + f.test + f.validation - 1.0) > 1e-9)
        throw ArgError("split fractions must be non-negative and sum to 1");
    {
        std::set<PatchSource> sources;
        for (const auto* list : {&seen, &unseen})
            for (const Patch& p : *list)
                if (!sources.insert(p.source).second) throw ArgError("duplicate patch source " + p.source.str());
    }

    Rng rng(seed);
    rng.shuffle(std::span<Patch>(seen));
    const std::size_t n = seen.size();
    const std::size_t n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(f.train * n)));
    const std::size_t n_test = std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(f.test * n)));

    DatasetSplit s;
    for (std::size_t i = 0; i < n; ++i) {
        seen[i].label = PatchLabel::Seen;
        if (i < n_train)
            s.train.push_back(std::move(seen[i]));
        else if (i < n_train + n_test)
            s.test.push_back(std::move(seen[i]));
        else
            s.validation.push_back(std::move(seen[i]));
    }
    for (Patch& p : unseen) {
        p.label = PatchLabel::Unseen;
        s.validation.push_back(std::move(p));
    }
    return s;
}

std::string to_string(PatchLabel label) {
    switch (label) {
    case PatchLabel::Seen: return "seen";
    case PatchLabel::Unseen: return "unseen";
    default: return "unlabeled";
    }
}

std::string to_string(PatchPolicy policy) {
    return policy == PatchPolicy::CenterCrop ? "center_crop" : "non_overlap_truncate";
}

PatchPolicy parse_patch_policy(const std::string& s) {
    if (s == "center_crop") return PatchPolicy::CenterCrop;
    if (s == "non_overlap_truncate") return PatchPolicy::NonOverlapTruncate;
    throw ConfigError("unknown patch policy '" + s + "'");
}

} // namespace hsicae
