#include <hsicae/pipeline.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace hsicae {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double to_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || !std::isfinite(d)) throw ConfigError(key + ": '" + v + "' is not a number");
    return d;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
    return out;
}

int to_int(const std::string& key, const std::string& v) {
    int out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& s : split_commas(v)) out.push_back(to_u64(key, s));
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_same_v<T, ArtefactKind>)
            s += to_string(v[i]);
        else
            s += std::to_string(v[i]);
    }
    return s;
}

} // namespace

std::string to_string(Precision p) { return p == Precision::Float32 ? "fp32" : "int8"; }

Precision parse_precision(const std::string& s) {
    if (s == "fp32" || s == "float32") return Precision::Float32;
    if (s == "int8") return Precision::Int8;
    throw ConfigError("unknown precision '" + s + "' (expected fp32 or int8)");
}

std::set<std::size_t> parse_band_list(const std::string& spec) {
    if (spec == "none" || spec.empty()) return {};
    if (spec == "aviris") return default_aviris_exclusion();
    if (spec == "indian_pines") return indian_pines_exclusion();
    std::set<std::size_t> out;
    for (const auto& item : split_commas(spec)) {
        const auto dash = item.find('-');
        if (dash == std::string::npos) {
            out.insert(to_u64("data.exclude_bands", item));
            continue;
        }
        const auto lo = to_u64("data.exclude_bands", trim(item.substr(0, dash)));
        const auto hi = to_u64("data.exclude_bands", trim(item.substr(dash + 1)));
        if (hi < lo) throw ConfigError("data.exclude_bands: empty range '" + item + "'");
        for (auto b = lo; b <= hi; ++b) out.insert(b);
    }
    return out;
}

void PipelineConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    auto& s = synth.scene;
    if (key == "output.dir") output_dir = v;
    else if (key == "data.dir") data.dir = v;
    else if (key == "data.scale") data.scale = to_double(key, v);
    else if (key == "data.policy") {
        try {
            data.policy = parse_patch_policy(v);
        } catch (const Error& e) {
            throw ConfigError(key + ": " + e.what());
        }
    } else if (key == "data.exclude_bands") {
        (void)parse_band_list(v);
        data.exclude_bands = v;
    } else if (key == "split.train") data.split.train = to_double(key, v);
    else if (key == "split.test") data.split.test = to_double(key, v);
    else if (key == "split.validation") data.split.validation = to_double(key, v);
    else if (key == "split.seed") data.split_seed = to_u64(key, v);
    else if (key == "model.input_size") model.input_size = to_u64(key, v);
    else if (key == "model.encoder_filters") {
        model.encoder_filters = to_sizes(key, v);
        if (model.encoder_filters.size() == 3) model.decoder_filters = {model.encoder_filters[1], model.encoder_filters[0]};
    } else if (key == "model.decoder_filters") model.decoder_filters = to_sizes(key, v);
    else if (key == "model.kernel") model.kernel = to_u64(key, v);
    else if (key == "model.stride2_layer_index") model.stride2_layer_index = to_u64(key, v);
    else if (key == "model.output_activation") {
        try {
            model.output_activation = parse_output_activation(v);
        } catch (const Error& e) {
            throw ConfigError(key + ": " + e.what());
        }
    } else if (key == "model.batchnorm") model.batchnorm = to_bool(key, v);
    else if (key == "model.bn_epsilon") model.bn_epsilon = to_double(key, v);
    else if (key == "model.bn_momentum") model.bn_momentum = to_double(key, v);
    else if (key == "train.epochs") train.epochs = to_int(key, v);
    else if (key == "train.lr") train.lr = to_double(key, v);
    else if (key == "train.batch_size") train.batch_size = to_u64(key, v);
    else if (key == "train.seed") train.seed = to_u64(key, v);
    else if (key == "train.checkpoint_every") train.checkpoint_every = to_int(key, v);
    else if (key == "quant.calibration") quant.calibration = parse_calibration_mode(v);
    else if (key == "quant.finetune_epochs") quant.finetune_epochs = to_int(key, v);
    else if (key == "quant.finetune_lr") quant.finetune_lr = to_double(key, v);
    else if (key == "quant.finetune_batch_size") quant.finetune_batch_size = to_u64(key, v);
    else if (key == "quant.dual_path_patches") quant.dual_path_patches = to_u64(key, v);
    else if (key == "detector.k") detector.k = v == "auto" ? std::nullopt : std::optional<double>(to_double(key, v));
    else if (key == "detector.threshold")
        detector.threshold = v == "sweep" ? std::nullopt : std::optional<double>(to_double(key, v));
    else if (key == "synth.bands") s.bands = static_cast<std::uint32_t>(to_u64(key, v));
    else if (key == "synth.rows") s.rows = static_cast<std::uint32_t>(to_u64(key, v));
    else if (key == "synth.cols") s.cols = static_cast<std::uint32_t>(to_u64(key, v));
    else if (key == "synth.classes") s.spatial_field.classes = to_u64(key, v);
    else if (key == "synth.spatial_wavelength") s.spatial_field.wavelength_px = to_double(key, v);
    else if (key == "synth.noise_sigma") s.noise_sigma = to_double(key, v);
    else if (key == "synth.intensity_scale") s.intensity_scale = to_double(key, v);
    else if (key == "synth.clean_scenes") synth.clean_scenes = to_u64(key, v);
    else if (key == "synth.artefact_scenes") synth.artefact_scenes = to_u64(key, v);
    else if (key == "synth.kinds") {
        synth.kinds.clear();
        for (const auto& k : split_commas(v)) synth.kinds.push_back(parse_artefact_kind(k));
    } else if (key == "synth.coverage") synth.coverage = to_double(key, v);
    else if (key == "synth.cloud_magnitude") synth.cloud_magnitude = to_double(key, v);
    else if (key == "synth.shift_magnitude") synth.shift_magnitude = to_double(key, v);
    else if (key == "synth.stripe_magnitude") synth.stripe_magnitude = to_double(key, v);
    else if (key == "synth.min_affected") synth.min_affected = to_double(key, v);
    else if (key == "synth.seed") synth.seed = to_u64(key, v);
    else if (key == "bench.warmup") bench.warmup = to_u64(key, v);
    else if (key == "bench.iterations") bench.iterations = to_u64(key, v);
    else if (key == "bench.precision") bench.precision = parse_precision(v);
    else if (key == "bench.seed") bench.seed = to_u64(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
    PipelineConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    }
    return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::string PipelineConfig::to_text() const {
    const auto& s = synth.scene;
    std::string t;
    auto put = [&](const std::string& k, const std::string& v) { t += k + "=" + v + "\n"; };
    put("output.dir", output_dir.string());
    put("data.dir", data.dir.string());
    put("data.scale", fmt(data.scale));
    put("data.policy", to_string(data.policy));
    put("data.exclude_bands", data.exclude_bands);
    put("split.train", fmt(data.split.train));
    put("split.test", fmt(data.split.test));
    put("split.validation", fmt(data.split.validation));
    put("split.seed", std::to_string(data.split_seed));
    put("model.input_size", std::to_string(model.input_size));
    put("model.encoder_filters", join(model.encoder_filters));
    put("model.decoder_filters", join(model.decoder_filters));
    put("model.kernel", std::to_string(model.kernel));
    put("model.stride2_layer_index", std::to_string(model.stride2_layer_index));
    put("model.output_activation", to_string(model.output_activation));
    put("model.batchnorm", model.batchnorm ? "true" : "false");
    put("model.bn_epsilon", fmt(model.bn_epsilon));
    put("model.bn_momentum", fmt(model.bn_momentum));
    put("train.epochs", std::to_string(train.epochs));
    put("train.lr", fmt(train.lr));
    put("train.batch_size", std::to_string(train.batch_size));
    put("train.seed", std::to_string(train.seed));
    put("train.checkpoint_every", std::to_string(train.checkpoint_every));
    put("quant.calibration", to_string(quant.calibration));
    put("quant.finetune_epochs", std::to_string(quant.finetune_epochs));
    put("quant.finetune_lr", fmt(quant.finetune_lr));
    put("quant.finetune_batch_size", std::to_string(quant.finetune_batch_size));
    put("quant.dual_path_patches", std::to_string(quant.dual_path_patches));
    put("detector.k", detector.k ? fmt(*detector.k) : "auto");
    put("detector.threshold", detector.threshold ? fmt(*detector.threshold) : "sweep");
    put("synth.bands", std::to_string(s.bands));
    put("synth.rows", std::to_string(s.rows));
    put("synth.cols", std::to_string(s.cols));
    put("synth.classes", std::to_string(s.spatial_field.classes));
    put("synth.spatial_wavelength", fmt(s.spatial_field.wavelength_px));
    put("synth.noise_sigma", fmt(s.noise_sigma));
    put("synth.intensity_scale", fmt(s.intensity_scale));
    put("synth.clean_scenes", std::to_string(synth.clean_scenes));
    put("synth.artefact_scenes", std::to_string(synth.artefact_scenes));
    put("synth.kinds", join(synth.kinds));
    put("synth.coverage", fmt(synth.coverage));
    put("synth.cloud_magnitude", fmt(synth.cloud_magnitude));
    put("synth.shift_magnitude", fmt(synth.shift_magnitude));
    put("synth.stripe_magnitude", fmt(synth.stripe_magnitude));
    put("synth.min_affected", fmt(synth.min_affected));
    put("synth.seed", std::to_string(synth.seed));
    put("bench.warmup", std::to_string(bench.warmup));
    put("bench.iterations", std::to_string(bench.iterations));
    put("bench.precision", to_string(bench.precision));
    put("bench.seed", std::to_string(bench.seed));
    return t;
}

void PipelineConfig::validate() const {
    model.validate();
    train.validate();
    if (!(data.scale > 0.0)) throw ConfigError("data.scale must be positive");
    const auto& f = data.split;
    if (f.train < 0 || f.test < 0 || f.validation < 0 || std::abs(f.train + f.test + f.validation - 1.0) > 1e-9)
        throw ConfigError("split fractions must be non-negative and sum to 1");
    if (quant.finetune_epochs < 0) throw ConfigError("quant.finetune_epochs must be >= 0");
    if (!(quant.finetune_lr > 0.0)) throw ConfigError("quant.finetune_lr must be positive");
    if (quant.finetune_batch_size == 0) throw ConfigError("quant.finetune_batch_size must be positive");
    if (detector.k && !(*detector.k >= 0.0)) throw ConfigError("detector.k must be >= 0");
    if (synth.kinds.empty() && synth.artefact_scenes > 0) throw ConfigError("synth.kinds is empty");
    if (!(synth.coverage > 0.0 && synth.coverage <= 1.0)) throw ConfigError("synth.coverage must be in (0,1]");
    if (!(synth.min_affected > 0.0 && synth.min_affected <= 1.0)) throw ConfigError("synth.min_affected must be in (0,1]");
    try {
        synth.scene.validate();
    } catch (const ArgError& e) {
        throw ConfigError(std::string("synth: ") + e.what());
    }
}

int verbosity() {
    const char* v = std::getenv("HSICAE_VERBOSE");
    if (!v || !*v) return 0;
    return std::atoi(v);
}

} // namespace hsicae
