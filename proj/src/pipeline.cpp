#include <hsicae/pipeline.hpp>

#include <hsicae/rng.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace hsicae {

namespace fs = std::filesystem;

namespace {

void log(int level, const std::string& msg) {
    if (verbosity() >= level) std::cerr << msg << '\n';
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create directory '" + p.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string file_magic(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    char m[4] = {};
    in.read(m, 4);
    if (in.gcount() != 4) throw FormatError(path.string() + ": too short to be a model file");
    return std::string(m, 4);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, '\t')) out.push_back(item);
    return out;
}

std::string scene_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%03zu", i);
    return buf;
}

double kind_magnitude(const CorpusConfig& c, ArtefactKind k) {
    switch (k) {
    case ArtefactKind::CloudOcclusion: return c.cloud_magnitude;
    case ArtefactKind::SpectralShift: return c.shift_magnitude;
    case ArtefactKind::SensorStripe: return c.stripe_magnitude;
    }
    return 0.0;
}

Verdict truth_of(const Patch& p) { return p.label == PatchLabel::Unseen ? Verdict::Anomalous : Verdict::Similar; }

} // namespace

fs::path report_path(const PipelineConfig& cfg, Precision p) {
    return cfg.output_dir / ("report_" + to_string(p) + ".json");
}

fs::path bench_path(const PipelineConfig& cfg, Precision p) {
    return cfg.output_dir / ("bench_" + to_string(p) + ".json");
}

fs::path write_resolved_config(const PipelineConfig& cfg, const std::string& command) {
    ensure_dir(cfg.output_dir);
    const fs::path p = cfg.output_dir / (command + ".resolved.cfg");
    write_text(p, cfg.to_text());
    return p;
}

GenSummary run_gen(const PipelineConfig& cfg) {
    cfg.validate();
    ensure_dir(cfg.data.dir);
    write_resolved_config(cfg, "gen");
    const CorpusConfig& c = cfg.synth;
    const std::size_t size = cfg.model.input_size;
    GenSummary summary;
    std::string manifest = "cube_file\tcube\tband\trow\tcol\tlabel\taffected\n";

    // One material library for the whole corpus; scenes differ in layout and noise.
    SceneConfig base = c.scene;
    base.seed = c.seed;
    const auto profiles = scene_profiles(base);

    const std::size_t total = c.clean_scenes + c.artefact_scenes;
    for (std::size_t i = 0; i < total; ++i) {
        SceneConfig sc = c.scene;
        sc.spectral_profiles = profiles;
        sc.seed = mix_seed(c.seed, i);
        sc.name = scene_name(i);
        HsiCube cube = gen_cube(sc);
        std::vector<std::uint8_t> mask;
        if (i >= c.clean_scenes) {
            const std::size_t j = i - c.clean_scenes;
            ArtefactSpec spec;
            spec.kind = c.kinds[j % c.kinds.size()];
            spec.coverage_fraction = c.coverage;
            spec.magnitude = kind_magnitude(c, spec.kind);
            spec.seed = mix_seed(c.seed, 1000 + j);
            auto res = inject_artefact(cube, spec);
            cube = std::move(res.cube);
            mask = std::move(res.mask);
        }
        const std::string file = sc.name + ".hsib";
        save_cube(cube, cfg.data.dir / file);
        ++summary.cubes;

        const std::size_t bs = cube.band_size();
        for (const Patch& p : extract_patches(cube, size, cfg.data.policy)) {
            double affected = 0.0;
            if (!mask.empty()) {
                std::size_t hit = 0;
                for (std::size_t r = p.source.row; r < p.source.row + size; ++r)
                    for (std::size_t q = p.source.col; q < p.source.col + size; ++q)
                        hit += mask[p.source.band * bs + r * cube.cols + q];
                affected = static_cast<double>(hit) / static_cast<double>(size * size);
            }
            std::string label;
            if (affected == 0.0) {
                label = "clean";
                ++summary.clean_patches;
            } else if (affected >= c.min_affected) {
                label = "artefact";
                ++summary.artefact_patches;
            } else {
                label = "partial";
                ++summary.partial_patches;
            }
            char frac[32];
            std::snprintf(frac, sizeof frac, "%.6f", affected);
            manifest += file + "\t" + p.source.cube + "\t" + std::to_string(p.source.band) + "\t" +
                        std::to_string(p.source.row) + "\t" + std::to_string(p.source.col) + "\t" + label + "\t" +
                        frac + "\n";
        }
        log(1, "gen: wrote " + file);
    }
    write_text(cfg.data.dir / outputs::kManifest, manifest);
    return summary;
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    std::vector<ManifestRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;
        const auto f = split_tabs(line);
        if (f.size() != 7) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 7 columns");
        ManifestRow r;
        try {
            r.cube_file = f[0];
            r.source.cube = f[1];
            r.source.band = static_cast<std::uint32_t>(std::stoul(f[2]));
            r.source.row = static_cast<std::uint32_t>(std::stoul(f[3]));
            r.source.col = static_cast<std::uint32_t>(std::stoul(f[4]));
            r.label = f[5];
            r.affected = std::stod(f[6]);
        } catch (const std::logic_error&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
        }
        if (r.label != "clean" && r.label != "artefact" && r.label != "partial")
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": unknown label '" + r.label + "'");
        rows.push_back(std::move(r));
    }
    return rows;
}

Corpus load_corpus(const PipelineConfig& cfg) {
    const fs::path& dir = cfg.data.dir;
    if (!fs::is_directory(dir)) throw IoError("data directory '" + dir.string() + "' does not exist");

    std::vector<std::string> files;
    std::map<PatchSource, std::string> labels;
    const fs::path manifest = dir / outputs::kManifest;
    if (fs::exists(manifest)) {
        for (const auto& r : read_manifest(manifest)) {
            if (files.empty() || files.back() != r.cube_file)
                if (std::find(files.begin(), files.end(), r.cube_file) == files.end()) files.push_back(r.cube_file);
            labels[r.source] = r.label;
        }
    } else {
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".hsib") files.push_back(e.path().filename().string());
        std::sort(files.begin(), files.end());
    }
    if (files.empty()) throw DataError("no cubes found in '" + dir.string() + "'");

    const auto excluded = parse_band_list(cfg.data.exclude_bands);
    Corpus corpus;
    for (const auto& file : files) {
        HsiCube cube = load_cube(dir / file);
        std::vector<std::uint32_t> original(cube.bands);
        std::iota(original.begin(), original.end(), 0u);
        if (!excluded.empty()) {
            cube = remove_bands(cube, excluded);
            original.erase(std::remove_if(original.begin(), original.end(),
                                          [&](std::uint32_t b) { return excluded.count(b) != 0; }),
                           original.end());
        }
        for (Patch& p : extract_patches(cube, cfg.model.input_size, cfg.data.policy)) {
            p.source.band = original[p.source.band];
            if (cfg.data.scale != 1.0)
                for (float& v : p.pixels) v = static_cast<float>(v * cfg.data.scale);
            if (labels.empty()) {
                corpus.seen.push_back(std::move(p));
                continue;
            }
            const auto it = labels.find(p.source);
            if (it == labels.end())
                throw DataError("patch " + p.source.str() + " is not listed in the manifest (patch geometry changed?)");
            if (it->second == "clean")
                corpus.seen.push_back(std::move(p));
            else if (it->second == "artefact")
                corpus.unseen.push_back(std::move(p));
        }
    }
    return corpus;
}

DatasetSplit load_split(const PipelineConfig& cfg) {
    Corpus c = load_corpus(cfg);
    return split_dataset(std::move(c.seen), std::move(c.unseen), cfg.data.split, cfg.data.split_seed);
}

std::vector<double> run_train(const PipelineConfig& cfg, const TrainRunOptions& opts) {
    cfg.validate();
    const DatasetSplit split = load_split(cfg);
    write_resolved_config(cfg, "train");
    const fs::path ckpt = cfg.output_dir / outputs::kCheckpoint;

    CaeModelF model = build_model<float>(cfg.model, cfg.train.seed);
    std::optional<TrainState> resume;
    if (opts.resume) {
        auto [m, st] = load_checkpoint(ckpt);
        if (!(m.config == cfg.model)) throw ConfigError("checkpoint topology differs from the configured model");
        model = std::move(m);
        resume = std::move(st);
        log(1, "train: resuming at epoch " + std::to_string(resume->next_epoch));
    }
    TrainCallbacks cb;
    cb.checkpoint = [&](const CaeModelF& m, const TrainState& st) { save_checkpoint(ckpt, m, st); };
    cb.epoch_end = [&](int epoch, double loss) {
        log(1, "train: epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.train.epochs) + " loss " +
                   fmt(loss));
    };
    const auto history = train(model, split.train, cfg.train, cb, std::move(resume));
    save_weights(model, cfg.output_dir / outputs::kWeights);
    std::string h;
    for (double v : history) h += fmt(v) + "\n";
    write_text(cfg.output_dir / outputs::kHistory, h);
    return history;
}

namespace {

std::vector<PatchResult> score_float(const CaeModelF& model, const std::vector<Patch>& patches) {
    std::vector<PatchResult> out;
    constexpr std::size_t batch = 8;
    const std::size_t px = model.config.input_size * model.config.input_size;
    for (std::size_t b0 = 0; b0 < patches.size(); b0 += batch) {
        const std::size_t count = std::min(batch, patches.size() - b0);
        const Tensor4f x = patches_to_tensor<float>(patches, b0, count);
        const Tensor4f y = infer(model, x);
        for (std::size_t i = 0; i < count; ++i) {
            const Patch& p = patches[b0 + i];
            PatchResult r;
            r.source = p.source.str();
            r.error = reconstruction_error<float>(x.span().subspan(i * px, px), y.span().subspan(i * px, px), 0.0);
            r.truth = truth_of(p);
            out.push_back(std::move(r));
        }
    }
    return out;
}

std::vector<PatchResult> score_quantized(const QuantizedModel& qm, const std::vector<Patch>& patches) {
    std::vector<PatchResult> out;
    for (const Patch& p : patches) {
        const Tensor4f x = patch_to_tensor<float>(p);
        const Tensor4f y = qforward(qm, x);
        PatchResult r;
        r.source = p.source.str();
        r.error = reconstruction_error<float>(x.span(), y.span(), 0.0);
        r.truth = truth_of(p);
        out.push_back(std::move(r));
    }
    return out;
}

std::optional<double> float_k(const CaeModelF& model, const std::vector<Patch>& validation) {
    if (validation.empty()) return std::nullopt;
    const auto scored = score_float(model, validation);
    std::vector<ReconError> errs;
    for (const auto& r : scored) errs.push_back(r.error);
    try {
        return select_k(errs);
    } catch (const KSelectionError&) {
        return std::nullopt;
    }
}

} // namespace

QuantizeSummary run_quantize(const PipelineConfig& cfg, const std::optional<fs::path>& weights) {
    cfg.validate();
    const fs::path wpath = weights ? *weights : cfg.output_dir / outputs::kWeights;
    const CaeModelF model = load_weights(wpath);
    PipelineConfig resolved = cfg;
    resolved.model = model.config;
    const DatasetSplit split = load_split(resolved);
    write_resolved_config(resolved, "quantize");

    const CalibrationMode mode = cfg.quant.calibration;
    const CalibrationStats stats = calibrate(model, split.train, mode == CalibrationMode::Percentile999);

    QuantizeSummary summary;
    CaeModelF source = model;
    if (cfg.quant.finetune_epochs > 0) {
        FinetuneConfig fc;
        fc.epochs = cfg.quant.finetune_epochs;
        fc.lr = cfg.quant.finetune_lr;
        fc.batch_size = cfg.quant.finetune_batch_size;
        fc.seed = cfg.train.seed;
        fc.mode = mode;
        fc.k = cfg.detector.k ? cfg.detector.k : float_k(model, split.validation);
        source = finetune_quantized(model, stats, split, fc, &summary.finetune_history);
        std::string h;
        for (double v : summary.finetune_history) h += fmt(v) + "\n";
        write_text(cfg.output_dir / outputs::kFinetuneHistory, h);
    }
    const QuantizedModel qm = quantize_model(source, stats, mode);
    save_quantized(qm, cfg.output_dir / outputs::kQuantized);

    // Dual-path check: integer executor against the float simulation.
    const CaeModelF folded = model.config.batchnorm ? fold_batchnorm(source) : source;
    const auto sites = site_quant_params(stats, mode);
    const auto& pool = split.validation.empty() ? split.train : split.validation;
    const std::size_t n = std::min(cfg.quant.dual_path_patches, pool.size());
    summary.dual_path_exact = true;
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor4f x = patch_to_tensor<float>(pool[i]);
        if (qforward_int(qm, x).data != fake_quant_forward(folded, sites, x).data) summary.dual_path_exact = false;
    }
    summary.dual_path_checked = n;

    nlohmann::json site_list = nlohmann::json::array();
    for (std::size_t s = 0; s < stats.sites.size(); ++s)
        site_list.push_back({{"site", s},
                             {"min", stats.sites[s].min},
                             {"max", stats.sites[s].max},
                             {"scale", sites[s].scale},
                             {"zero_point", sites[s].zero_point}});
    summary.calibration = {{"mode", to_string(mode)}, {"patches", stats.patches}, {"sites", site_list}};
    write_json(cfg.output_dir / outputs::kCalibration, summary.calibration);
    write_json(cfg.output_dir / outputs::kQuantReport,
               {{"dual_path", summary.dual_path_exact ? "exact" : "mismatch"},
                {"dual_path_patches", n},
                {"int8_kernel", qkernel_has_vnni() ? "vnni" : "scalar"},
                {"finetune_epochs", cfg.quant.finetune_epochs},
                {"finetune_history", summary.finetune_history}});
    log(1, std::string("quantize: dual path ") + (summary.dual_path_exact ? "exact" : "MISMATCH"));
    return summary;
}

std::vector<PatchResult> score_validation(const PipelineConfig& cfg, const fs::path& model_file) {
    const std::string magic = file_magic(model_file);
    PipelineConfig resolved = cfg;
    if (magic == "CAEW") {
        const CaeModelF model = load_weights(model_file);
        resolved.model = model.config;
        return score_float(model, load_split(resolved).validation);
    }
    if (magic == "CAEQ") {
        const QuantizedModel qm = load_quantized(model_file);
        resolved.model.input_size = qm.config.input_size;
        return score_quantized(qm, load_split(resolved).validation);
    }
    throw FormatError(model_file.string() + ": not a CAEW or CAEQ model file");
}

DetectionReport run_eval(const PipelineConfig& cfg, const fs::path& model_file) {
    cfg.validate();
    write_resolved_config(cfg, "eval");
    const bool quantized = file_magic(model_file) == "CAEQ";
    auto scored = score_validation(cfg, model_file);
    DetectOptions opts;
    opts.k = cfg.detector.k;
    opts.threshold = cfg.detector.threshold;
    const fs::path float_weights = cfg.output_dir / outputs::kWeights;
    if (quantized && !opts.k && fs::exists(float_weights)) {
        // k stays the float model's choice.
        std::vector<ReconError> errs;
        for (const auto& r : score_validation(cfg, float_weights)) errs.push_back(r.error);
        if (!errs.empty()) opts.k = select_k(errs);
    }
    DetectionReport report = detect(std::move(scored), opts);
    write_json(report_path(cfg, quantized ? Precision::Int8 : Precision::Float32), to_json(report));
    return report;
}

DetectionReport run_eval_scores(const PipelineConfig& cfg, const fs::path& scores_file) {
    std::ifstream in(scores_file);
    if (!in) throw IoError("cannot open scores '" + scores_file.string() + "'");
    write_resolved_config(cfg, "eval");
    std::vector<PatchResult> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || (lineno == 1 && line.rfind("source", 0) == 0)) continue;
        const auto f = split_tabs(line);
        if (f.size() != 4) throw FormatError(scores_file.string() + ":" + std::to_string(lineno) + ": expected 4 columns");
        PatchResult r;
        r.source = f[0];
        try {
            r.error.mse = std::stod(f[1]);
            r.error.msle = std::stod(f[2]);
        } catch (const std::logic_error&) {
            throw FormatError(scores_file.string() + ":" + std::to_string(lineno) + ": bad number");
        }
        if (f[3] == "Similar") r.truth = Verdict::Similar;
        else if (f[3] == "Anomalous") r.truth = Verdict::Anomalous;
        else throw FormatError(scores_file.string() + ":" + std::to_string(lineno) + ": unknown truth '" + f[3] + "'");
        rows.push_back(std::move(r));
    }
    DetectOptions opts;
    opts.k = cfg.detector.k;
    opts.threshold = cfg.detector.threshold;
    DetectionReport report = detect(std::move(rows), opts);
    write_json(cfg.output_dir / "report_scores.json", to_json(report));
    return report;
}

nlohmann::json to_json(const BenchReport& r) {
    return {{"precision", to_string(r.precision)},
            {"iterations", r.iterations},
            {"warmup", r.warmup},
            {"input_size", r.input_size},
            {"latency_ms", {{"mean", r.mean_ms}, {"p50", r.p50_ms}, {"p99", r.p99_ms}, {"min", r.min_ms}, {"max", r.max_ms}}},
            {"throughput_per_s", r.throughput},
            {"output_checksum", r.output_checksum},
            {"environment", r.environment}};
}

namespace {

std::string environment_description() {
    std::string cpu = "unknown cpu";
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) cpu = line.substr(colon + 2);
            break;
        }
    }
    std::string s = cpu + "; single thread; int8 kernel " + (qkernel_has_vnni() ? "vnni" : "scalar");
#ifdef __VERSION__
    s += "; compiler " __VERSION__;
#endif
    return s;
}

std::uint64_t checksum(std::span<const float> v) {
    std::uint64_t h = 1469598103934665603ull;
    for (float f : v) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, sizeof bits);
        for (int i = 0; i < 4; ++i) {
            h ^= (bits >> (8 * i)) & 0xFF;
            h *= 1099511628211ull;
        }
    }
    return h;
}

double nearest_rank(const std::vector<double>& sorted, double q) {
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

} // namespace

BenchReport run_bench(const PipelineConfig& cfg, const fs::path& model_file) {
    if (cfg.bench.iterations == 0) throw ConfigError("bench.iterations must be >= 1");
    write_resolved_config(cfg, "bench");
    const std::string magic = file_magic(model_file);
    const Precision precision = magic == "CAEQ" ? Precision::Int8 : Precision::Float32;
    if (magic != "CAEQ" && magic != "CAEW") throw FormatError(model_file.string() + ": not a model file");
    if (precision != cfg.bench.precision)
        throw ConfigError("model file '" + model_file.string() + "' is " + to_string(precision) +
                          " but the requested precision is " + to_string(cfg.bench.precision));

    std::optional<CaeModelF> fmodel;
    std::optional<QuantizedModel> qmodel;
    std::size_t size = 0;
    if (precision == Precision::Float32) {
        fmodel = load_weights(model_file);
        size = fmodel->config.input_size;
    } else {
        qmodel = load_quantized(model_file);
        size = qmodel->config.input_size;
    }

    SceneConfig sc = cfg.synth.scene;
    sc.bands = 1;
    sc.rows = sc.cols = static_cast<std::uint32_t>(size);
    sc.seed = cfg.bench.seed;
    sc.name = "bench";
    const HsiCube cube = gen_cube(sc);
    Tensor4f x(1, 1, size, size);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(cube.data[i] * cfg.data.scale);

    auto run_once = [&]() { return fmodel ? infer(*fmodel, x) : qforward(*qmodel, x); };
    for (std::size_t i = 0; i < cfg.bench.warmup; ++i) (void)run_once();

    BenchReport r;
    r.precision = precision;
    r.iterations = cfg.bench.iterations;
    r.warmup = cfg.bench.warmup;
    r.input_size = size;
    r.environment = environment_description();
    std::vector<double> ms;
    ms.reserve(r.iterations);
    Tensor4f y;
    for (std::size_t i = 0; i < r.iterations; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        y = run_once();
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        log(2, "bench: iteration " + std::to_string(i + 1) + " " + fmt(ms.back()) + " ms");
    }
    r.output_checksum = checksum(y.span());
    r.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    std::sort(ms.begin(), ms.end());
    r.p50_ms = nearest_rank(ms, 0.50);
    r.p99_ms = nearest_rank(ms, 0.99);
    r.min_ms = ms.front();
    r.max_ms = ms.back();
    r.throughput = 1000.0 / r.mean_ms;
    write_json(bench_path(cfg, precision), to_json(r));
    return r;
}

} // namespace hsicae
