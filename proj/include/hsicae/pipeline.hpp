#pragma once

// Pipeline configuration and the five commands behind the CLI: gen, train,
// quantize, eval and bench.

#include <hsicae/datacube.hpp>
#include <hsicae/detector.hpp>
#include <hsicae/model.hpp>
#include <hsicae/quant.hpp>
#include <hsicae/synth.hpp>

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hsicae {

enum class Precision { Float32, Int8 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& s); // "fp32" / "int8"

struct DataConfig {
    std::filesystem::path dir = "data";
    double scale = 1.0; // linear factor applied to every patch
    PatchPolicy policy = PatchPolicy::NonOverlapTruncate;
    std::string exclude_bands = "none"; // none | aviris | indian_pines | index list such as 1,3,10-12
    SplitFractions split;
    std::uint64_t split_seed = 0;
};

struct CorpusConfig {
    SceneConfig scene; // name and seed are set per scene
    std::size_t clean_scenes = 3;
    std::size_t artefact_scenes = 3;
    std::vector<ArtefactKind> kinds{ArtefactKind::CloudOcclusion, ArtefactKind::SpectralShift,
                                    ArtefactKind::SensorStripe};
    double coverage = 0.25;
    double cloud_magnitude = 9000.0;
    double shift_magnitude = 0.5;
    double stripe_magnitude = 0.0;
    // A patch counts as an artefact patch from this affected fraction up;
    // patches with a smaller nonzero fraction are left out.
    double min_affected = 0.1;
    std::uint64_t seed = 0;
};

struct QuantOptions {
    CalibrationMode calibration = CalibrationMode::MinMax;
    int finetune_epochs = 0;
    double finetune_lr = 1e-4;
    std::size_t finetune_batch_size = 16;
    std::size_t dual_path_patches = 16;
};

struct DetectorOptions {
    std::optional<double> k;
    std::optional<double> threshold;
};

struct BenchOptions {
    std::size_t warmup = 10;
    std::size_t iterations = 1000;
    Precision precision = Precision::Int8;
    std::uint64_t seed = 0;
};

struct PipelineConfig {
    std::filesystem::path output_dir = "out";
    DataConfig data;
    CaeConfig model;
    TrainConfig train;
    QuantOptions quant;
    DetectorOptions detector;
    CorpusConfig synth;
    BenchOptions bench;

    // Parses key=value lines ('#' starts a comment). Unknown keys and bad
    // values raise ConfigError. Keys not present keep their defaults.
    static PipelineConfig from_text(const std::string& text);
    static PipelineConfig from_file(const std::filesystem::path& path);
    void set(const std::string& key, const std::string& value);
    // Every field, including defaulted ones; from_text(to_text()) == *this.
    std::string to_text() const;
    void validate() const; // throws ConfigError
};

std::set<std::size_t> parse_band_list(const std::string& spec);

// Paths inside the output directory.
namespace outputs {
inline constexpr const char* kWeights = "weights.caew";
inline constexpr const char* kHistory = "history.txt";
inline constexpr const char* kCheckpoint = "checkpoint.caec";
inline constexpr const char* kQuantized = "model.caeq";
inline constexpr const char* kCalibration = "calibration.json";
inline constexpr const char* kQuantReport = "quantize_report.json";
inline constexpr const char* kFinetuneHistory = "finetune_history.txt";
inline constexpr const char* kManifest = "manifest.tsv";
} // namespace outputs

std::filesystem::path report_path(const PipelineConfig& cfg, Precision p);
std::filesystem::path bench_path(const PipelineConfig& cfg, Precision p);

struct ManifestRow {
    std::string cube_file;
    PatchSource source;
    std::string label; // clean | artefact | partial
    double affected = 0.0;
};

struct GenSummary {
    std::size_t cubes = 0;
    std::size_t clean_patches = 0;
    std::size_t artefact_patches = 0;
    std::size_t partial_patches = 0;
};

// Synthetic scenes into data.dir as HSIB files plus manifest.tsv.
GenSummary run_gen(const PipelineConfig& cfg);

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

struct Corpus {
    std::vector<Patch> seen;
    std::vector<Patch> unseen;
};

// Patches of every cube in data.dir, labeled by the manifest when present
// (otherwise all seen), band-filtered and scaled.
Corpus load_corpus(const PipelineConfig& cfg);
DatasetSplit load_split(const PipelineConfig& cfg);

struct TrainRunOptions {
    bool resume = false;
};

// Trains from scratch (or resumes from the checkpoint) and writes weights
// and history. Returns the full history.
std::vector<double> run_train(const PipelineConfig& cfg, const TrainRunOptions& opts = {});

struct QuantizeSummary {
    bool dual_path_exact = false;
    std::size_t dual_path_checked = 0;
    nlohmann::json calibration;
    std::vector<double> finetune_history;
};

QuantizeSummary run_quantize(const PipelineConfig& cfg, const std::optional<std::filesystem::path>& weights = {});

// Labeled scores of the validation patches under a model file (CAEW or CAEQ).
std::vector<PatchResult> score_validation(const PipelineConfig& cfg, const std::filesystem::path& model_file);

// Evaluates on the validation split. For an integer model with no k given,
// k is taken from the float weights in the output directory when present.
DetectionReport run_eval(const PipelineConfig& cfg, const std::filesystem::path& model_file);

// Evaluates precomputed scores (TSV: source, mse, msle, truth).
DetectionReport run_eval_scores(const PipelineConfig& cfg, const std::filesystem::path& scores_file);

struct BenchReport {
    Precision precision = Precision::Int8;
    std::size_t iterations = 0;
    std::size_t warmup = 0;
    double mean_ms = 0.0, p50_ms = 0.0, p99_ms = 0.0, min_ms = 0.0, max_ms = 0.0;
    double throughput = 0.0; // patches per second
    std::size_t input_size = 0;
    std::string environment;
    std::uint64_t output_checksum = 0;
};

nlohmann::json to_json(const BenchReport& r);

BenchReport run_bench(const PipelineConfig& cfg, const std::filesystem::path& model_file);

// Resolved configuration written next to every command's outputs.
std::filesystem::path write_resolved_config(const PipelineConfig& cfg, const std::string& command);

// Verbosity from HSICAE_VERBOSE (0 quiet, 1 progress, 2 detail).
int verbosity();

} // namespace hsicae
