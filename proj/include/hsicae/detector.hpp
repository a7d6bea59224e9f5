#pragma once

// Reconstruction-error artefact classifier: the MSE + k * MSLE score, the
// choice of k, the F1-maximizing threshold sweep and metric reporting.
// Positive class is Similar (artefact-free).

#include <hsicae/errors.hpp>

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hsicae {

enum class Verdict { Similar, Anomalous };

struct ReconError {
    double mse = 0.0;
    double msle = 0.0;
    double k = 0.0;
    double r_err = 0.0; // mse + k * msle
};

// Threshold used when there is nothing to sweep over, at raw radiance scale.
inline constexpr double kDefaultThreshold = 70000.0;

template <typename T>
ReconError reconstruction_error(std::span<const T> x, std::span<const T> y, double k);

// Recombines stored components with a different k.
ReconError with_k(const ReconError& e, double k);

// k = mean(mse) / mean(msle), so both terms contribute equally on average.
double select_k(std::span<const ReconError> errors);

inline Verdict classify(double r_err, double threshold) {
    return r_err < threshold ? Verdict::Similar : Verdict::Anomalous;
}

struct ConfusionMatrix {
    std::uint64_t tp = 0; // true Similar, predicted Similar
    std::uint64_t fn = 0; // true Similar, predicted Anomalous
    std::uint64_t fp = 0; // true Anomalous, predicted Similar
    std::uint64_t tn = 0; // true Anomalous, predicted Anomalous

    std::uint64_t total() const { return tp + fn + fp + tn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const double> errors, std::span<const Verdict> truths, double threshold);

// Percentages; a ratio with a zero denominator is absent.
struct Metrics {
    std::optional<double> accuracy, f1, recall, precision, fnr, fpr;
};

Metrics compute_metrics(const ConfusionMatrix& cm);

// F1 of the Similar class as a fraction, 0 when undefined.
double f1_score(const ConfusionMatrix& cm);
double false_positive_rate(const ConfusionMatrix& cm);

struct ThresholdChoice {
    double threshold = kDefaultThreshold;
    std::optional<double> f1; // fraction in [0,1]; absent when nothing was swept
    ConfusionMatrix confusion;
};

// Exhaustive sweep over the midpoints between consecutive distinct errors
// plus one threshold below and one above every error. Maximizes F1; ties go
// to the lower false positive rate, then to the smaller threshold. Empty
// input returns kDefaultThreshold.
ThresholdChoice select_threshold(std::span<const double> errors, std::span<const Verdict> truths);

struct PatchResult {
    std::string source;
    ReconError error;
    Verdict truth = Verdict::Similar;
    Verdict verdict = Verdict::Similar;
};

struct DetectionReport {
    double k = 1.0;
    double threshold = kDefaultThreshold;
    ConfusionMatrix confusion;
    Metrics metrics;
    std::vector<PatchResult> patches;
};

struct DetectOptions {
    std::optional<double> k;         // overrides select_k
    std::optional<double> threshold; // overrides the sweep
};

// Scores labeled patches: picks k (unless given), sweeps the threshold
// (unless given), classifies and tallies.
DetectionReport detect(std::vector<PatchResult> patches, const DetectOptions& opts);

nlohmann::json to_json(const DetectionReport& report);
nlohmann::json to_json(const Metrics& m);
std::string to_string(Verdict v);

} // namespace hsicae
