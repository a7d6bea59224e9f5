#include <hsicae/detector.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hsicae {

template <typename T>
ReconError reconstruction_error(std::span<const T> x, std::span<const T> y, double k) {
    if (x.size() != y.size())
        throw ShapeError("reconstruction size " + std::to_string(y.size()) + " differs from input size " +
                         std::to_string(x.size()));
    if (x.empty()) throw ShapeError("empty patch");
    if (!(k >= 0.0)) throw ArgError("k must be non-negative");
    double se = 0.0, sle = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double a = x[i];
        const double b = y[i];
        const double d = a - b;
        se += d * d;
        const double l = std::log1p(std::max(a, 0.0)) - std::log1p(std::max(b, 0.0));
        sle += l * l;
    }
    const double n = static_cast<double>(x.size());
    return with_k(ReconError{se / n, sle / n, 0.0, 0.0}, k);
}

ReconError with_k(const ReconError& e, double k) {
    ReconError out = e;
    out.k = k;
    out.r_err = e.mse + k * e.msle;
    return out;
}

double select_k(std::span<const ReconError> errors) {
    if (errors.empty()) throw ArgError("select_k needs at least one error");
    double mse = 0.0, msle = 0.0;
    for (const auto& e : errors) {
        mse += e.mse;
        msle += e.msle;
    }
    if (!(msle > 0.0)) throw KSelectionError("mean MSLE is zero; k is undefined (force k explicitly)");
    return mse / msle;
}

ConfusionMatrix confusion(std::span<const double> errors, std::span<const Verdict> truths, double threshold) {
    if (errors.size() != truths.size()) throw ArgError("errors and truths differ in length");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < errors.size(); ++i) {
        const bool predicted_similar = classify(errors[i], threshold) == Verdict::Similar;
        if (truths[i] == Verdict::Similar)
            ++(predicted_similar ? cm.tp : cm.fn);
        else
            ++(predicted_similar ? cm.fp : cm.tn);
    }
    return cm;
}

double f1_score(const ConfusionMatrix& cm) {
    const std::uint64_t denom = 2 * cm.tp + cm.fp + cm.fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(cm.tp) / static_cast<double>(denom);
}

double false_positive_rate(const ConfusionMatrix& cm) {
    const std::uint64_t denom = cm.fp + cm.tn;
    return denom == 0 ? 0.0 : static_cast<double>(cm.fp) / static_cast<double>(denom);
}

Metrics compute_metrics(const ConfusionMatrix& cm) {
    auto pct = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    Metrics m;
    m.accuracy = pct(cm.tp + cm.tn, cm.total());
    m.precision = pct(cm.tp, cm.tp + cm.fp);
    m.recall = pct(cm.tp, cm.tp + cm.fn);
    if (m.precision && m.recall) m.f1 = pct(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn);
    m.fnr = pct(cm.fn, cm.tp + cm.fn);
    m.fpr = pct(cm.fp, cm.fp + cm.tn);
    return m;
}

ThresholdChoice select_threshold(std::span<const double> errors, std::span<const Verdict> truths) {
    if (errors.size() != truths.size()) throw ArgError("errors and truths differ in length");
    if (errors.empty()) return ThresholdChoice{};
    for (double e : errors)
        if (!std::isfinite(e)) throw ArgError("reconstruction errors must be finite");

    std::vector<std::size_t> order(errors.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] < errors[b]; });

    ConfusionMatrix cm; // threshold below everything: all Anomalous
    for (Verdict t : truths) ++(t == Verdict::Similar ? cm.fn : cm.tn);
    if (cm.fn == 0 || cm.tn == 0) throw ThresholdError("threshold sweep needs both Similar and Anomalous samples");

    // Candidate thresholds: the smallest error (nothing passes), midpoints
    // between consecutive distinct errors, and just above the largest.
    ThresholdChoice best;
    best.threshold = errors[order.front()];
    best.f1 = f1_score(cm);
    best.confusion = cm;
    double best_fpr = false_positive_rate(cm);

    std::size_t i = 0;
    while (i < order.size()) {
        const double v = errors[order[i]];
        // Move every sample with this error value to Similar.
        for (; i < order.size() && errors[order[i]] == v; ++i) {
            if (truths[order[i]] == Verdict::Similar) {
                --cm.fn;
                ++cm.tp;
            } else {
                --cm.tn;
                ++cm.fp;
            }
        }
        double t;
        if (i < order.size()) {
            const double next = errors[order[i]];
            t = v + (next - v) / 2.0;
            if (!(t > v)) t = next;
        } else {
            t = std::nextafter(v, std::numeric_limits<double>::infinity());
        }
        const double f1 = f1_score(cm);
        const double fpr = false_positive_rate(cm);
        // Candidates arrive in increasing t, so equal F1 and FPR keeps the earlier one.
        if (f1 > *best.f1 || (f1 == *best.f1 && fpr < best_fpr)) {
            best.threshold = t;
            best.f1 = f1;
            best.confusion = cm;
            best_fpr = fpr;
        }
    }
    return best;
}

DetectionReport detect(std::vector<PatchResult> patches, const DetectOptions& opts) {
    DetectionReport report;
    if (opts.k) {
        report.k = *opts.k;
    } else if (!patches.empty()) {
        std::vector<ReconError> errs;
        errs.reserve(patches.size());
        for (const auto& p : patches) errs.push_back(p.error);
        report.k = select_k(errs);
    }
    std::vector<double> r(patches.size());
    std::vector<Verdict> truths(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i) {
        patches[i].error = with_k(patches[i].error, report.k);
        r[i] = patches[i].error.r_err;
        truths[i] = patches[i].truth;
    }
    report.threshold = opts.threshold ? *opts.threshold : select_threshold(r, truths).threshold;
    for (std::size_t i = 0; i < patches.size(); ++i) patches[i].verdict = classify(r[i], report.threshold);
    report.confusion = confusion(r, truths, report.threshold);
    report.metrics = compute_metrics(report.confusion);
    report.patches = std::move(patches);
    return report;
}

std::string to_string(Verdict v) { return v == Verdict::Similar ? "Similar" : "Anomalous"; }

namespace {

nlohmann::json round2(const std::optional<double>& v) {
    if (!v) return nullptr;
    return std::round(*v * 100.0) / 100.0;
}

} // namespace

nlohmann::json to_json(const Metrics& m) {
    return {{"accuracy", round2(m.accuracy)}, {"f1", round2(m.f1)},   {"recall", round2(m.recall)},
            {"precision", round2(m.precision)}, {"fnr", round2(m.fnr)}, {"fpr", round2(m.fpr)}};
}

nlohmann::json to_json(const DetectionReport& report) {
    nlohmann::json patches = nlohmann::json::array();
    for (const auto& p : report.patches) {
        patches.push_back({{"source", p.source},
                           {"r_err", p.error.r_err},
                           {"mse", p.error.mse},
                           {"msle", p.error.msle},
                           {"truth", to_string(p.truth)},
                           {"verdict", to_string(p.verdict)}});
    }
    return {{"k", report.k},
            {"threshold", report.threshold},
            {"confusion",
             {{"tp", report.confusion.tp}, {"fn", report.confusion.fn}, {"fp", report.confusion.fp}, {"tn", report.confusion.tn}}},
            {"metrics", to_json(report.metrics)},
            {"patches", std::move(patches)}};
}

template ReconError reconstruction_error<float>(std::span<const float>, std::span<const float>, double);
template ReconError reconstruction_error<double>(std::span<const double>, std::span<const double>, double);

} // namespace hsicae
