#pragma once

#include <hsicae/quant.hpp>
#include <hsicae/rng.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace checks {

using namespace hsicae;

inline std::vector<Patch> random_patches(std::size_t n, std::size_t size, Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<Patch> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].size = size;
        out[i].pixels.resize(size * size);
        for (float& v : out[i].pixels) v = static_cast<float>(rng.uniform(lo, hi));
        out[i].source = {"rand", 0, static_cast<std::uint32_t>(i), 0};
    }
    return out;
}

// Random weights, biases and BN statistics on a small random topology.
inline CaeModelF random_toy_model(Rng& rng, std::uint64_t seed, bool batchnorm = true) {
    CaeConfig c = CaeConfig::with_filters({1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)}, 2 * (1 + rng.below(5)));
    c.kernel = rng.below(3) ? 3 : 1;
    c.stride2_layer_index = rng.below(3);
    c.batchnorm = batchnorm;
    c.output_activation = rng.below(2) ? OutputActivation::ReLU : OutputActivation::Linear;
    CaeModelF m = build_model<float>(c, seed);
    for (auto& l : m.layers) {
        if (auto* conv = std::get_if<ConvLayer<float>>(&l))
            for (float& b : conv->params.bias) b = static_cast<float>(rng.uniform(-0.3, 0.3));
        if (auto* bn = std::get_if<BatchNormLayer<float>>(&l)) {
            auto& p = bn->params;
            for (std::size_t ch = 0; ch < p.channels(); ++ch) {
                p.gamma[ch] = static_cast<float>(rng.uniform(0.5, 2.0));
                p.beta[ch] = static_cast<float>(rng.uniform(-0.5, 0.5));
                p.running_mean[ch] = static_cast<float>(rng.uniform(-0.5, 0.5));
                p.running_var[ch] = static_cast<float>(rng.uniform(0.2, 3.0));
            }
        }
    }
    return m;
}

struct RoundTripResult {
    std::size_t tensors = 0, values = 0, violations = 0;
    double worst_ratio = 0.0; // max |x' - clamp(x)| / scale
};

// |dequant(quant(x)) - clamp(x)| <= scale/2 with clamp to the representable range.
inline RoundTripResult round_trip_fuzz(std::size_t count, std::uint64_t seed) {
    RoundTripResult r;
    for (std::size_t t = 0; t < count; ++t) {
        Rng rng(mix_seed(seed, t));
        const std::size_t n = 1 + rng.below(256);
        const double spread = std::pow(10.0, rng.uniform(-3.0, 4.0));
        std::vector<float> x(n);
        for (float& v : x) v = static_cast<float>(rng.uniform(-spread, spread));
        QuantParams p;
        if (rng.below(2)) {
            p = weight_quant_params<float>(x);
        } else {
            // Calibrated on a sub-range so some values saturate.
            const double lo = rng.uniform(-spread, 0.0), hi = rng.uniform(0.0, spread);
            p = activation_quant_params(lo, hi);
        }
        const auto q = quantize_tensor<float>(x, p);
        const auto back = dequantize_tensor(q, p);
        const double lo = (p.qmin() - p.zero_point) * p.scale, hi = (p.qmax() - p.zero_point) * p.scale;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = std::clamp(static_cast<double>(x[i]), lo, hi);
            const double ratio = std::abs(back[i] - c) / p.scale;
            r.worst_ratio = std::max(r.worst_ratio, ratio);
            if (ratio > 0.5 * (1.0 + 1e-9)) ++r.violations;
        }
        ++r.tensors;
        r.values += n;
    }
    return r;
}

struct DualPathResult {
    std::size_t models = 0, mismatched_models = 0, compared_values = 0;
    std::string first_failure;
};

inline bool same_qtensor(const QTensor& a, const QTensor& b) {
    return a.shape == b.shape && a.data == b.data && a.params == b.params;
}

// Integer executor against the independent fake-quant simulation, final
// output and every intermediate, on random calibrated toy models.
inline DualPathResult dual_path_random_models(std::size_t count, std::uint64_t seed) {
    DualPathResult r;
    for (std::size_t t = 0; t < count; ++t) {
        Rng rng(mix_seed(seed, t));
        const CaeModelF model = random_toy_model(rng, mix_seed(seed, 1000 + t), rng.below(4) != 0);
        const std::size_t s = model.config.input_size;
        const auto calib = random_patches(1 + rng.below(6), s, rng, 0.0, rng.uniform(0.5, 5.0));
        const CalibrationStats stats = calibrate(model, calib, true);
        const CalibrationMode mode = rng.below(2) ? CalibrationMode::MinMax : CalibrationMode::Percentile999;
        const QuantizedModel qm = quantize_model(model, stats, mode);
        const CaeModelF folded = model.config.batchnorm ? fold_batchnorm(model) : model;
        const auto sites = site_quant_params(stats, mode);

        // Inputs partly outside the calibrated range exercise saturation.
        const auto probe = random_patches(1 + rng.below(3), s, rng, -0.5, 6.0);
        const Tensor4f x = patches_to_tensor<float>(probe, 0, probe.size());
        std::vector<QTensor> ia, ib;
        const QTensor a = qforward_int(qm, x, &ia);
        const QTensor b = fake_quant_forward(folded, sites, x, &ib);
        bool ok = same_qtensor(a, b) && ia.size() == ib.size();
        for (std::size_t i = 0; ok && i < ia.size(); ++i) ok = same_qtensor(ia[i], ib[i]);
        // The scalar kernel must agree as well.
        ok = ok && same_qtensor(qforward_int(qm, x, nullptr, QKernel::Scalar), a);
        ++r.models;
        r.compared_values += a.data.size();
        if (!ok) {
            if (r.first_failure.empty()) r.first_failure = "model " + std::to_string(t) + ": " + model.config.to_text();
            ++r.mismatched_models;
        }
    }
    return r;
}

// max |infer(model) - infer(folded)| / max |infer(model)|
inline double bn_fold_relative_error(const CaeModelF& model, const Tensor4f& x) {
    const CaeModelF folded = fold_batchnorm(model);
    const Tensor4f a = infer(model, x);
    const Tensor4f b = infer(folded, x);
    double diff = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(static_cast<double>(a.span()[i]) - b.span()[i]));
        mag = std::max(mag, std::abs(static_cast<double>(a.span()[i])));
    }
    return mag > 0.0 ? diff / mag : diff;
}

inline double bn_fold_worst_random(std::size_t count, std::uint64_t seed) {
    double worst = 0.0;
    for (std::size_t t = 0; t < count; ++t) {
        Rng rng(mix_seed(seed, t));
        const CaeModelF m = random_toy_model(rng, mix_seed(seed, 500 + t), true);
        const auto p = random_patches(2, m.config.input_size, rng);
        worst = std::max(worst, bn_fold_relative_error(m, patches_to_tensor<float>(p, 0, 2)));
    }
    return worst;
}

} // namespace checks
