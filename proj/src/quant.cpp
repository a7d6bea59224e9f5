#include <hsicae/quant.hpp>

#include <hsicae/detector.hpp>
#include <hsicae/rng.hpp>

#include "binio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hsicae {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::uint32_t kCaeqVersion = 1;

} // namespace

void QuantParams::validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ArgError("quantization scale must be positive and finite");
    if (zero_point < -128 || zero_point > 127) throw ArgError("zero point out of int8 range");
    if (scheme == QuantScheme::SymmetricWeight && zero_point != 0)
        throw ArgError("symmetric quantization requires zero point 0");
}

std::int8_t quantize_value(double x, const QuantParams& p) {
    double q = round_half_away(x / p.scale) + p.zero_point;
    q = std::min<double>(p.qmax(), std::max<double>(p.qmin(), q));
    return static_cast<std::int8_t>(q);
}

template <typename T>
std::vector<std::int8_t> quantize_tensor(std::span<const T> x, const QuantParams& p) {
    p.validate();
    std::vector<std::int8_t> q(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) q[i] = quantize_value(static_cast<double>(x[i]), p);
    return q;
}

std::vector<double> dequantize_tensor(std::span<const std::int8_t> q, const QuantParams& p) {
    p.validate();
    std::vector<double> x(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) x[i] = dequantize_value(q[i], p);
    return x;
}

template <typename T>
QuantParams weight_quant_params(std::span<const T> w) {
    double m = 0.0;
    for (T v : w) m = std::max(m, std::abs(static_cast<double>(v)));
    QuantParams p;
    p.scheme = QuantScheme::SymmetricWeight;
    p.zero_point = 0;
    p.scale = m > 0.0 ? m / 127.0 : 1.0;
    return p;
}

QuantParams activation_quant_params(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) throw ArgError("invalid activation range");
    QuantParams p;
    p.scheme = QuantScheme::AsymmetricActivation;
    if (lo == hi) {
        const double c = lo;
        if (c == std::round(c) && std::abs(c) <= 255.0) {
            p.scale = 1.0;
            if (c > 127.0) p.zero_point = static_cast<std::int32_t>(127.0 - c);
            else if (c < -128.0) p.zero_point = static_cast<std::int32_t>(-128.0 - c);
            else p.zero_point = 0;
        } else {
            p.scale = std::abs(c) / 127.0;
            p.zero_point = 0;
        }
        return p;
    }
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
    p.scale = (hi - lo) / 255.0;
    const double zp = round_half_away(-128.0 - lo / p.scale);
    p.zero_point = static_cast<std::int32_t>(std::clamp(zp, -128.0, 127.0));
    return p;
}

std::int32_t quantize_bias(double b, double bias_scale) {
    if (!(bias_scale > 0.0)) throw ArgError("bias scale must be positive");
    const double q = round_half_away(b / bias_scale);
    constexpr double lo = static_cast<double>(std::numeric_limits<std::int32_t>::min());
    constexpr double hi = static_cast<double>(std::numeric_limits<std::int32_t>::max());
    return static_cast<std::int32_t>(std::clamp(q, lo, hi));
}

CaeModelF fold_batchnorm(const CaeModelF& model) {
    CaeModelF out;
    out.config = model.config;
    out.config.batchnorm = false;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto* bn = std::get_if<BatchNormLayer<float>>(&model.layers[i]);
        if (bn) throw ArgError("batchnorm layer without a preceding convolution");
        const auto* conv = std::get_if<ConvLayer<float>>(&model.layers[i]);
        const auto* next = i + 1 < model.layers.size() ? std::get_if<BatchNormLayer<float>>(&model.layers[i + 1])
                                                       : nullptr;
        if (!conv || !next) {
            out.layers.push_back(model.layers[i]);
            continue;
        }
        const auto& bp = next->params;
        ConvParams<float> p = conv->params;
        const std::size_t oc = p.out_channels();
        const std::size_t per = p.weights.size() / oc;
        for (std::size_t o = 0; o < oc; ++o) {
            const double a = static_cast<double>(bp.gamma[o]) /
                             std::sqrt(static_cast<double>(bp.running_var[o]) + bp.epsilon);
            for (std::size_t j = 0; j < per; ++j)
                p.weights[o * per + j] = static_cast<float>(static_cast<double>(p.weights[o * per + j]) * a);
            p.bias[o] = static_cast<float>((static_cast<double>(p.bias[o]) - bp.running_mean[o]) * a + bp.beta[o]);
        }
        out.layers.push_back(ConvLayer<float>{std::move(p)});
        ++i;
    }
    return out;
}

namespace {

bool has_batchnorm(const CaeModelF& m) {
    return std::any_of(m.layers.begin(), m.layers.end(),
                       [](const auto& l) { return std::holds_alternative<BatchNormLayer<float>>(l); });
}

CaeModelF folded_copy(const CaeModelF& m) { return has_batchnorm(m) ? fold_batchnorm(m) : m; }

constexpr std::size_t kCalibrationBatch = 8;

// Runs the model over all patches in fixed-size batches, handing every site
// tensor to `visit`.
void for_each_site(const CaeModelF& folded, const std::vector<Patch>& patches,
                   const std::function<void(std::size_t, const Tensor4f&)>& visit) {
    ForwardHooks<float> hooks;
    hooks.activation = [&](std::size_t site, Tensor4f& t) -> std::optional<std::vector<std::uint8_t>> {
        visit(site, t);
        return std::nullopt;
    };
    for (std::size_t b0 = 0; b0 < patches.size(); b0 += kCalibrationBatch) {
        const std::size_t count = std::min(kCalibrationBatch, patches.size() - b0);
        (void)infer(folded, patches_to_tensor<float>(patches, b0, count), &hooks);
    }
}

} // namespace

CalibrationStats calibrate(const CaeModelF& model, const std::vector<Patch>& patches, bool with_histogram) {
    if (patches.empty()) throw ArgError("calibration needs at least one patch");
    const CaeModelF folded = folded_copy(model);
    CalibrationStats stats;
    stats.patches = patches.size();
    stats.sites.assign(folded.site_count(), SiteStats{});
    std::vector<bool> seen(stats.sites.size(), false);

    for_each_site(folded, patches, [&](std::size_t site, const Tensor4f& t) {
        SiteStats& s = stats.sites[site];
        for (float v : t.span()) {
            const double d = v;
            if (!seen[site]) {
                s.min = s.max = d;
                seen[site] = true;
            } else {
                s.min = std::min(s.min, d);
                s.max = std::max(s.max, d);
            }
        }
    });

    if (with_histogram) {
        for (auto& s : stats.sites) s.histogram.assign(kHistogramBins, 0);
        for_each_site(folded, patches, [&](std::size_t site, const Tensor4f& t) {
            SiteStats& s = stats.sites[site];
            const double width = s.max - s.min;
            for (float v : t.span()) {
                std::size_t bin = 0;
                if (width > 0.0) {
                    const double f = (static_cast<double>(v) - s.min) / width * static_cast<double>(kHistogramBins);
                    bin = std::min(static_cast<std::size_t>(std::max(f, 0.0)), kHistogramBins - 1);
                }
                ++s.histogram[bin];
            }
        });
    }
    return stats;
}

std::vector<QuantParams> site_quant_params(const CalibrationStats& stats, CalibrationMode mode) {
    std::vector<QuantParams> out;
    out.reserve(stats.sites.size());
    for (const SiteStats& s : stats.sites) {
        if (s.min > s.max) throw ArgError("calibration site has min > max");
        if (mode == CalibrationMode::MinMax) {
            out.push_back(activation_quant_params(s.min, s.max));
            continue;
        }
        if (s.histogram.size() != kHistogramBins)
            throw ArgError("percentile calibration needs histograms; calibrate with with_histogram");
        const std::uint64_t total = std::accumulate(s.histogram.begin(), s.histogram.end(), std::uint64_t{0});
        const double width = (s.max - s.min) / static_cast<double>(kHistogramBins);
        const double tail = 0.001 * static_cast<double>(total);
        // Lower edge: first bin where the cumulative count exceeds the tail.
        std::size_t lo_bin = 0;
        double cum = 0.0;
        for (; lo_bin < kHistogramBins; ++lo_bin) {
            cum += static_cast<double>(s.histogram[lo_bin]);
            if (cum > tail) break;
        }
        std::size_t hi_bin = kHistogramBins;
        cum = 0.0;
        while (hi_bin > 0) {
            --hi_bin;
            cum += static_cast<double>(s.histogram[hi_bin]);
            if (cum > tail) break;
        }
        lo_bin = std::min(lo_bin, kHistogramBins - 1);
        double lo = s.min + width * static_cast<double>(lo_bin);
        double hi = s.min + width * static_cast<double>(hi_bin + 1);
        if (lo_bin == 0) lo = s.min;
        if (hi_bin + 1 == kHistogramBins) hi = s.max;
        if (hi < lo) hi = lo;
        out.push_back(activation_quant_params(lo, hi));
    }
    return out;
}

namespace {

// Input parameters of every conv, following the site chain (upsampling keeps
// its input grid).
std::vector<QuantParams> conv_input_params(const CaeModelF& folded, const std::vector<QuantParams>& sites) {
    const auto ends = folded.site_layer_ends();
    std::vector<QuantParams> out;
    QuantParams cur = sites.at(0);
    std::size_t next_site = 0;
    for (std::size_t i = 0; i < folded.layers.size(); ++i) {
        if (std::holds_alternative<ConvLayer<float>>(folded.layers[i])) out.push_back(cur);
        if (next_site < ends.size() && ends[next_site] == i) cur = sites.at(++next_site);
    }
    return out;
}

void check_sites(const CaeModelF& folded, const std::vector<QuantParams>& sites) {
    if (sites.size() != folded.site_count())
        throw ArgError("expected " + std::to_string(folded.site_count()) + " activation sites, got " +
                       std::to_string(sites.size()));
    for (const auto& p : sites) p.validate();
}

} // namespace

QuantizedModel quantize_model(const CaeModelF& model, const CalibrationStats& stats, CalibrationMode mode) {
    const CaeModelF folded = folded_copy(model);
    const std::vector<QuantParams> sites = site_quant_params(stats, mode);
    check_sites(folded, sites);
    const auto ends = folded.site_layer_ends();
    const auto inputs = conv_input_params(folded, sites);

    QuantizedModel qm;
    qm.config = folded.config;
    qm.input_params = sites[0];
    std::size_t conv_index = 0;
    for (std::size_t i = 0; i < folded.layers.size(); ++i) {
        if (const auto* c = std::get_if<ConvLayer<float>>(&folded.layers[i])) {
            const auto& p = c->params;
            QConvLayer q;
            q.in_channels = p.in_channels();
            q.out_channels = p.out_channels();
            q.kernel = p.kernel();
            q.stride = p.stride;
            q.weight_params = weight_quant_params<float>(p.weights.span());
            q.weights = quantize_tensor<float>(p.weights.span(), q.weight_params);
            q.input_params = inputs[conv_index];
            const double bias_scale = q.input_params.scale * q.weight_params.scale;
            q.bias.resize(p.bias.size());
            for (std::size_t o = 0; o < p.bias.size(); ++o) q.bias[o] = quantize_bias(p.bias[o], bias_scale);
            // The conv's block ends at the next site boundary at or after it.
            const auto it = std::lower_bound(ends.begin(), ends.end(), i);
            if (it == ends.end()) throw ArgError("conv layer without an activation site");
            q.output_params = sites[static_cast<std::size_t>(it - ends.begin()) + 1];
            q.requant = bias_scale / q.output_params.scale;
            q.relu = i + 1 < folded.layers.size() && std::holds_alternative<ReluLayer>(folded.layers[i + 1]);
            qm.layers.emplace_back(std::move(q));
            ++conv_index;
        } else if (const auto* u = std::get_if<UpsampleLayer>(&folded.layers[i])) {
            qm.layers.emplace_back(QUpsampleLayer{u->factor});
        }
    }
    return qm;
}

namespace {

QTensor quantize_input(const Tensor4f& input, const QuantParams& p) {
    QTensor t;
    t.shape = input.shape();
    t.params = p;
    t.data = quantize_tensor<float>(input.span(), p);
    return t;
}

QTensor upsample_q(const QTensor& x, std::size_t factor) {
    if (factor == 0) throw ArgError("upsample factor must be >= 1");
    QTensor out;
    out.params = x.params;
    out.shape = Shape4{x.shape.n, x.shape.c, x.shape.h * factor, x.shape.w * factor};
    out.data.resize(out.shape.n * out.shape.c * out.shape.h * out.shape.w);
    std::size_t k = 0;
    for (std::size_t nc = 0; nc < x.shape.n * x.shape.c; ++nc) {
        const std::int8_t* src = x.data.data() + nc * x.shape.h * x.shape.w;
        for (std::size_t i = 0; i < out.shape.h; ++i)
            for (std::size_t j = 0; j < out.shape.w; ++j) out.data[k++] = src[(i / factor) * x.shape.w + j / factor];
    }
    return out;
}

void check_input(const CaeConfig& cfg, const Tensor4f& input) {
    const std::size_t s = cfg.input_size;
    if (input.c() != 1 || input.h() != s || input.w() != s)
        throw ShapeError("model expects (N,1," + std::to_string(s) + "," + std::to_string(s) + ") input, got " +
                         input.shape().str());
}

} // namespace

QTensor qforward_int(const QuantizedModel& qm, const Tensor4f& input, std::vector<QTensor>* intermediates,
                     QKernel kernel) {
    check_input(qm.config, input);
    QTensor cur = quantize_input(input, qm.input_params);
    if (intermediates) intermediates->clear();
    for (const QLayer& layer : qm.layers) {
        std::visit(overloaded{
                       [&](const QConvLayer& c) {
                           if (cur.shape.c != c.in_channels)
                               throw ShapeError("conv expects " + std::to_string(c.in_channels) + " channels, got " +
                                                std::to_string(cur.shape.c));
                           const std::size_t oh = same_padding(cur.shape.h, c.kernel, c.stride).out;
                           const std::size_t ow = same_padding(cur.shape.w, c.kernel, c.stride).out;
                           QTensor out;
                           out.shape = Shape4{cur.shape.n, c.out_channels, oh, ow};
                           out.params = c.output_params;
                           out.data.resize(out.shape.n * c.out_channels * oh * ow);
                           const std::size_t in_stride = cur.shape.c * cur.shape.h * cur.shape.w;
                           const std::size_t out_stride = c.out_channels * oh * ow;
                           for (std::size_t n = 0; n < cur.shape.n; ++n)
                               detail::qconv_sample(c, cur.data.data() + n * in_stride, cur.shape.h, cur.shape.w,
                                                    out.data.data() + n * out_stride, kernel);
                           cur = std::move(out);
                       },
                       [&](const QUpsampleLayer& u) { cur = upsample_q(cur, u.factor); },
                   },
                   layer);
        if (intermediates) intermediates->push_back(cur);
    }
    return cur;
}

Tensor4f qforward(const QuantizedModel& qm, const Tensor4f& input, std::vector<QTensor>* intermediates,
                  QKernel kernel) {
    const QTensor q = qforward_int(qm, input, intermediates, kernel);
    Tensor4f out(q.shape.n, q.shape.c, q.shape.h, q.shape.w);
    for (std::size_t i = 0; i < q.data.size(); ++i) out[i] = static_cast<float>(dequantize_value(q.data[i], q.params));
    return out;
}

QTensor fake_quant_forward(const CaeModelF& folded, const std::vector<QuantParams>& site_params,
                           const Tensor4f& input, std::vector<QTensor>* intermediates) {
    if (has_batchnorm(folded)) throw ArgError("fake_quant_forward expects a folded model");
    check_input(folded.config, input);
    check_sites(folded, site_params);
    const auto ends = folded.site_layer_ends();

    // Activations as integer-valued doubles on the grid, offset by the zero point.
    QuantParams grid = site_params[0];
    Tensor4d centered(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i)
        centered[i] = static_cast<double>(quantize_value(input[i], grid)) - grid.zero_point;

    auto snapshot = [&]() {
        QTensor t;
        t.shape = centered.shape();
        t.params = grid;
        t.data.resize(centered.size());
        for (std::size_t i = 0; i < centered.size(); ++i)
            t.data[i] = static_cast<std::int8_t>(centered[i] + grid.zero_point);
        return t;
    };
    if (intermediates) intermediates->clear();

    for (std::size_t i = 0; i < folded.layers.size(); ++i) {
        std::visit(overloaded{
                       [&](const ConvLayer<float>& c) {
                           const auto& p = c.params;
                           const QuantParams wp = weight_quant_params<float>(p.weights.span());
                           const double bias_scale = grid.scale * wp.scale;
                           ConvParams<double> qp;
                           qp.stride = p.stride;
                           qp.weights = Tensor4d(p.weights.shape());
                           for (std::size_t j = 0; j < p.weights.size(); ++j)
                               qp.weights[j] = quantize_value(p.weights[j], wp);
                           qp.bias.resize(p.bias.size());
                           for (std::size_t o = 0; o < p.bias.size(); ++o)
                               qp.bias[o] = quantize_bias(p.bias[o], bias_scale);
                           // Integer operands below 2^53: the double accumulation is exact.
                           const Tensor4d acc = conv2d_forward(centered, qp);
                           const auto it = std::lower_bound(ends.begin(), ends.end(), i);
                           const QuantParams out = site_params[static_cast<std::size_t>(it - ends.begin()) + 1];
                           const double m = bias_scale / out.scale;
                           centered = Tensor4d(acc.shape());
                           for (std::size_t j = 0; j < acc.size(); ++j)
                               centered[j] = static_cast<double>(requantize(static_cast<std::int64_t>(acc[j]), m,
                                                                            out.zero_point)) -
                                             out.zero_point;
                           grid = out;
                           if (intermediates && !(i + 1 < folded.layers.size() &&
                                                  std::holds_alternative<ReluLayer>(folded.layers[i + 1])))
                               intermediates->push_back(snapshot());
                       },
                       [&](const BatchNormLayer<float>&) {},
                       [&](const ReluLayer&) {
                           // Integer ReLU: clamp at the zero point, i.e. at 0 in centered units.
                           for (double& v : centered.span()) v = std::max(v, 0.0);
                           if (intermediates) intermediates->push_back(snapshot());
                       },
                       [&](const UpsampleLayer& u) {
                           centered = upsample2d_nearest(centered, u.factor);
                           if (intermediates) intermediates->push_back(snapshot());
                       },
                   },
                   folded.layers[i]);
    }
    return snapshot();
}

namespace {

double validation_f1(const CaeModelF& model, const CalibrationStats& stats, CalibrationMode mode,
                     const std::vector<Patch>& validation, double k) {
    const QuantizedModel qm = quantize_model(model, stats, mode);
    std::vector<double> errors;
    std::vector<Verdict> truths;
    for (const Patch& p : validation) {
        const Tensor4f x = patch_to_tensor<float>(p);
        const Tensor4f y = qforward(qm, x);
        errors.push_back(reconstruction_error<float>(x.span(), y.span(), k).r_err);
        truths.push_back(p.label == PatchLabel::Unseen ? Verdict::Anomalous : Verdict::Similar);
    }
    return select_threshold(errors, truths).f1.value_or(0.0);
}

bool has_both_labels(const std::vector<Patch>& v) {
    bool seen = false, unseen = false;
    for (const Patch& p : v) {
        seen = seen || p.label == PatchLabel::Seen;
        unseen = unseen || p.label == PatchLabel::Unseen;
    }
    return seen && unseen;
}

} // namespace

CaeModelF finetune_quantized(const CaeModelF& model, const CalibrationStats& stats, const DatasetSplit& split,
                             const FinetuneConfig& cfg, std::vector<double>* history) {
    if (cfg.epochs < 0) throw ConfigError("fine-tune epochs must be >= 0");
    if (history) history->clear();
    if (cfg.epochs == 0) return model;
    if (!(cfg.lr > 0.0)) throw ConfigError("fine-tune learning rate must be positive");
    if (cfg.batch_size == 0) throw ConfigError("fine-tune batch size must be positive");
    if (split.train.empty()) throw ArgError("train set is empty");

    CaeModelF work = folded_copy(model);
    const std::vector<QuantParams> sites = site_quant_params(stats, cfg.mode);
    check_sites(work, sites);
    const std::vector<QuantParams> conv_in = conv_input_params(work, sites);

    ForwardHooks<float> hooks;
    hooks.conv_params = [&](std::size_t conv_index, const ConvParams<float>& p) {
        ConvParams<float> q = p;
        const QuantParams wp = weight_quant_params<float>(p.weights.span());
        for (std::size_t j = 0; j < q.weights.size(); ++j)
            q.weights[j] = static_cast<float>(dequantize_value(quantize_value(p.weights[j], wp), wp));
        const double bias_scale = conv_in[conv_index].scale * wp.scale;
        for (std::size_t o = 0; o < q.bias.size(); ++o)
            q.bias[o] = static_cast<float>(quantize_bias(p.bias[o], bias_scale) * bias_scale);
        return q;
    };
    hooks.activation = [&](std::size_t site, Tensor4f& t) -> std::optional<std::vector<std::uint8_t>> {
        const QuantParams& qp = sites[site];
        const double lo = static_cast<double>(qp.qmin() - qp.zero_point) * qp.scale;
        const double hi = static_cast<double>(qp.qmax() - qp.zero_point) * qp.scale;
        std::vector<std::uint8_t> mask(t.size());
        for (std::size_t j = 0; j < t.size(); ++j) {
            const double v = t[j];
            mask[j] = v >= lo && v <= hi;
            t[j] = static_cast<float>(dequantize_value(quantize_value(v, qp), qp));
        }
        return mask;
    };

    const bool keep_best = cfg.k.has_value() && has_both_labels(split.validation);
    CaeModelF best = work;
    double best_f1 = keep_best ? validation_f1(work, stats, cfg.mode, split.validation, *cfg.k) : 0.0;

    AdamState adam;
    adam.lr = cfg.lr;
    const std::size_t n = split.train.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        for (std::size_t b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, n - b0);
            std::vector<Patch> batch;
            batch.reserve(count);
            for (std::size_t i = 0; i < count; ++i) batch.push_back(split.train[order[b0 + i]]);
            const Tensor4f x = patches_to_tensor<float>(batch, 0, count);
            ForwardTrace<float> trace;
            const Tensor4f y = forward(work, x, Mode::Infer, &trace, &hooks);
            const auto loss = mse_loss(x, y);
            if (!std::isfinite(loss.value))
                throw DivergedError("fine-tuning diverged at epoch " + std::to_string(epoch) + " (non-finite loss)",
                                    epoch);
            const auto grads = backward(work, trace, loss.grad);
            auto blocks = parameter_blocks(work);
            std::vector<std::span<const float>> gspans(grads.begin(), grads.end());
            adam_step<float>(blocks, gspans, adam);
            loss_sum += loss.value * static_cast<double>(count);
        }
        const double mean = loss_sum / static_cast<double>(n);
        if (!std::isfinite(mean))
            throw DivergedError("fine-tuning diverged at epoch " + std::to_string(epoch) + " (non-finite loss)", epoch);
        if (history) history->push_back(mean);
        if (keep_best) {
            const double f1 = validation_f1(work, stats, cfg.mode, split.validation, *cfg.k);
            if (f1 > best_f1) {
                best_f1 = f1;
                best = work;
            }
        }
    }
    return keep_best ? best : work;
}

void save_quantized(const QuantizedModel& qm, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.magic("CAEQ");
    w.u32(kCaeqVersion);
    w.text(qm.config.to_text());
    auto params = [&](const QuantParams& p) {
        w.f64(p.scale);
        w.i32(p.zero_point);
    };
    params(qm.input_params);
    for (const QLayer& layer : qm.layers) {
        const auto* c = std::get_if<QConvLayer>(&layer);
        if (!c) continue;
        params(c->weight_params);
        w.array<std::int8_t>(c->weights);
        w.array<std::int32_t>(c->bias);
        params(c->output_params);
        w.f64(c->requant);
    }
    w.write_file(path);
}

QuantizedModel load_quantized(const std::filesystem::path& path) {
    auto r = detail::ByteReader::from_file(path);
    r.expect_magic("CAEQ");
    const std::uint32_t version = r.u32();
    if (version != kCaeqVersion) r.fail("unsupported CAEQ version " + std::to_string(version));
    CaeConfig cfg;
    try {
        cfg = CaeConfig::from_text(r.text());
    } catch (const ConfigError& e) {
        r.fail(std::string("bad config block: ") + e.what());
    }
    // The layer skeleton comes from the config.
    CaeConfig skeleton_cfg = cfg;
    skeleton_cfg.batchnorm = false;
    const CaeModelF skeleton = build_model<float>(skeleton_cfg, 0);

    auto params = [&](QuantScheme scheme) {
        QuantParams p;
        p.scale = r.f64();
        p.zero_point = r.i32();
        p.scheme = scheme;
        try {
            p.validate();
        } catch (const ArgError& e) {
            r.fail(e.what());
        }
        return p;
    };

    QuantizedModel qm;
    qm.config = skeleton_cfg;
    qm.input_params = params(QuantScheme::AsymmetricActivation);
    QuantParams cur = qm.input_params;
    for (std::size_t i = 0; i < skeleton.layers.size(); ++i) {
        if (const auto* c = std::get_if<ConvLayer<float>>(&skeleton.layers[i])) {
            QConvLayer q;
            q.in_channels = c->params.in_channels();
            q.out_channels = c->params.out_channels();
            q.kernel = c->params.kernel();
            q.stride = c->params.stride;
            q.weight_params = params(QuantScheme::SymmetricWeight);
            q.weights.resize(c->params.weights.size());
            r.array<std::int8_t>(q.weights);
            q.bias.resize(q.out_channels);
            r.array<std::int32_t>(q.bias);
            q.input_params = cur;
            q.output_params = params(QuantScheme::AsymmetricActivation);
            q.requant = r.f64();
            if (!(q.requant > 0.0) || !std::isfinite(q.requant)) r.fail("invalid requant multiplier");
            q.relu = i + 1 < skeleton.layers.size() && std::holds_alternative<ReluLayer>(skeleton.layers[i + 1]);
            cur = q.output_params;
            qm.layers.emplace_back(std::move(q));
        } else if (const auto* u = std::get_if<UpsampleLayer>(&skeleton.layers[i])) {
            qm.layers.emplace_back(QUpsampleLayer{u->factor});
        }
    }
    if (r.remaining() != 0) r.fail("trailing bytes after the last layer");
    return qm;
}

std::string to_string(CalibrationMode m) { return m == CalibrationMode::MinMax ? "minmax" : "percentile99.9"; }

CalibrationMode parse_calibration_mode(const std::string& s) {
    if (s == "minmax") return CalibrationMode::MinMax;
    if (s == "percentile99.9" || s == "percentile") return CalibrationMode::Percentile999;
    throw ConfigError("unknown calibration mode '" + s + "' (expected minmax or percentile99.9)");
}

template std::vector<std::int8_t> quantize_tensor<float>(std::span<const float>, const QuantParams&);
template std::vector<std::int8_t> quantize_tensor<double>(std::span<const double>, const QuantParams&);
template QuantParams weight_quant_params<float>(std::span<const float>);
template QuantParams weight_quant_params<double>(std::span<const double>);

} // namespace hsicae
