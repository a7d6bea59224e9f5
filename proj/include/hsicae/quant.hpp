#pragma once

// Uniform 8-bit affine quantization of a trained autoencoder: calibration,
// batchnorm folding, per-tensor weight/bias/activation quantization, a
// pure-integer executor, and fake-quant fine-tuning.

#include <hsicae/model.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <variant>
#include <vector>

namespace hsicae {

enum class QuantScheme { SymmetricWeight, AsymmetricActivation };

struct QuantParams {
    double scale = 1.0;
    std::int32_t zero_point = 0;
    QuantScheme scheme = QuantScheme::AsymmetricActivation;

    std::int32_t qmin() const { return scheme == QuantScheme::SymmetricWeight ? -127 : -128; }
    std::int32_t qmax() const { return 127; }
    void validate() const; // throws ArgError
    bool operator==(const QuantParams&) const = default;
};

// Round half away from zero; the single rounding rule of the integer path.
inline double round_half_away(double v) { return std::round(v); }

std::int8_t quantize_value(double x, const QuantParams& p);

// Rescales an int32-domain accumulator (already centered on the input zero
// point, bias included) to the output grid, saturating to int8.
inline std::int8_t requantize(std::int64_t acc, double multiplier, std::int32_t zp_out) {
    double r = round_half_away(static_cast<double>(acc) * multiplier) + zp_out;
    r = std::min(127.0, std::max(-128.0, r));
    return static_cast<std::int8_t>(r);
}
inline double dequantize_value(std::int8_t q, const QuantParams& p) {
    return static_cast<double>(static_cast<std::int32_t>(q) - p.zero_point) * p.scale;
}

template <typename T>
std::vector<std::int8_t> quantize_tensor(std::span<const T> x, const QuantParams& p);
std::vector<double> dequantize_tensor(std::span<const std::int8_t> q, const QuantParams& p);

// Per-tensor symmetric weight parameters: scale = max|w| / 127.
template <typename T>
QuantParams weight_quant_params(std::span<const T> w);

// Asymmetric parameters covering [min(lo,0), max(hi,0)]. A degenerate
// range (lo == hi) takes scale 1 with a zero point that represents the
// constant exactly whenever that is possible.
QuantParams activation_quant_params(double lo, double hi);

// Bias quantized at scale s_in * s_w, saturated to int32.
std::int32_t quantize_bias(double b, double bias_scale);

// Inference-mode batchnorm absorbed into the preceding convolution.
CaeModelF fold_batchnorm(const CaeModelF& model);

inline constexpr std::size_t kHistogramBins = 2048;

struct SiteStats {
    double min = 0.0, max = 0.0;
    std::vector<std::uint64_t> histogram; // kHistogramBins over [min, max], optional
};

// One entry per activation site: the model input, then every conv block
// output in topology order.
struct CalibrationStats {
    std::vector<SiteStats> sites;
    std::size_t patches = 0;
};

enum class CalibrationMode { MinMax, Percentile999 };

// Runs the folded model in Infer mode over the patches and records per-site
// ranges (and histograms when `with_histogram`).
CalibrationStats calibrate(const CaeModelF& model, const std::vector<Patch>& patches, bool with_histogram = false);

// Per-site activation parameters derived from calibration statistics.
std::vector<QuantParams> site_quant_params(const CalibrationStats& stats, CalibrationMode mode);

struct QConvLayer {
    std::size_t in_channels = 0, out_channels = 0, kernel = 0, stride = 1;
    QuantParams weight_params;
    std::vector<std::int8_t> weights; // (out, in, k, k)
    std::vector<std::int32_t> bias;   // at input_params.scale * weight_params.scale
    QuantParams input_params;
    QuantParams output_params;
    double requant = 0.0; // s_in * s_w / s_out
    bool relu = true;
};

struct QUpsampleLayer {
    std::size_t factor = 2;
};

using QLayer = std::variant<QConvLayer, QUpsampleLayer>;

struct QuantizedModel {
    CaeConfig config;
    QuantParams input_params;
    std::vector<QLayer> layers;
};

QuantizedModel quantize_model(const CaeModelF& model, const CalibrationStats& stats,
                              CalibrationMode mode = CalibrationMode::MinMax);

// Integer tensor in NCHW with its quantization parameters.
struct QTensor {
    Shape4 shape;
    std::vector<std::int8_t> data;
    QuantParams params;
};

enum class QKernel { Auto, Scalar };

// Integer inference: quantize the input, then int8 x int8 -> int32
// convolutions, int32 bias, requantization, integer ReLU, and a final
// dequantization. `intermediates` receives every layer output when given.
Tensor4f qforward(const QuantizedModel& qm, const Tensor4f& input, std::vector<QTensor>* intermediates = nullptr,
                  QKernel kernel = QKernel::Auto);
QTensor qforward_int(const QuantizedModel& qm, const Tensor4f& input, std::vector<QTensor>* intermediates = nullptr,
                     QKernel kernel = QKernel::Auto);

// Float simulation of the integer executor, built independently from the
// folded float model and the activation parameters: weights and biases are
// quantized on the fly, activations are carried in units of their
// quantization step and the convolutions run through the double-precision
// float kernel. Defined with the same rounding as qforward, so the two agree
// bit for bit.
QTensor fake_quant_forward(const CaeModelF& folded, const std::vector<QuantParams>& site_params,
                           const Tensor4f& input, std::vector<QTensor>* intermediates = nullptr);

// Whether the integer executor's int8 kernel uses VNNI instructions.
bool qkernel_has_vnni();

struct FinetuneConfig {
    int epochs = 50;
    double lr = 1e-4;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    CalibrationMode mode = CalibrationMode::MinMax;
    // Reconstruction-error weight used to score validation F1; when set and
    // the validation set carries both labels, the better of the input and the
    // fine-tuned model (by F1 after re-quantization) is returned.
    std::optional<double> k;
};

// Fake-quant training of the folded model: weights and activations pass
// through quantize/dequantize in the forward pass, gradients go straight
// through inside the representable range. Returns a BN-free float model to
// re-quantize; epochs == 0 returns the model unchanged.
CaeModelF finetune_quantized(const CaeModelF& model, const CalibrationStats& stats, const DatasetSplit& split,
                             const FinetuneConfig& cfg, std::vector<double>* history = nullptr);

void save_quantized(const QuantizedModel& qm, const std::filesystem::path& path);
QuantizedModel load_quantized(const std::filesystem::path& path);

std::string to_string(CalibrationMode m);
CalibrationMode parse_calibration_mode(const std::string& s);

namespace detail {
// Int8 convolution of one sample; exposed for kernel tests.
void qconv_sample(const QConvLayer& layer, const std::int8_t* in, std::size_t h, std::size_t w, std::int8_t* out,
                  QKernel kernel);
} // namespace detail

} // namespace hsicae
