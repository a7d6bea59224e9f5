#pragma once

// The convolutional autoencoder: configuration, topology, forward/backward,
// training with Adam, and the CAEW weight format.

#include <hsicae/datacube.hpp>
#include <hsicae/kernels.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace hsicae {

enum class OutputActivation { ReLU, Linear };

struct CaeConfig {
    std::size_t input_size = 144;
    std::vector<std::size_t> encoder_filters{128, 256, 512};
    std::vector<std::size_t> decoder_filters{256, 128};
    std::size_t kernel = 3;
    std::size_t stride2_layer_index = 1; // which encoder conv downsamples
    OutputActivation output_activation = OutputActivation::ReLU;
    bool batchnorm = true;
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;

    // Encoder filters with the mirrored decoder.
    static CaeConfig with_filters(std::vector<std::size_t> encoder, std::size_t input_size);

    void validate() const; // throws ConfigError
    std::string to_text() const;
    static CaeConfig from_text(const std::string& text);
    bool operator==(const CaeConfig&) const = default;
};

template <typename T>
struct ConvLayer {
    ConvParams<T> params;
};
template <typename T>
struct BatchNormLayer {
    BatchNormParams<T> params;
};
struct ReluLayer {};
struct UpsampleLayer {
    std::size_t factor = 2;
};

template <typename T>
using Layer = std::variant<ConvLayer<T>, BatchNormLayer<T>, ReluLayer, UpsampleLayer>;

template <typename T>
struct CaeModel {
    CaeConfig config;
    std::vector<Layer<T>> layers;

    std::size_t conv_count() const;
    // Layer indices after which an activation site sits: the end of every
    // conv block (conv, optional BN, optional activation). Site 0 is the
    // model input and is not listed here.
    std::vector<std::size_t> site_layer_ends() const;
    std::size_t site_count() const { return site_layer_ends().size() + 1; }

    template <typename U>
    CaeModel<U> cast() const;
};

using CaeModelF = CaeModel<float>;
using CaeModelD = CaeModel<double>;

template <typename T>
CaeModel<T> build_model(const CaeConfig& cfg, std::uint64_t seed);

template <typename T>
std::size_t param_count(const CaeModel<T>& model);

// Trainable parameter blocks in topology order: conv weights, conv bias,
// BN gamma, BN beta.
template <typename T>
std::vector<std::span<T>> parameter_blocks(CaeModel<T>& model);

// Optional interception points used by fake-quant training and calibration.
template <typename T>
struct ForwardHooks {
    // Replaces the weights of conv number `conv_index` for this pass.
    std::function<ConvParams<T>(std::size_t conv_index, const ConvParams<T>&)> conv_params;
    // Sees (and may rewrite) the tensor at activation site `site`. A returned
    // mask gates the gradient in backward (1 = pass).
    std::function<std::optional<std::vector<std::uint8_t>>(std::size_t site, Tensor4<T>&)> activation;
};

template <typename T>
struct ForwardTrace {
    Mode mode = Mode::Infer;
    std::vector<Tensor4<T>> inputs;             // input of each layer
    std::vector<ConvParams<T>> conv_used;       // params each conv actually used
    std::vector<BatchNormCache<T>> bn_caches;   // per layer (empty when unused)
    std::vector<std::optional<std::vector<std::uint8_t>>> site_masks; // per layer end
};

template <typename T>
Tensor4<T> forward(CaeModel<T>& model, const Tensor4<T>& batch, Mode mode, ForwardTrace<T>* trace = nullptr,
                   const ForwardHooks<T>* hooks = nullptr);

// Infer-mode forward on an immutable model.
template <typename T>
Tensor4<T> infer(const CaeModel<T>& model, const Tensor4<T>& batch, const ForwardHooks<T>* hooks = nullptr);

// Gradients for every block of parameter_blocks(), given d(loss)/d(output).
template <typename T>
std::vector<std::vector<T>> backward(const CaeModel<T>& model, const ForwardTrace<T>& trace,
                                     const Tensor4<T>& grad_output);

struct TrainConfig {
    int epochs = 2000;
    double lr = 1e-3;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    int checkpoint_every = 0; // 0 disables

    void validate() const; // throws ConfigError
};

// Everything needed to continue training bit-identically.
struct TrainState {
    int next_epoch = 0;
    AdamState adam;
    std::vector<double> history;
};

struct TrainCallbacks {
    std::function<void(const CaeModelF&, const TrainState&)> checkpoint;
    std::function<void(int epoch, double loss)> epoch_end;
};

// Minimizes the mean squared reconstruction error of the train patches with
// Adam. Returns the per-epoch mean loss. Resumes from `resume` when given.
std::vector<double> train(CaeModelF& model, const std::vector<Patch>& train_set, const TrainConfig& tc,
                          const TrainCallbacks& callbacks = {}, std::optional<TrainState> resume = std::nullopt);

// Stacks patches [first, first+count) into an (count, 1, S, S) tensor.
template <typename T>
Tensor4<T> patches_to_tensor(const std::vector<Patch>& patches, std::size_t first, std::size_t count);
template <typename T>
Tensor4<T> patch_to_tensor(const Patch& p);

void save_weights(const CaeModelF& model, const std::filesystem::path& path);
CaeModelF load_weights(const std::filesystem::path& path);
// Loads into an existing model; the stored topology must match.
void load_weights_into(CaeModelF& model, const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_weights(const CaeModelF& model);
CaeModelF deserialize_weights(std::vector<std::uint8_t> bytes, const std::string& origin);

void save_checkpoint(const std::filesystem::path& path, const CaeModelF& model, const TrainState& state);
std::pair<CaeModelF, TrainState> load_checkpoint(const std::filesystem::path& path);

std::string to_string(OutputActivation a);
OutputActivation parse_output_activation(const std::string& s);

} // namespace hsicae
