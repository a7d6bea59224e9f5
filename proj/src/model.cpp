#include <hsicae/model.hpp>
#include <hsicae/rng.hpp>

#include "binio.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace hsicae {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::size_t> parse_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(tok, &used);
            if (v < 0) throw ConfigError("negative filter count");
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            throw ConfigError("bad integer list '" + s + "'");
        }
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string to_string(OutputActivation a) { return a == OutputActivation::ReLU ? "relu" : "linear"; }

OutputActivation parse_output_activation(const std::string& s) {
    if (s == "relu") return OutputActivation::ReLU;
    if (s == "linear") return OutputActivation::Linear;
    throw ConfigError("unknown output activation '" + s + "'");
}

CaeConfig CaeConfig::with_filters(std::vector<std::size_t> encoder, std::size_t input_size) {
    CaeConfig c;
    c.input_size = input_size;
    c.encoder_filters = std::move(encoder);
    c.decoder_filters.clear();
    if (c.encoder_filters.size() == 3) c.decoder_filters = {c.encoder_filters[1], c.encoder_filters[0]};
    return c;
}

void CaeConfig::validate() const {
    if (encoder_filters.size() != 3) throw ConfigError("encoder needs exactly 3 filter widths");
    if (decoder_filters.size() != 2) throw ConfigError("decoder needs exactly 2 filter widths");
    for (std::size_t f : encoder_filters)
        if (f == 0) throw ConfigError("filter widths must be positive");
    if (decoder_filters[0] != encoder_filters[1] || decoder_filters[1] != encoder_filters[0])
        throw ConfigError("decoder filters must mirror the encoder: expected " + std::to_string(encoder_filters[1]) +
                          "," + std::to_string(encoder_filters[0]));
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel size must be odd");
    if (stride2_layer_index >= encoder_filters.size()) throw ConfigError("stride-2 layer must be an encoder conv");
    if (input_size < 2 || input_size % 2 != 0) throw ConfigError("input size must be even");
    if (!(bn_epsilon > 0.0)) throw ConfigError("batchnorm epsilon must be positive");
    if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("batchnorm momentum must be in [0,1]");
}

std::string CaeConfig::to_text() const {
    std::string s;
    s += "input_size=" + std::to_string(input_size) + "\n";
    s += "encoder_filters=" + join(encoder_filters) + "\n";
    s += "decoder_filters=" + join(decoder_filters) + "\n";
    s += "kernel=" + std::to_string(kernel) + "\n";
    s += "stride2_layer_index=" + std::to_string(stride2_layer_index) + "\n";
    s += "output_activation=" + to_string(output_activation) + "\n";
    s += std::string("batchnorm=") + (batchnorm ? "1" : "0") + "\n";
    s += "bn_epsilon=" + format_double(bn_epsilon) + "\n";
    s += "bn_momentum=" + format_double(bn_momentum) + "\n";
    return s;
}

CaeConfig CaeConfig::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed model config line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError(std::string("model config lacks '") + key + "'");
        return it->second;
    };
    CaeConfig c;
    try {
        c.input_size = std::stoull(get("input_size"));
        c.encoder_filters = parse_list(get("encoder_filters"));
        c.decoder_filters = parse_list(get("decoder_filters"));
        c.kernel = std::stoull(get("kernel"));
        c.stride2_layer_index = std::stoull(get("stride2_layer_index"));
        c.output_activation = parse_output_activation(get("output_activation"));
        c.batchnorm = get("batchnorm") == "1";
        c.bn_epsilon = std::stod(get("bn_epsilon"));
        c.bn_momentum = std::stod(get("bn_momentum"));
    } catch (const std::logic_error&) {
        throw FormatError("unparseable model config");
    } catch (const ConfigError& e) {
        throw FormatError(e.what());
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("stored model config invalid: ") + e.what());
    }
    return c;
}

template <typename T>
std::size_t CaeModel<T>::conv_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += std::holds_alternative<ConvLayer<T>>(l);
    return n;
}

template <typename T>
std::vector<std::size_t> CaeModel<T>::site_layer_ends() const {
    std::vector<std::size_t> ends;
    bool in_block = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (std::holds_alternative<ConvLayer<T>>(layers[i])) in_block = true;
        if (std::holds_alternative<UpsampleLayer>(layers[i])) continue;
        const bool last = i + 1 == layers.size();
        const bool next_starts = !last && (std::holds_alternative<ConvLayer<T>>(layers[i + 1]) ||
                                           std::holds_alternative<UpsampleLayer>(layers[i + 1]));
        if (in_block && (last || next_starts)) {
            ends.push_back(i);
            in_block = false;
        }
    }
    return ends;
}

template <typename T>
template <typename U>
CaeModel<U> CaeModel<T>::cast() const {
    auto vec = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    CaeModel<U> out;
    out.config = config;
    for (const auto& l : layers) {
        std::visit(overloaded{
                       [&](const ConvLayer<T>& c) {
                           out.layers.push_back(ConvLayer<U>{ConvParams<U>{c.params.weights.template cast<U>(),
                                                                           vec(c.params.bias), c.params.stride}});
                       },
                       [&](const BatchNormLayer<T>& b) {
                           BatchNormParams<U> p;
                           p.gamma = vec(b.params.gamma);
                           p.beta = vec(b.params.beta);
                           p.running_mean = vec(b.params.running_mean);
                           p.running_var = vec(b.params.running_var);
                           p.epsilon = b.params.epsilon;
                           p.momentum = b.params.momentum;
                           out.layers.push_back(BatchNormLayer<U>{std::move(p)});
                       },
                       [&](const ReluLayer&) { out.layers.push_back(ReluLayer{}); },
                       [&](const UpsampleLayer& u) { out.layers.push_back(u); },
                   },
                   l);
    }
    return out;
}

template <typename T>
CaeModel<T> build_model(const CaeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    CaeModel<T> m;
    m.config = cfg;
    const auto& e = cfg.encoder_filters;
    const std::size_t k = cfg.kernel;

    auto conv = [&](std::size_t in, std::size_t out, std::size_t stride) {
        ConvParams<T> p{Tensor4<T>(out, in, k, k), std::vector<T>(out, T{0}), stride};
        const double limit = std::sqrt(6.0 / static_cast<double>(in * k * k));
        for (auto& w : p.weights.vec()) w = static_cast<T>(rng.uniform(-limit, limit));
        m.layers.push_back(ConvLayer<T>{std::move(p)});
    };
    auto block = [&](std::size_t in, std::size_t out, std::size_t stride) {
        conv(in, out, stride);
        if (cfg.batchnorm) {
            auto bn = BatchNormParams<T>::identity(out);
            bn.epsilon = cfg.bn_epsilon;
            bn.momentum = cfg.bn_momentum;
            m.layers.push_back(BatchNormLayer<T>{std::move(bn)});
        }
        m.layers.push_back(ReluLayer{});
    };

    std::size_t in = 1;
    for (std::size_t i = 0; i < e.size(); ++i) {
        block(in, e[i], i == cfg.stride2_layer_index ? 2 : 1);
        in = e[i];
    }
    for (std::size_t f : cfg.decoder_filters) {
        block(in, f, 1);
        in = f;
    }
    m.layers.push_back(UpsampleLayer{2});
    conv(in, 1, 1);
    if (cfg.output_activation == OutputActivation::ReLU) m.layers.push_back(ReluLayer{});
    return m;
}

template <typename T>
std::size_t param_count(const CaeModel<T>& model) {
    std::size_t n = 0;
    for (const auto& l : model.layers) {
        if (const auto* c = std::get_if<ConvLayer<T>>(&l)) n += c->params.weights.size() + c->params.bias.size();
        if (const auto* b = std::get_if<BatchNormLayer<T>>(&l)) n += b->params.gamma.size() + b->params.beta.size();
    }
    return n;
}

template <typename T>
std::vector<std::span<T>> parameter_blocks(CaeModel<T>& model) {
    std::vector<std::span<T>> blocks;
    for (auto& l : model.layers) {
        if (auto* c = std::get_if<ConvLayer<T>>(&l)) {
            blocks.emplace_back(c->params.weights.vec());
            blocks.emplace_back(c->params.bias);
        }
        if (auto* b = std::get_if<BatchNormLayer<T>>(&l)) {
            blocks.emplace_back(b->params.gamma);
            blocks.emplace_back(b->params.beta);
        }
    }
    return blocks;
}

namespace {

template <typename T>
Tensor4<T> forward_impl(const CaeModel<T>& model, CaeModel<T>* mutable_model, const Tensor4<T>& batch, Mode mode,
                        ForwardTrace<T>* trace, const ForwardHooks<T>* hooks) {
    const std::size_t s = model.config.input_size;
    if (batch.c() != 1 || batch.h() != s || batch.w() != s)
        throw ShapeError("model expects (N,1," + std::to_string(s) + "," + std::to_string(s) + ") input, got " +
                         batch.shape().str());
    if (mode == Mode::Train && !mutable_model) throw ArgError("Train-mode forward needs a mutable model");

    const auto ends = model.site_layer_ends();
    std::vector<std::size_t> site_of(model.layers.size(), 0);
    for (std::size_t i = 0; i < ends.size(); ++i) site_of[ends[i]] = i + 1;

    if (trace) {
        trace->mode = mode;
        trace->inputs.clear();
        trace->conv_used.clear();
        trace->bn_caches.assign(model.layers.size(), {});
        trace->site_masks.assign(model.layers.size(), std::nullopt);
    }

    Tensor4<T> cur = batch;
    if (hooks && hooks->activation) hooks->activation(0, cur);

    std::size_t conv_index = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (trace) trace->inputs.push_back(cur);
        std::visit(overloaded{
                       [&](const ConvLayer<T>& c) {
                           if (hooks && hooks->conv_params) {
                               ConvParams<T> p = hooks->conv_params(conv_index, c.params);
                               cur = conv2d_forward(cur, p);
                               if (trace) trace->conv_used.push_back(std::move(p));
                           } else {
                               cur = conv2d_forward(cur, c.params);
                               if (trace) trace->conv_used.push_back(c.params);
                           }
                           ++conv_index;
                       },
                       [&](const BatchNormLayer<T>& b) {
                           if (mode == Mode::Infer) {
                               cur = batchnorm_infer(cur, b.params);
                           } else {
                               auto& mp = std::get<BatchNormLayer<T>>(mutable_model->layers[i]).params;
                               cur = batchnorm_forward(cur, mp, Mode::Train, trace ? &trace->bn_caches[i] : nullptr);
                           }
                       },
                       [&](const ReluLayer&) { cur = relu(cur); },
                       [&](const UpsampleLayer& u) { cur = upsample2d_nearest(cur, u.factor); },
                   },
                   model.layers[i]);
        if (site_of[i] && hooks && hooks->activation) {
            auto mask = hooks->activation(site_of[i], cur);
            if (trace) trace->site_masks[i] = std::move(mask);
        }
    }
    return cur;
}

} // namespace

template <typename T>
Tensor4<T> forward(CaeModel<T>& model, const Tensor4<T>& batch, Mode mode, ForwardTrace<T>* trace,
                   const ForwardHooks<T>* hooks) {
    return forward_impl(model, &model, batch, mode, trace, hooks);
}

template <typename T>
Tensor4<T> infer(const CaeModel<T>& model, const Tensor4<T>& batch, const ForwardHooks<T>* hooks) {
    return forward_impl<T>(model, nullptr, batch, Mode::Infer, nullptr, hooks);
}

template <typename T>
std::vector<std::vector<T>> backward(const CaeModel<T>& model, const ForwardTrace<T>& trace,
                                     const Tensor4<T>& grad_output) {
    if (trace.inputs.size() != model.layers.size()) throw ArgError("backward needs a full forward trace");

    // Block index of each layer's first parameter block.
    std::vector<std::size_t> first_block(model.layers.size(), 0);
    std::vector<std::size_t> conv_ordinal(model.layers.size(), 0);
    std::size_t nblocks = 0, nconv = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        first_block[i] = nblocks;
        if (std::holds_alternative<ConvLayer<T>>(model.layers[i])) {
            nblocks += 2;
            conv_ordinal[i] = nconv++;
        } else if (std::holds_alternative<BatchNormLayer<T>>(model.layers[i])) {
            nblocks += 2;
        }
    }
    std::vector<std::vector<T>> grads(nblocks);

    Tensor4<T> g = grad_output;
    for (std::size_t ii = model.layers.size(); ii-- > 0;) {
        if (const auto& mask = trace.site_masks[ii]) {
            for (std::size_t j = 0; j < g.size(); ++j)
                if (!(*mask)[j]) g[j] = T{0};
        }
        const Tensor4<T>& x = trace.inputs[ii];
        std::visit(overloaded{
                       [&](const ConvLayer<T>&) {
                           auto cg = conv2d_backward(x, trace.conv_used[conv_ordinal[ii]], g);
                           grads[first_block[ii]] = std::move(cg.grad_w.vec());
                           grads[first_block[ii] + 1] = std::move(cg.grad_b);
                           g = std::move(cg.grad_x);
                       },
                       [&](const BatchNormLayer<T>& b) {
                           auto bg = trace.mode == Mode::Train ? batchnorm_backward(trace.bn_caches[ii], b.params, g)
                                                               : batchnorm_backward_infer(x, b.params, g);
                           grads[first_block[ii]] = std::move(bg.grad_gamma);
                           grads[first_block[ii] + 1] = std::move(bg.grad_beta);
                           g = std::move(bg.grad_x);
                       },
                       [&](const ReluLayer&) { g = relu_backward(x, g); },
                       [&](const UpsampleLayer& u) { g = upsample2d_nearest_backward(g, u.factor); },
                   },
                   model.layers[ii]);
    }
    return grads;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

template <typename T>
Tensor4<T> patches_to_tensor(const std::vector<Patch>& patches, std::size_t first, std::size_t count) {
    if (first + count > patches.size()) throw ArgError("patch range out of bounds");
    if (count == 0) throw ArgError("empty patch range");
    const std::size_t s = patches[first].size;
    Tensor4<T> t(count, 1, s, s);
    for (std::size_t i = 0; i < count; ++i) {
        const Patch& p = patches[first + i];
        if (p.size != s) throw ShapeError("mixed patch sizes in one batch");
        for (std::size_t j = 0; j < s * s; ++j) t[i * s * s + j] = static_cast<T>(p.pixels[j]);
    }
    return t;
}

template <typename T>
Tensor4<T> patch_to_tensor(const Patch& p) {
    Tensor4<T> t(1, 1, p.size, p.size);
    for (std::size_t j = 0; j < p.pixels.size(); ++j) t[j] = static_cast<T>(p.pixels[j]);
    return t;
}

std::vector<double> train(CaeModelF& model, const std::vector<Patch>& train_set, const TrainConfig& tc,
                          const TrainCallbacks& callbacks, std::optional<TrainState> resume) {
    tc.validate();
    if (train_set.empty()) throw ArgError("train set is empty");

    TrainState state;
    if (resume) {
        state = std::move(*resume);
    } else {
        state.adam.lr = tc.lr;
    }
    const std::size_t n = train_set.size();
    for (int epoch = state.next_epoch; epoch < tc.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(mix_seed(tc.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        for (std::size_t b0 = 0; b0 < n; b0 += tc.batch_size) {
            const std::size_t count = std::min(tc.batch_size, n - b0);
            std::vector<Patch> batch_patches;
            batch_patches.reserve(count);
            for (std::size_t i = 0; i < count; ++i) batch_patches.push_back(train_set[order[b0 + i]]);
            const Tensor4f x = patches_to_tensor<float>(batch_patches, 0, count);

            ForwardTrace<float> trace;
            const Tensor4f y = forward(model, x, Mode::Train, &trace);
            const auto loss = mse_loss(x, y);
            if (!std::isfinite(loss.value))
                throw DivergedError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)", epoch);
            const auto grads = backward(model, trace, loss.grad);

            auto blocks = parameter_blocks(model);
            std::vector<std::span<const float>> gspans(grads.begin(), grads.end());
            adam_step<float>(blocks, gspans, state.adam);
            loss_sum += loss.value * static_cast<double>(count);
        }
        const double mean = loss_sum / static_cast<double>(n);
        if (!std::isfinite(mean))
            throw DivergedError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)", epoch);
        state.history.push_back(mean);
        state.next_epoch = epoch + 1;
        if (callbacks.epoch_end) callbacks.epoch_end(epoch, mean);
        if (tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 && callbacks.checkpoint)
            callbacks.checkpoint(model, state);
    }
    return state.history;
}

// CAEW: magic, version, config text, then per layer in topology order
// conv weights + bias, or BN gamma, beta, running mean, running var.
namespace {
constexpr std::uint32_t kWeightsVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;
} // namespace

std::vector<std::uint8_t> serialize_weights(const CaeModelF& model) {
    detail::ByteWriter w;
    w.magic("CAEW");
    w.u32(kWeightsVersion);
    w.text(model.config.to_text());
    for (const auto& l : model.layers) {
        if (const auto* c = std::get_if<ConvLayer<float>>(&l)) {
            w.array<float>(c->params.weights.vec());
            w.array<float>(c->params.bias);
        } else if (const auto* b = std::get_if<BatchNormLayer<float>>(&l)) {
            w.array<float>(b->params.gamma);
            w.array<float>(b->params.beta);
            w.array<float>(b->params.running_mean);
            w.array<float>(b->params.running_var);
        }
    }
    return w.buffer();
}

CaeModelF deserialize_weights(std::vector<std::uint8_t> bytes, const std::string& origin) {
    detail::ByteReader r(std::move(bytes), origin);
    r.expect_magic("CAEW");
    const std::uint32_t version = r.u32();
    if (version != kWeightsVersion) r.fail("unsupported CAEW version " + std::to_string(version));
    const CaeConfig cfg = CaeConfig::from_text(r.text(1 << 16));
    CaeModelF m = build_model<float>(cfg, 0);
    for (auto& l : m.layers) {
        if (auto* c = std::get_if<ConvLayer<float>>(&l)) {
            r.array<float>(c->params.weights.vec());
            r.array<float>(c->params.bias);
        } else if (auto* b = std::get_if<BatchNormLayer<float>>(&l)) {
            r.array<float>(b->params.gamma);
            r.array<float>(b->params.beta);
            r.array<float>(b->params.running_mean);
            r.array<float>(b->params.running_var);
            for (float v : b->params.running_var)
                if (!(v >= 0.0f)) r.fail("negative running variance");
        }
    }
    if (r.remaining() != 0) r.fail("trailing bytes after weights");
    return m;
}

void save_weights(const CaeModelF& model, const std::filesystem::path& path) {
    detail::ByteWriter w;
    const auto bytes = serialize_weights(model);
    w.bytes(bytes.data(), bytes.size());
    w.write_file(path);
}

CaeModelF load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_weights(std::move(data), path.string());
}

void load_weights_into(CaeModelF& model, const std::filesystem::path& path) {
    CaeModelF loaded = load_weights(path);
    if (!(loaded.config == model.config)) throw FormatError("'" + path.string() + "' holds a different topology");
    model = std::move(loaded);
}

void save_checkpoint(const std::filesystem::path& path, const CaeModelF& model, const TrainState& state) {
    detail::ByteWriter w;
    w.magic("CAEC");
    w.u32(kCheckpointVersion);
    const auto weights = serialize_weights(model);
    w.u64(weights.size());
    w.bytes(weights.data(), weights.size());
    w.u32(static_cast<std::uint32_t>(state.next_epoch));
    w.u64(state.history.size());
    w.array<double>(state.history);
    w.f64(state.adam.lr);
    w.f64(state.adam.beta1);
    w.f64(state.adam.beta2);
    w.f64(state.adam.eps);
    w.scalar<std::int64_t>(state.adam.t);
    w.u32(static_cast<std::uint32_t>(state.adam.m.size()));
    for (std::size_t b = 0; b < state.adam.m.size(); ++b) {
        w.u64(state.adam.m[b].size());
        w.array<double>(state.adam.m[b]);
        w.array<double>(state.adam.v[b]);
    }
    w.write_file(path);
}

std::pair<CaeModelF, TrainState> load_checkpoint(const std::filesystem::path& path) {
    auto r = detail::ByteReader::from_file(path);
    r.expect_magic("CAEC");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) r.fail("unsupported checkpoint version");
    const std::uint64_t wsize = r.u64();
    r.need(wsize);
    std::vector<std::uint8_t> wbytes(wsize);
    r.array<std::uint8_t>(wbytes);
    CaeModelF model = deserialize_weights(std::move(wbytes), path.string());
    TrainState st;
    st.next_epoch = static_cast<int>(r.u32());
    const std::uint64_t hn = r.u64();
    r.need(hn * 8);
    st.history.resize(hn);
    r.array<double>(st.history);
    st.adam.lr = r.f64();
    st.adam.beta1 = r.f64();
    st.adam.beta2 = r.f64();
    st.adam.eps = r.f64();
    st.adam.t = r.scalar<std::int64_t>();
    const std::uint32_t nb = r.u32();
    st.adam.m.resize(nb);
    st.adam.v.resize(nb);
    for (std::uint32_t b = 0; b < nb; ++b) {
        const std::uint64_t n = r.u64();
        r.need(n * 16);
        st.adam.m[b].resize(n);
        st.adam.v[b].resize(n);
        r.array<double>(st.adam.m[b]);
        r.array<double>(st.adam.v[b]);
    }
    if (r.remaining() != 0) r.fail("trailing bytes in checkpoint");
    return {std::move(model), std::move(st)};
}

#define HSICAE_INSTANTIATE(T)                                                                                  \
    template struct CaeModel<T>;                                                                               \
    template CaeModel<T> build_model<T>(const CaeConfig&, std::uint64_t);                                      \
    template std::size_t param_count(const CaeModel<T>&);                                                      \
    template std::vector<std::span<T>> parameter_blocks(CaeModel<T>&);                                         \
    template Tensor4<T> forward(CaeModel<T>&, const Tensor4<T>&, Mode, ForwardTrace<T>*, const ForwardHooks<T>*); \
    template Tensor4<T> infer(const CaeModel<T>&, const Tensor4<T>&, const ForwardHooks<T>*);                  \
    template std::vector<std::vector<T>> backward(const CaeModel<T>&, const ForwardTrace<T>&, const Tensor4<T>&); \
    template Tensor4<T> patches_to_tensor<T>(const std::vector<Patch>&, std::size_t, std::size_t);             \
    template Tensor4<T> patch_to_tensor<T>(const Patch&);

HSICAE_INSTANTIATE(float)
HSICAE_INSTANTIATE(double)
template CaeModel<double> CaeModel<float>::cast<double>() const;
template CaeModel<float> CaeModel<double>::cast<float>() const;
template CaeModel<float> CaeModel<float>::cast<float>() const;

#undef HSICAE_INSTANTIATE

} // namespace hsicae
