#pragma once

// Dense kernels with analytic gradients. Everything here is single-threaded
// with a fixed summation order, so identical inputs give identical bits.

#include <hsicae/tensor.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace hsicae {

enum class Mode { Train, Infer };

// "Same" padding geometry for one spatial axis. The output extent is
// ceil(in / stride); when the total padding is odd the extra row/column goes
// to the bottom/right.
struct AxisGeometry {
    std::size_t in = 0, out = 0, kernel = 0, stride = 1;
    std::ptrdiff_t pad_before = 0;
};
AxisGeometry same_padding(std::size_t in, std::size_t kernel, std::size_t stride);

template <typename T>
struct ConvParams {
    Tensor4<T> weights; // (outC, inC, k, k)
    std::vector<T> bias;
    std::size_t stride = 1;

    std::size_t out_channels() const { return weights.n(); }
    std::size_t in_channels() const { return weights.c(); }
    std::size_t kernel() const { return weights.h(); }
};

template <typename T>
struct ConvGrads {
    Tensor4<T> grad_x;
    Tensor4<T> grad_w;
    std::vector<T> grad_b;
};

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> upsample2d_nearest(const Tensor4<T>& x, std::size_t factor);

// Sums the gradient over each factor x factor block.
template <typename T>
Tensor4<T> upsample2d_nearest_backward(const Tensor4<T>& grad_out, std::size_t factor);

template <typename T>
Tensor4<T> avg_pool2d(const Tensor4<T>& x, std::size_t factor);

template <typename T>
struct BatchNormParams {
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;
    double epsilon = 1e-5;
    double momentum = 0.1;

    static BatchNormParams identity(std::size_t channels) {
        BatchNormParams p;
        p.gamma.assign(channels, T{1});
        p.beta.assign(channels, T{0});
        p.running_mean.assign(channels, T{0});
        p.running_var.assign(channels, T{1});
        return p;
    }
    std::size_t channels() const { return gamma.size(); }
};

// Saved by a Train-mode forward for the backward pass.
template <typename T>
struct BatchNormCache {
    Tensor4<T> x_hat;
    std::vector<double> inv_std;
};

// Train mode normalizes with batch statistics (biased variance) and blends
// them into the running statistics with `momentum`; Infer mode uses the
// running statistics. `cache` may be null.
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BatchNormParams<T>& p, Mode mode,
                             BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
    Tensor4<T> grad_x;
    std::vector<T> grad_gamma, grad_beta;
};

// Infer-mode normalization with the running statistics.
template <typename T>
Tensor4<T> batchnorm_infer(const Tensor4<T>& x, const BatchNormParams<T>& p);

// Gradient of the Train-mode forward that filled `cache`.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormParams<T>& p,
                                     const Tensor4<T>& grad_out);

// Gradient of the Infer-mode forward (a per-channel affine map).
template <typename T>
BatchNormGrads<T> batchnorm_backward_infer(const Tensor4<T>& x, const BatchNormParams<T>& p,
                                           const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x);

// Passes the gradient where x > 0; zero at x == 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out);

template <typename T>
struct LossResult {
    double value = 0.0;
    Tensor4<T> grad; // with respect to the prediction
};

// Mean squared error between target x and prediction y.
template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& x, const Tensor4<T>& y);

// Mean of (log1p(x) - log1p(max(y, 0)))^2. Negative predictions are clamped
// to zero and receive no gradient.
template <typename T>
LossResult<T> msle_loss(const Tensor4<T>& x, const Tensor4<T>& y);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m, v;
};

// One Adam update with bias correction over a list of parameter blocks.
// Moments are allocated on the first call.
template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads, AdamState& state);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // both gradients below the absolute floor
    double tolerance = 0.0;
    bool passed = false;
};

struct GradCheckOptions {
    double tolerance = 1e-4;
    double rel_step = 1e-4;   // h = rel_step * max(|theta|, min_scale)
    double min_scale = 0.1;
    double abs_floor = 1e-10;
    std::size_t max_checks = 0; // 0 = every parameter, otherwise a seeded sample
    std::uint64_t seed = 0;
};

// Compares `analytic` against central differences of `loss` around `params`.
// `loss` receives the perturbed parameter vector.
GradCheckReport finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<const double> params, std::span<const double> analytic,
                                  const GradCheckOptions& opts = {});

} // namespace hsicae
