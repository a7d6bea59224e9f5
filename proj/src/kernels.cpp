#include <hsicae/kernels.hpp>
#include <hsicae/rng.hpp>

#include "gemm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hsicae {

AxisGeometry same_padding(std::size_t in, std::size_t kernel, std::size_t stride) {
    if (stride == 0) throw ArgError("stride must be positive");
    if (kernel == 0) throw ArgError("kernel must be positive");
    AxisGeometry g;
    g.in = in;
    g.kernel = kernel;
    g.stride = stride;
    g.out = (in + stride - 1) / stride;
    const std::ptrdiff_t needed = static_cast<std::ptrdiff_t>((g.out - 1) * stride + kernel) -
                                  static_cast<std::ptrdiff_t>(in);
    g.pad_before = std::max<std::ptrdiff_t>(needed, 0) / 2;
    return g;
}

namespace {

template <typename T>
void check_conv(const Tensor4<T>& x, const ConvParams<T>& p) {
    if (p.weights.h() != p.weights.w()) throw ShapeError("conv kernel must be square");
    if (x.c() != p.in_channels())
        throw ShapeError("conv input has " + std::to_string(x.c()) + " channels, weights expect " +
                         std::to_string(p.in_channels()));
    if (p.bias.size() != p.out_channels()) throw ShapeError("conv bias length does not match output channels");
    if (p.stride == 0) throw ShapeError("conv stride must be positive");
}

// col[(c*k + u)*k + v][i*out_w + j] = x[c, i*s + u - pad, j*s + v - pad], zero outside.
template <typename T>
void im2col(std::span<const T> x, std::size_t channels, const AxisGeometry& gh, const AxisGeometry& gw,
            std::vector<T>& col) {
    const std::size_t k = gh.kernel;
    const std::size_t p = gh.out * gw.out;
    col.assign(channels * k * k * p, T{0});
    for (std::size_t c = 0; c < channels; ++c) {
        const T* plane = x.data() + c * gh.in * gw.in;
        for (std::size_t u = 0; u < k; ++u) {
            for (std::size_t v = 0; v < k; ++v) {
                T* row = col.data() + ((c * k + u) * k + v) * p;
                for (std::size_t i = 0; i < gh.out; ++i) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(i * gh.stride + u) - gh.pad_before;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(gh.in)) continue;
                    const T* src = plane + ih * gw.in;
                    T* dst = row + i * gw.out;
                    for (std::size_t j = 0; j < gw.out; ++j) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(j * gw.stride + v) - gw.pad_before;
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(gw.in)) dst[j] = src[iw];
                    }
                }
            }
        }
    }
}

// Transposed layout: colt[i*out_w + j][(c*k + u)*k + v].
template <typename T>
void im2col_t(std::span<const T> x, std::size_t channels, const AxisGeometry& gh, const AxisGeometry& gw,
              std::vector<T>& colt) {
    const std::size_t k = gh.kernel;
    const std::size_t kd = channels * k * k;
    colt.assign(kd * gh.out * gw.out, T{0});
    for (std::size_t i = 0; i < gh.out; ++i) {
        for (std::size_t j = 0; j < gw.out; ++j) {
            T* dst = colt.data() + (i * gw.out + j) * kd;
            for (std::size_t c = 0; c < channels; ++c) {
                const T* plane = x.data() + c * gh.in * gw.in;
                for (std::size_t u = 0; u < k; ++u) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(i * gh.stride + u) - gh.pad_before;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(gh.in)) continue;
                    for (std::size_t v = 0; v < k; ++v) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(j * gw.stride + v) - gw.pad_before;
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(gw.in))
                            dst[(c * k + u) * k + v] = plane[ih * gw.in + iw];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const std::vector<T>& col, std::size_t channels, const AxisGeometry& gh, const AxisGeometry& gw,
                std::span<T> x) {
    const std::size_t k = gh.kernel;
    const std::size_t p = gh.out * gw.out;
    for (std::size_t c = 0; c < channels; ++c) {
        T* plane = x.data() + c * gh.in * gw.in;
        for (std::size_t u = 0; u < k; ++u) {
            for (std::size_t v = 0; v < k; ++v) {
                const T* row = col.data() + ((c * k + u) * k + v) * p;
                for (std::size_t i = 0; i < gh.out; ++i) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(i * gh.stride + u) - gh.pad_before;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(gh.in)) continue;
                    for (std::size_t j = 0; j < gw.out; ++j) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(j * gw.stride + v) - gw.pad_before;
                        if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(gw.in))
                            plane[ih * gw.in + iw] += row[i * gw.out + j];
                    }
                }
            }
        }
    }
}

} // namespace

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p) {
    check_conv(x, p);
    const std::size_t k = p.kernel();
    const AxisGeometry gh = same_padding(x.h(), k, p.stride);
    const AxisGeometry gw = same_padding(x.w(), k, p.stride);
    const std::size_t out_c = p.out_channels();
    const std::size_t kd = x.c() * k * k;
    const std::size_t np = gh.out * gw.out;

    Tensor4<T> out(x.n(), out_c, gh.out, gw.out);
    std::vector<T> col;
    for (std::size_t n = 0; n < x.n(); ++n) {
        im2col<T>(x.sample(n), x.c(), gh, gw, col);
        detail::gemm<T>(out_c, np, kd, p.weights.data(), kd, col.data(), np, out.sample(n).data(), np,
                        detail::GemmInit::RowBias, p.bias.data());
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& grad_out) {
    check_conv(x, p);
    const std::size_t k = p.kernel();
    const AxisGeometry gh = same_padding(x.h(), k, p.stride);
    const AxisGeometry gw = same_padding(x.w(), k, p.stride);
    const std::size_t out_c = p.out_channels();
    const std::size_t kd = x.c() * k * k;
    const std::size_t np = gh.out * gw.out;
    if (!(grad_out.shape() == Shape4{x.n(), out_c, gh.out, gw.out}))
        throw ShapeError("conv backward: grad_out shape " + grad_out.shape().str() + " inconsistent with forward");

    ConvGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(p.weights.shape()), std::vector<T>(out_c, T{0})};

    // W^T as a (kd x out_c) matrix.
    std::vector<T> wt(kd * out_c);
    for (std::size_t o = 0; o < out_c; ++o)
        for (std::size_t q = 0; q < kd; ++q) wt[q * out_c + o] = p.weights[o * kd + q];

    std::vector<T> colt, gcol(kd * np);
    for (std::size_t n = 0; n < x.n(); ++n) {
        const T* go = grad_out.sample(n).data();
        for (std::size_t o = 0; o < out_c; ++o) {
            T s = g.grad_b[o];
            for (std::size_t i = 0; i < np; ++i) s += go[o * np + i];
            g.grad_b[o] = s;
        }
        im2col_t<T>(x.sample(n), x.c(), gh, gw, colt);
        detail::gemm<T>(out_c, kd, np, go, np, colt.data(), kd, g.grad_w.data(), kd,
                        n == 0 ? detail::GemmInit::Zero : detail::GemmInit::Accumulate);
        detail::gemm<T>(kd, np, out_c, wt.data(), out_c, go, np, gcol.data(), np, detail::GemmInit::Zero);
        col2im_add<T>(gcol, x.c(), gh, gw, g.grad_x.sample(n));
    }
    return g;
}

template <typename T>
Tensor4<T> upsample2d_nearest(const Tensor4<T>& x, std::size_t factor) {
    if (factor == 0) throw ArgError("upsample factor must be >= 1");
    Tensor4<T> out(x.n(), x.c(), x.h() * factor, x.w() * factor);
    for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t c = 0; c < x.c(); ++c)
            for (std::size_t i = 0; i < out.h(); ++i) {
                const T* src = &x(n, c, i / factor, 0);
                T* dst = &out(n, c, i, 0);
                for (std::size_t j = 0; j < out.w(); ++j) dst[j] = src[j / factor];
            }
    return out;
}

template <typename T>
Tensor4<T> upsample2d_nearest_backward(const Tensor4<T>& grad_out, std::size_t factor) {
    if (factor == 0) throw ArgError("upsample factor must be >= 1");
    if (grad_out.h() % factor != 0 || grad_out.w() % factor != 0)
        throw ShapeError("upsample backward: gradient extent not divisible by factor");
    Tensor4<T> g(grad_out.n(), grad_out.c(), grad_out.h() / factor, grad_out.w() / factor);
    for (std::size_t n = 0; n < g.n(); ++n)
        for (std::size_t c = 0; c < g.c(); ++c)
            for (std::size_t i = 0; i < g.h(); ++i)
                for (std::size_t j = 0; j < g.w(); ++j) {
                    T s{0};
                    for (std::size_t a = 0; a < factor; ++a)
                        for (std::size_t b = 0; b < factor; ++b) s += grad_out(n, c, i * factor + a, j * factor + b);
                    g(n, c, i, j) = s;
                }
    return g;
}

template <typename T>
Tensor4<T> avg_pool2d(const Tensor4<T>& x, std::size_t factor) {
    Tensor4<T> s = upsample2d_nearest_backward(x, factor);
    const T inv = T{1} / static_cast<T>(factor * factor);
    for (auto& v : s.vec()) v *= inv;
    return s;
}

template <typename T>
Tensor4<T> batchnorm_infer(const Tensor4<T>& x, const BatchNormParams<T>& p) {
    const std::size_t channels = p.channels();
    if (x.c() != channels)
        throw ShapeError("batchnorm: input has " + std::to_string(x.c()) + " channels, params " +
                         std::to_string(channels));
    if (p.epsilon <= 0.0) throw ArgError("batchnorm epsilon must be positive");
    Tensor4<T> out(x.shape());
    const std::size_t plane = x.shape().plane();
    for (std::size_t c = 0; c < channels; ++c) {
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(p.running_var[c]) + p.epsilon);
        const double scale = static_cast<double>(p.gamma[c]) * inv_std;
        const double shift = static_cast<double>(p.beta[c]) - static_cast<double>(p.running_mean[c]) * scale;
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c).data();
            T* dst = out.plane(n, c).data();
            for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(static_cast<double>(src[i]) * scale + shift);
        }
    }
    return out;
}

template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BatchNormParams<T>& p, Mode mode, BatchNormCache<T>* cache) {
    if (mode == Mode::Infer) return batchnorm_infer(x, p);
    const std::size_t channels = p.channels();
    if (x.c() != channels)
        throw ShapeError("batchnorm: input has " + std::to_string(x.c()) + " channels, params " +
                         std::to_string(channels));
    if (p.epsilon <= 0.0) throw ArgError("batchnorm epsilon must be positive");
    Tensor4<T> out(x.shape());
    const std::size_t plane = x.shape().plane();

    if (cache) {
        cache->x_hat = Tensor4<T>(x.shape());
        cache->inv_std.assign(channels, 0.0);
    }
    const double count = static_cast<double>(x.n() * plane);
    for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
            for (T v : x.plane(n, c)) sum += static_cast<double>(v);
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
            for (T v : x.plane(n, c)) {
                const double d = static_cast<double>(v) - mean;
                sq += d * d;
            }
        const double var = sq / count;
        const double inv_std = 1.0 / std::sqrt(var + p.epsilon);
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* src = x.plane(n, c).data();
            T* dst = out.plane(n, c).data();
            T* xh = cache ? cache->x_hat.plane(n, c).data() : nullptr;
            for (std::size_t i = 0; i < plane; ++i) {
                const double h = (static_cast<double>(src[i]) - mean) * inv_std;
                if (xh) xh[i] = static_cast<T>(h);
                dst[i] = static_cast<T>(static_cast<double>(p.gamma[c]) * h + static_cast<double>(p.beta[c]));
            }
        }
        if (cache) cache->inv_std[c] = inv_std;
        p.running_mean[c] = static_cast<T>((1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean);
        p.running_var[c] = static_cast<T>((1.0 - p.momentum) * p.running_var[c] + p.momentum * var);
    }
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormParams<T>& p,
                                     const Tensor4<T>& grad_out) {
    require_same_shape(cache.x_hat.shape(), grad_out.shape(), "batchnorm backward");
    const std::size_t channels = p.channels();
    const std::size_t plane = grad_out.shape().plane();
    const double count = static_cast<double>(grad_out.n() * plane);
    BatchNormGrads<T> g{Tensor4<T>(grad_out.shape()), std::vector<T>(channels), std::vector<T>(channels)};
    for (std::size_t c = 0; c < channels; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t n = 0; n < grad_out.n(); ++n) {
            const T* go = grad_out.plane(n, c).data();
            const T* xh = cache.x_hat.plane(n, c).data();
            for (std::size_t i = 0; i < plane; ++i) {
                sum_g += go[i];
                sum_gx += static_cast<double>(go[i]) * xh[i];
            }
        }
        g.grad_beta[c] = static_cast<T>(sum_g);
        g.grad_gamma[c] = static_cast<T>(sum_gx);
        const double k = static_cast<double>(p.gamma[c]) * cache.inv_std[c] / count;
        for (std::size_t n = 0; n < grad_out.n(); ++n) {
            const T* go = grad_out.plane(n, c).data();
            const T* xh = cache.x_hat.plane(n, c).data();
            T* gx = g.grad_x.plane(n, c).data();
            for (std::size_t i = 0; i < plane; ++i)
                gx[i] = static_cast<T>(k * (count * go[i] - sum_g - static_cast<double>(xh[i]) * sum_gx));
        }
    }
    return g;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward_infer(const Tensor4<T>& x, const BatchNormParams<T>& p,
                                           const Tensor4<T>& grad_out) {
    require_same_shape(x.shape(), grad_out.shape(), "batchnorm backward");
    const std::size_t channels = p.channels();
    const std::size_t plane = x.shape().plane();
    BatchNormGrads<T> g{Tensor4<T>(x.shape()), std::vector<T>(channels), std::vector<T>(channels)};
    for (std::size_t c = 0; c < channels; ++c) {
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(p.running_var[c]) + p.epsilon);
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n) {
            const T* go = grad_out.plane(n, c).data();
            const T* src = x.plane(n, c).data();
            T* gx = g.grad_x.plane(n, c).data();
            for (std::size_t i = 0; i < plane; ++i) {
                sum_g += go[i];
                sum_gx += static_cast<double>(go[i]) * (static_cast<double>(src[i]) - p.running_mean[c]) * inv_std;
                gx[i] = static_cast<T>(static_cast<double>(go[i]) * p.gamma[c] * inv_std);
            }
        }
        g.grad_beta[c] = static_cast<T>(sum_g);
        g.grad_gamma[c] = static_cast<T>(sum_gx);
    }
    return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
    Tensor4<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
    return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
    require_same_shape(x.shape(), grad_out.shape(), "relu backward");
    Tensor4<T> g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T{0} ? grad_out[i] : T{0};
    return g;
}

template <typename T>
LossResult<T> mse_loss(const Tensor4<T>& x, const Tensor4<T>& y) {
    require_same_shape(x.shape(), y.shape(), "mse_loss");
    LossResult<T> r{0.0, Tensor4<T>(y.shape())};
    if (x.empty()) return r;
    const double count = static_cast<double>(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(y[i]) - static_cast<double>(x[i]);
        sum += d * d;
        r.grad[i] = static_cast<T>(2.0 * d / count);
    }
    r.value = sum / count;
    return r;
}

template <typename T>
LossResult<T> msle_loss(const Tensor4<T>& x, const Tensor4<T>& y) {
    require_same_shape(x.shape(), y.shape(), "msle_loss");
    LossResult<T> r{0.0, Tensor4<T>(y.shape())};
    if (x.empty()) return r;
    const double count = static_cast<double>(x.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double yv = std::max(static_cast<double>(y[i]), 0.0);
        const double xv = std::max(static_cast<double>(x[i]), 0.0);
        const double d = std::log1p(xv) - std::log1p(yv);
        sum += d * d;
        r.grad[i] = y[i] > T{0} ? static_cast<T>(-2.0 * d / (1.0 + yv) / count) : T{0};
    }
    r.value = sum / count;
    return r;
}

template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads, AdamState& state) {
    if (params.size() != grads.size()) throw ShapeError("adam: parameter and gradient block counts differ");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t b = 0; b < params.size(); ++b) {
            state.m[b].assign(params[b].size(), 0.0);
            state.v[b].assign(params[b].size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam: state block count differs from parameters");
    for (std::size_t b = 0; b < params.size(); ++b)
        if (params[b].size() != grads[b].size() || state.m[b].size() != params[b].size())
            throw ShapeError("adam: block " + std::to_string(b) + " size mismatch");

    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& m = state.m[b];
        auto& v = state.v[b];
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double g = grads[b][i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            params[b][i] = static_cast<T>(params[b][i] - state.lr * m_hat / (std::sqrt(v_hat) + state.eps));
        }
    }
}

GradCheckReport finite_diff_check(const std::function<double(std::span<const double>)>& loss,
                                  std::span<const double> params, std::span<const double> analytic,
                                  const GradCheckOptions& opts) {
    if (params.size() != analytic.size()) throw ShapeError("finite_diff_check: gradient length mismatch");
    GradCheckReport rep;
    rep.tolerance = opts.tolerance;

    std::vector<std::size_t> idx(params.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opts.max_checks > 0 && opts.max_checks < idx.size()) {
        Rng rng(opts.seed);
        rng.shuffle(std::span<std::size_t>(idx));
        idx.resize(opts.max_checks);
        std::sort(idx.begin(), idx.end());
    }

    std::vector<double> probe(params.begin(), params.end());
    for (std::size_t i : idx) {
        const double theta = params[i];
        const double h = opts.rel_step * std::max(std::abs(theta), opts.min_scale);
        probe[i] = theta + h;
        const double up = loss(probe);
        probe[i] = theta - h;
        const double down = loss(probe);
        probe[i] = theta;
        // (theta + h) - (theta - h) is the step actually taken.
        const double numeric = (up - down) / ((theta + h) - (theta - h));
        const double a = analytic[i];
        const double denom = std::max(std::abs(a), std::abs(numeric));
        if (denom < opts.abs_floor) {
            ++rep.skipped;
            continue;
        }
        ++rep.checked;
        const double err = std::abs(a - numeric) / denom;
        if (err > rep.max_rel_error || !std::isfinite(err)) {
            rep.max_rel_error = std::isfinite(err) ? err : INFINITY;
            rep.worst_index = i;
        }
    }
    rep.passed = rep.max_rel_error < opts.tolerance;
    return rep;
}

#define HSICAE_INSTANTIATE(T)                                                                                \
    template Tensor4<T> conv2d_forward(const Tensor4<T>&, const ConvParams<T>&);                             \
    template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const ConvParams<T>&, const Tensor4<T>&);       \
    template Tensor4<T> upsample2d_nearest(const Tensor4<T>&, std::size_t);                                  \
    template Tensor4<T> upsample2d_nearest_backward(const Tensor4<T>&, std::size_t);                         \
    template Tensor4<T> avg_pool2d(const Tensor4<T>&, std::size_t);                                          \
    template Tensor4<T> batchnorm_forward(const Tensor4<T>&, BatchNormParams<T>&, Mode, BatchNormCache<T>*); \
    template Tensor4<T> batchnorm_infer(const Tensor4<T>&, const BatchNormParams<T>&);                        \
    template BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>&, const BatchNormParams<T>&,       \
                                                  const Tensor4<T>&);                                        \
    template BatchNormGrads<T> batchnorm_backward_infer(const Tensor4<T>&, const BatchNormParams<T>&,        \
                                                        const Tensor4<T>&);                                  \
    template Tensor4<T> relu(const Tensor4<T>&);                                                             \
    template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                                 \
    template LossResult<T> mse_loss(const Tensor4<T>&, const Tensor4<T>&);                                   \
    template LossResult<T> msle_loss(const Tensor4<T>&, const Tensor4<T>&);                                  \
    template void adam_step(std::span<const std::span<T>>, std::span<const std::span<const T>>, AdamState&);

HSICAE_INSTANTIATE(float)
HSICAE_INSTANTIATE(double)

#undef HSICAE_INSTANTIATE

} // namespace hsicae
