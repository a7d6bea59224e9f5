#include <hsicae/quant.hpp>

#include <algorithm>
#include <cstring>

#if defined(__AVX512VNNI__) && defined(__AVX512BW__)
#include <immintrin.h>
#define HSICAE_HAVE_VNNI 1
#else
#define HSICAE_HAVE_VNNI 0
#endif

namespace hsicae {

bool qkernel_has_vnni() { return HSICAE_HAVE_VNNI != 0; }

namespace detail {

namespace {

constexpr std::size_t kColTile = 32; // output pixels per register tile

// Activations are stored offset by +128 as unsigned bytes; a padded position
// holds the offset zero point, i.e. real zero.
struct PackedColumns {
    std::size_t k4 = 0;      // reduction length in groups of 4
    std::size_t p_pad = 0;   // output pixels rounded up to kColTile
    std::vector<std::uint8_t> data; // [k4][p_pad][4]
};

void pack_columns(const QConvLayer& L, const std::int8_t* in, std::size_t h, std::size_t w, const AxisGeometry& gh,
                  const AxisGeometry& gw, PackedColumns& col) {
    const std::size_t k = L.kernel;
    const std::size_t kd = L.in_channels * k * k;
    const std::size_t np = gh.out * gw.out;
    col.k4 = (kd + 3) / 4;
    col.p_pad = (np + kColTile - 1) / kColTile * kColTile;
    col.data.assign(col.k4 * col.p_pad * 4, 0);
    const auto pad_value = static_cast<std::uint8_t>(L.input_params.zero_point + 128);
    for (std::size_t c = 0; c < L.in_channels; ++c) {
        const std::int8_t* plane = in + c * h * w;
        for (std::size_t u = 0; u < k; ++u) {
            for (std::size_t v = 0; v < k; ++v) {
                const std::size_t kk = (c * k + u) * k + v;
                std::uint8_t* base = col.data.data() + (kk / 4) * col.p_pad * 4 + kk % 4;
                for (std::size_t i = 0; i < gh.out; ++i) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(i * gh.stride + u) - gh.pad_before;
                    const bool row_in = ih >= 0 && ih < static_cast<std::ptrdiff_t>(h);
                    for (std::size_t j = 0; j < gw.out; ++j) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(j * gw.stride + v) - gw.pad_before;
                        const bool in_bounds = row_in && iw >= 0 && iw < static_cast<std::ptrdiff_t>(w);
                        base[(i * gw.out + j) * 4] =
                            in_bounds ? static_cast<std::uint8_t>(plane[ih * w + iw] + 128) : pad_value;
                    }
                }
            }
        }
    }
}

void gemm_u8s8_scalar(std::size_t m, const PackedColumns& col, const std::int8_t* wpack, std::int32_t* acc) {
    for (std::size_t o = 0; o < m; ++o) {
        const std::int8_t* wrow = wpack + o * col.k4 * 4;
        std::int32_t* arow = acc + o * col.p_pad;
        std::fill(arow, arow + col.p_pad, 0);
        for (std::size_t q = 0; q < col.k4; ++q) {
            const std::uint8_t* crow = col.data.data() + q * col.p_pad * 4;
            const std::int32_t w0 = wrow[q * 4], w1 = wrow[q * 4 + 1], w2 = wrow[q * 4 + 2], w3 = wrow[q * 4 + 3];
            for (std::size_t p = 0; p < col.p_pad; ++p) {
                const std::uint8_t* c = crow + p * 4;
                arow[p] += w0 * c[0] + w1 * c[1] + w2 * c[2] + w3 * c[3];
            }
        }
    }
}

#if HSICAE_HAVE_VNNI
template <std::size_t MB>
inline void vnni_tile(std::size_t k4, std::size_t p_pad, const std::uint8_t* cols, const std::int8_t* wpack,
                      std::int32_t* acc) {
    __m512i a0[MB], a1[MB];
    for (std::size_t r = 0; r < MB; ++r) {
        a0[r] = _mm512_setzero_si512();
        a1[r] = _mm512_setzero_si512();
    }
    for (std::size_t q = 0; q < k4; ++q) {
        const std::uint8_t* crow = cols + q * p_pad * 4;
        const __m512i c0 = _mm512_loadu_si512(crow);
        const __m512i c1 = _mm512_loadu_si512(crow + 64);
        for (std::size_t r = 0; r < MB; ++r) {
            std::int32_t wq;
            std::memcpy(&wq, wpack + (r * k4 + q) * 4, 4);
            const __m512i wb = _mm512_set1_epi32(wq);
            a0[r] = _mm512_dpbusd_epi32(a0[r], c0, wb);
            a1[r] = _mm512_dpbusd_epi32(a1[r], c1, wb);
        }
    }
    for (std::size_t r = 0; r < MB; ++r) {
        _mm512_storeu_si512(acc + r * p_pad, a0[r]);
        _mm512_storeu_si512(acc + r * p_pad + 16, a1[r]);
    }
}

void gemm_u8s8_vnni(std::size_t m, const PackedColumns& col, const std::int8_t* wpack, std::int32_t* acc) {
    constexpr std::size_t MB = 8;
    for (std::size_t p0 = 0; p0 < col.p_pad; p0 += kColTile) {
        const std::uint8_t* cols = col.data.data() + p0 * 4;
        std::size_t o = 0;
        for (; o + MB <= m; o += MB)
            vnni_tile<MB>(col.k4, col.p_pad, cols, wpack + o * col.k4 * 4, acc + o * col.p_pad + p0);
        for (; o < m; ++o) vnni_tile<1>(col.k4, col.p_pad, cols, wpack + o * col.k4 * 4, acc + o * col.p_pad + p0);
    }
}
#endif

} // namespace

void qconv_sample(const QConvLayer& L, const std::int8_t* in, std::size_t h, std::size_t w, std::int8_t* out,
                  QKernel kernel) {
    const std::size_t k = L.kernel;
    const std::size_t kd = L.in_channels * k * k;
    const AxisGeometry gh = same_padding(h, k, L.stride);
    const AxisGeometry gw = same_padding(w, k, L.stride);
    const std::size_t np = gh.out * gw.out;

    PackedColumns col;
    pack_columns(L, in, h, w, gh, gw, col);

    std::vector<std::int8_t> wpack(L.out_channels * col.k4 * 4, 0);
    std::vector<std::int32_t> wsum(L.out_channels, 0);
    for (std::size_t o = 0; o < L.out_channels; ++o) {
        for (std::size_t q = 0; q < kd; ++q) {
            wpack[o * col.k4 * 4 + q] = L.weights[o * kd + q];
            wsum[o] += L.weights[o * kd + q];
        }
    }

    std::vector<std::int32_t> acc(L.out_channels * col.p_pad);
#if HSICAE_HAVE_VNNI
    if (kernel == QKernel::Auto)
        gemm_u8s8_vnni(L.out_channels, col, wpack.data(), acc.data());
    else
        gemm_u8s8_scalar(L.out_channels, col, wpack.data(), acc.data());
#else
    (void)kernel;
    gemm_u8s8_scalar(L.out_channels, col, wpack.data(), acc.data());
#endif

    const std::int32_t in_offset = L.input_params.zero_point + 128;
    const std::int32_t zp_out = L.output_params.zero_point;
    for (std::size_t o = 0; o < L.out_channels; ++o) {
        const std::int64_t shift = std::int64_t{L.bias[o]} - std::int64_t{in_offset} * wsum[o];
        const std::int32_t* arow = acc.data() + o * col.p_pad;
        std::int8_t* orow = out + o * np;
        for (std::size_t p = 0; p < np; ++p) {
            std::int32_t q = requantize(arow[p] + shift, L.requant, zp_out);
            if (L.relu) q = std::max(q, zp_out);
            orow[p] = static_cast<std::int8_t>(q);
        }
    }
}

} // namespace detail

} // namespace hsicae
