#include "../support/model_checks.hpp"
#include "../support/tempdir.hpp"

#include <doctest.h>

#include <hsicae/model.hpp>

#include <fstream>
#include <limits>

using namespace hsicae;

namespace {

CaeConfig tiny(std::size_t size = 48) { return CaeConfig::with_filters({4, 8, 16}, size); }

std::vector<Patch> constant_patches(std::size_t n, std::size_t size) {
    std::vector<Patch> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].size = size;
        out[i].pixels.assign(size * size, 0.2f + 0.1f * static_cast<float>(i));
        out[i].source = {"const", 0, static_cast<std::uint32_t>(i), 0};
    }
    return out;
}

bool same_weights(CaeModelF a, CaeModelF b) {
    auto pa = parameter_blocks(a);
    auto pb = parameter_blocks(b);
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!std::equal(pa[i].begin(), pa[i].end(), pb[i].begin(), pb[i].end())) return false;
    return serialize_weights(a) == serialize_weights(b);
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("parameter counts") {
    CHECK(param_count(build_model<float>(CaeConfig{}, 0)) == 2955265);
    CaeConfig nobn;
    nobn.batchnorm = false;
    CHECK(param_count(build_model<float>(nobn, 0)) == 2952705);
    CaeConfig ones = CaeConfig::with_filters({1, 1, 1}, 4);
    ones.kernel = 1;
    ones.batchnorm = false;
    CHECK(param_count(build_model<float>(ones, 0)) == 12);
}

TEST_CASE("default topology and bottleneck") {
    const auto m = build_model<float>(CaeConfig{}, 0);
    CHECK(m.conv_count() == 6);
    CHECK(m.site_count() == 7);
    Tensor4f x(1, 1, 144, 144, 0.5f);
    ForwardTrace<float> tr;
    auto mm = m;
    const auto y = forward(mm, x, Mode::Infer, &tr);
    CHECK(y.shape() == x.shape());
    // Input of the fourth conv is the bottleneck.
    std::size_t conv = 0;
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        if (std::holds_alternative<ConvLayer<float>>(m.layers[i]) && conv++ == 3)
            CHECK(tr.inputs[i].shape() == Shape4{1, 512, 72, 72});
}

TEST_CASE("tiny bottleneck shape") {
    auto m = build_model<float>(tiny(), 1);
    ForwardTrace<float> tr;
    forward(m, Tensor4f(1, 1, 48, 48, 1.0f), Mode::Infer, &tr);
    std::size_t conv = 0;
    for (std::size_t i = 0; i < m.layers.size(); ++i)
        if (std::holds_alternative<ConvLayer<float>>(m.layers[i]) && conv++ == 3)
            CHECK(tr.inputs[i].shape() == Shape4{1, 16, 24, 24});
}

TEST_CASE("config validation") {
    CaeConfig c;
    c.decoder_filters = {128, 256};
    CHECK_THROWS_AS(build_model<float>(c, 0), ConfigError);
    CaeConfig odd = tiny(47);
    CHECK_THROWS_AS(build_model<float>(odd, 0), ConfigError);
    CHECK(CaeConfig::from_text(tiny().to_text()) == tiny());
}

TEST_CASE("deterministic construction and inference") {
    CHECK(same_weights(build_model<float>(tiny(), 9), build_model<float>(tiny(), 9)));
    CHECK_FALSE(same_weights(build_model<float>(tiny(), 9), build_model<float>(tiny(), 10)));
    const auto m = build_model<float>(tiny(), 3);
    Tensor4f x(2, 1, 48, 48, 0.3f);
    CHECK(infer(m, x) == infer(m, x));
}

TEST_CASE("zero model gives zero output") {
    auto m = build_model<float>(tiny(), 0);
    for (auto b : parameter_blocks(m)) std::fill(b.begin(), b.end(), 0.0f);
    CHECK(infer(m, Tensor4f(1, 1, 48, 48)) == Tensor4f(1, 1, 48, 48));
}

TEST_CASE("input shape is checked") {
    const auto m = build_model<float>(tiny(), 0);
    CHECK_THROWS_AS(infer(m, Tensor4f(1, 1, 32, 32)), ShapeError);
    CHECK_THROWS_AS(infer(m, Tensor4f(1, 2, 48, 48)), ShapeError);
}

TEST_CASE("shape preservation over random configs") {
    Rng rng(17);
    for (int t = 0; t < 20; ++t) {
        CaeConfig c = CaeConfig::with_filters({1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)}, 2 * (2 + rng.below(8)));
        c.kernel = rng.below(2) ? 3 : 1;
        c.stride2_layer_index = rng.below(3);
        c.batchnorm = rng.below(2) == 0;
        c.output_activation = rng.below(2) ? OutputActivation::ReLU : OutputActivation::Linear;
        auto m = build_model<float>(c, t);
        const std::size_t n = 1 + rng.below(3);
        Tensor4f x(n, 1, c.input_size, c.input_size, 0.5f);
        CHECK(forward(m, x, Mode::Train).shape() == x.shape());
        CHECK(infer(m, x).shape() == x.shape());
    }
}

TEST_CASE("full-model gradient check in double precision") {
    const auto rep = checks::model_gradient_check(tiny(16), 5);
    INFO("max rel err " << rep.max_rel_error << " at " << rep.worst_index);
    CHECK(rep.passed);
    CHECK(rep.checked > 1000);
}

TEST_CASE("training reconstructs constant patches") {
    // Linear output and full-batch steps: a ReLU output can start dead on the
    // darkest patch and never recover within 50 epochs.
    CaeConfig cfg = tiny();
    cfg.output_activation = OutputActivation::Linear;
    auto m = build_model<float>(cfg, 0);
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 8;
    tc.lr = 3e-2;
    tc.seed = 0;
    const auto h = train(m, constant_patches(8, 48), tc);
    REQUIRE(h.size() == 50);
    CHECK(h.back() < 0.01 * h.front());
    // Smoothed loss (window 10) is no worse at E than at E/2.
    auto smooth = [&](std::size_t e) {
        double s = 0;
        const std::size_t lo = e >= 9 ? e - 9 : 0;
        for (std::size_t i = lo; i <= e; ++i) s += h[i];
        return s / static_cast<double>(e - lo + 1);
    };
    for (std::size_t e = 20; e < 50; e += 5) CHECK(smooth(e) <= smooth(e / 2));
}

TEST_CASE("training is deterministic and validates its inputs") {
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 8;
    auto a = build_model<float>(tiny(), 1);
    auto b = build_model<float>(tiny(), 1);
    const auto ha = train(a, constant_patches(5, 48), tc);
    const auto hb = train(b, constant_patches(5, 48), tc);
    CHECK(ha == hb);
    CHECK(same_weights(a, b));

    TrainConfig zero = tc;
    zero.epochs = 0;
    CHECK_THROWS_AS(train(a, constant_patches(2, 48), zero), ConfigError);
    CHECK_THROWS_AS(train(a, {}, tc), ArgError);

    auto huge = constant_patches(2, 48);
    for (auto& p : huge)
        for (float& v : p.pixels) v = std::numeric_limits<float>::infinity();
    try {
        train(a, huge, tc);
        FAIL("expected DivergedError");
    } catch (const DivergedError& e) {
        CHECK(e.epoch() == 0);
        CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
    }
}

TEST_CASE("resume from checkpoint reproduces the remaining history") {
    testing::TempDir dir("ckpt");
    TrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 3;
    tc.seed = 2;
    tc.checkpoint_every = 3;
    const auto data = constant_patches(7, 48);

    auto full = build_model<float>(tiny(), 5);
    int saved = 0;
    TrainCallbacks cb;
    cb.checkpoint = [&](const CaeModelF& m, const TrainState& st) {
        if (st.next_epoch == 3) save_checkpoint(dir / "c.caec", m, st);
        ++saved;
    };
    const auto h = train(full, data, tc, cb);
    CHECK(saved == 2);

    auto [m, st] = load_checkpoint(dir / "c.caec");
    CHECK(st.next_epoch == 3);
    const auto resumed = train(m, data, tc, {}, st);
    CHECK(resumed == h);
    CHECK(same_weights(m, full));
}

TEST_CASE("weight files") {
    testing::TempDir dir("w");
    const auto m = build_model<float>(tiny(), 6);
    save_weights(m, dir / "m.caew");
    CHECK(same_weights(load_weights(dir / "m.caew"), m));
    const auto bytes = std::filesystem::file_size(dir / "m.caew");
    CHECK(bytes >= 4 * param_count(m));

    std::ifstream in(dir / "m.caew", std::ios::binary);
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    raw.resize(raw.size() - 3);
    std::ofstream(dir / "t.caew", std::ios::binary).write(raw.data(), static_cast<std::streamsize>(raw.size()));
    CHECK_THROWS_AS(load_weights(dir / "t.caew"), FormatError);
    raw[0] = 'Z';
    std::ofstream(dir / "z.caew", std::ios::binary).write(raw.data(), static_cast<std::streamsize>(raw.size()));
    CHECK_THROWS_AS(load_weights(dir / "z.caew"), FormatError);

    auto other = build_model<float>(CaeConfig::with_filters({4, 8, 8}, 48), 0);
    CHECK_THROWS_AS(load_weights_into(other, dir / "m.caew"), FormatError);
}

TEST_CASE("default weight file size") {
    testing::TempDir dir("dw");
    const auto m = build_model<float>(CaeConfig{}, 0);
    save_weights(m, dir / "d.caew");
    // Parameters plus BN running statistics plus a small header.
    const auto expect = 4u * (2955265u + 2u * 1280u);
    const auto size = std::filesystem::file_size(dir / "d.caew");
    CHECK(size > expect);
    CHECK(size < expect + 1024);
}

}
