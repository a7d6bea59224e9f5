#include "../support/detector_checks.hpp"

#include <doctest.h>

#include <hsicae/detector.hpp>

#include <cmath>
#include <numeric>

using namespace hsicae;

namespace {

constexpr Verdict S = Verdict::Similar;
constexpr Verdict A = Verdict::Anomalous;

double round2(double v) { return std::round(v * 100.0) / 100.0; }

} // namespace

TEST_SUITE("detector") {

TEST_CASE("reconstruction error examples") {
    const std::vector<double> two(16, 2.0), zero(16, 0.0);
    const auto e = reconstruction_error<double>(two, zero, 1.0);
    CHECK(e.mse == 4.0);
    CHECK(e.msle == doctest::Approx(std::log(3.0) * std::log(3.0)).epsilon(1e-15));
    CHECK(e.msle == doctest::Approx(1.2069).epsilon(1e-4));
    CHECK(e.r_err == doctest::Approx(5.2069).epsilon(1e-4));
    CHECK(e.r_err == e.mse + e.k * e.msle);

    const auto same = reconstruction_error<double>(two, two, 3.0);
    CHECK(same.r_err == 0.0);
    const auto k0 = reconstruction_error<double>(two, zero, 0.0);
    CHECK(k0.r_err == k0.mse);
    const auto rek = with_k(e, 2.5);
    CHECK(rek.r_err == e.mse + 2.5 * e.msle);

    const std::vector<float> a(4, 1.0f), b(5, 1.0f);
    CHECK_THROWS_AS(reconstruction_error<float>(a, b, 1.0), ShapeError);
}

TEST_CASE("reconstruction error is a hand-checked mean") {
    const std::vector<double> x{0.0, 1.0, 3.0, 7.0};
    const std::vector<double> y{1.0, 1.0, 0.0, 3.0};
    const auto e = reconstruction_error<double>(x, y, 0.5);
    CHECK(e.mse == doctest::Approx((1.0 + 0.0 + 9.0 + 16.0) / 4));
    const double l = std::pow(std::log(1.0) - std::log(2.0), 2) + std::pow(std::log(4.0), 2) +
                     std::pow(std::log(8.0) - std::log(4.0), 2);
    CHECK(e.msle == doctest::Approx(l / 4));
}

TEST_CASE("reconstruction error is permutation invariant") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 1 + rng.below(100);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = rng.uniform(0, 10);
            y[i] = rng.uniform(0, 10);
        }
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        std::vector<double> px(n), py(n);
        for (std::size_t i = 0; i < n; ++i) {
            px[i] = x[perm[i]];
            py[i] = y[perm[i]];
        }
        const auto a = reconstruction_error<double>(x, y, 0.7);
        const auto b = reconstruction_error<double>(px, py, 0.7);
        CHECK(a.mse == doctest::Approx(b.mse).epsilon(1e-12));
        CHECK(a.msle == doctest::Approx(b.msle).epsilon(1e-12));
        CHECK(a.r_err >= 0.0);
    }
}

TEST_CASE("k selection") {
    auto errs = [](std::vector<std::pair<double, double>> v) {
        std::vector<ReconError> out;
        for (auto [m, l] : v) out.push_back({m, l, 0.0, m});
        return out;
    };
    CHECK(select_k(errs({{100, 4}})) == 25.0);
    CHECK(select_k(errs({{50, 2}, {150, 6}})) == 25.0);
    CHECK(select_k(errs({{3, 3}, {5, 5}})) == 1.0);
    CHECK(select_k(errs({{8, 2}})) == 4.0);
    CHECK_THROWS_AS(select_k(errs({{1, 0}, {2, 0}})), KSelectionError);
    CHECK_THROWS_AS(select_k(std::vector<ReconError>{}), ArgError);

    // Balanced contributions on random data.
    Rng rng(9);
    std::vector<ReconError> v(40);
    for (auto& e : v) e = {rng.uniform(0, 100), rng.uniform(0.01, 2), 0, 0};
    const double k = select_k(v);
    double sm = 0, sl = 0;
    for (const auto& e : v) {
        sm += e.mse;
        sl += e.msle;
    }
    CHECK(sm == doctest::Approx(k * sl).epsilon(1e-12));
}

TEST_CASE("classification boundary") {
    CHECK(classify(70000.0, 70000.0) == A);
    CHECK(classify(0.0, 1e-9) == S);
    CHECK(classify(80000.0, 70000.0) == A);
    CHECK(classify(69999.0, kDefaultThreshold) == S);
    CHECK(kDefaultThreshold == 70000.0);
}

TEST_CASE("classification is monotone in the threshold") {
    Rng rng(4);
    for (int t = 0; t < 500; ++t) {
        const double e = rng.uniform(0, 10), t1 = rng.uniform(0, 10), t2 = t1 + rng.uniform(0, 5);
        if (classify(e, t1) == S) CHECK(classify(e, t2) == S);
    }
}

TEST_CASE("metrics reproduce the published confusion matrices") {
    const auto fp32 = compute_metrics({79, 10, 0, 837});
    CHECK(round2(*fp32.accuracy) == 98.92);
    CHECK(round2(*fp32.f1) == 94.05);
    CHECK(round2(*fp32.recall) == 88.76);
    CHECK(round2(*fp32.precision) == 100.0);
    CHECK(round2(*fp32.fnr) == 11.24);
    CHECK(round2(*fp32.fpr) == 0.0);

    const auto int8 = compute_metrics({77, 12, 0, 837});
    CHECK(round2(*int8.accuracy) == 98.70);
    CHECK(round2(*int8.f1) == 92.77);
    CHECK(round2(*int8.fnr) == 13.48);
    CHECK(round2(*int8.fpr) == 0.0);
}

TEST_CASE("undefined ratios are absent") {
    const auto m = compute_metrics({0, 0, 0, 5});
    CHECK(*m.accuracy == 100.0);
    CHECK_FALSE(m.precision.has_value());
    CHECK_FALSE(m.recall.has_value());
    CHECK_FALSE(m.f1.has_value());
    CHECK_FALSE(m.fnr.has_value());
    CHECK(*m.fpr == 0.0);
    const auto none = compute_metrics({0, 0, 0, 0});
    CHECK_FALSE(none.accuracy.has_value());
    const auto j = to_json(m);
    CHECK(j["precision"].is_null());
    CHECK(j["accuracy"] == 100.0);
}

TEST_CASE("threshold sweep examples") {
    const std::vector<double> e{1, 2, 10, 11};
    const std::vector<Verdict> t{S, S, A, A};
    const auto c = select_threshold(e, t);
    CHECK(c.threshold == 6.0);
    CHECK(*c.f1 == 1.0);
    CHECK(c.confusion == ConfusionMatrix{2, 0, 0, 2});

    const std::vector<double> inter{1, 2, 3, 4, 5, 6};
    const std::vector<Verdict> it{S, A, S, A, S, A};
    const auto ci = select_threshold(inter, it);
    CHECK(*ci.f1 < 1.0);
    CHECK(*ci.f1 == oracle::brute_force_threshold(inter, it).f1);

    CHECK_THROWS_AS(select_threshold(e, std::vector<Verdict>(4, S)), ThresholdError);
    CHECK_THROWS_AS(select_threshold(e, std::vector<Verdict>(4, A)), ThresholdError);
    CHECK_THROWS_AS(select_threshold(e, std::vector<Verdict>(3, S)), ArgError);
    const auto empty = select_threshold({}, {});
    CHECK(empty.threshold == 70000.0);
    CHECK_FALSE(empty.f1.has_value());
}

TEST_CASE("ties prefer the lower false positive rate, then the smaller threshold") {
    // t in (1,2): tp=1 fn=1 fp=0 -> F1 2/3. t in (3,4): tp=2 fp=1 -> F1 0.8.
    // Everything Similar: tp=3 fp=2 -> F1 0.75.
    const std::vector<double> e{1, 2, 3, 4, 5};
    const std::vector<Verdict> t{S, A, S, S, A};
    const auto c = select_threshold(e, t);
    CHECK(*c.f1 == doctest::Approx(6.0 / 7.0));
    CHECK(c.threshold == 4.5);

    // Two candidates with equal F1: keep the one with no false positives.
    const std::vector<double> e2{1, 2, 3, 4};
    const std::vector<Verdict> t2{S, S, A, S};
    const auto c2 = select_threshold(e2, t2);
    const auto want = oracle::brute_force_threshold(e2, t2);
    CHECK(*c2.f1 == want.f1);
    CHECK(false_positive_rate(c2.confusion) == want.fpr);
}

TEST_CASE("returned threshold beats every other candidate") {
    Rng rng(12);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n = 4 + rng.below(60);
        std::vector<double> e(n);
        std::vector<Verdict> tr(n);
        for (std::size_t i = 0; i < n; ++i) {
            e[i] = rng.uniform(0, 5);
            tr[i] = i % 2 ? S : A;
        }
        const auto c = select_threshold(e, tr);
        std::vector<double> s = e;
        std::sort(s.begin(), s.end());
        for (std::size_t i = 0; i + 1 < s.size(); ++i)
            CHECK(f1_score(confusion(e, tr, 0.5 * (s[i] + s[i + 1]))) <= *c.f1);
        CHECK(f1_score(confusion(e, tr, s.back() + 1)) <= *c.f1);
    }
}

TEST_CASE("threshold sweep equals brute force") {
    const auto r = checks::threshold_sweep_vs_brute_force(200, 77);
    INFO(r.first_failure);
    CHECK(r.sets == 200);
    CHECK(r.mismatches == 0);
}

TEST_CASE("detect and report") {
    std::vector<PatchResult> ps;
    const std::vector<std::pair<double, double>> comps{{1, 1}, {2, 0.5}, {10, 2}, {12, 3}};
    const std::vector<Verdict> truths{S, S, A, A};
    for (std::size_t i = 0; i < comps.size(); ++i)
        ps.push_back({"p" + std::to_string(i), {comps[i].first, comps[i].second, 0, 0}, truths[i], S});
    const auto r = detect(ps, {});
    CHECK(r.k == doctest::Approx(25.0 / 6.5));
    CHECK(r.confusion == ConfusionMatrix{2, 0, 0, 2});
    for (const auto& p : r.patches) {
        CHECK(p.error.r_err == p.error.mse + r.k * p.error.msle);
        CHECK(p.verdict == classify(p.error.r_err, r.threshold));
    }
    const auto fixed = detect(ps, {1.0, 2.2});
    CHECK(fixed.k == 1.0);
    CHECK(fixed.threshold == 2.2);
    CHECK(fixed.confusion == ConfusionMatrix{1, 1, 0, 2});

    const auto j = to_json(r);
    for (const char* key : {"k", "threshold", "confusion", "metrics", "patches"}) CHECK(j.contains(key));
    CHECK(j["confusion"]["tp"] == 2);
    CHECK(j["metrics"]["f1"] == 100.0);
    CHECK(j["patches"].size() == 4);
    CHECK(j["patches"][2]["truth"] == "Anomalous");
    for (const char* key : {"source", "r_err", "mse", "msle", "truth", "verdict"}) CHECK(j["patches"][0].contains(key));
}

TEST_CASE("metrics are rounded to two decimals in JSON") {
    const auto j = to_json(compute_metrics({2, 1, 0, 0}));
    CHECK(j["accuracy"] == 66.67);
    CHECK(j["f1"] == 80.0);
}

}
