#include "../support/tempdir.hpp"

#include <doctest.h>

#include <hsicae/pipeline.hpp>

#include <fstream>
#include <map>
#include <sstream>

using namespace hsicae;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

PipelineConfig tiny_config(const testing::TempDir& dir) {
    PipelineConfig c;
    c.output_dir = dir / "out";
    c.data.dir = dir / "data";
    c.data.scale = 1e-4;
    c.model = CaeConfig::with_filters({2, 4, 8}, 16);
    c.train.epochs = 3;
    c.train.batch_size = 8;
    c.synth.scene.bands = 3;
    c.synth.scene.rows = 48;
    c.synth.scene.cols = 48;
    c.synth.clean_scenes = 2;
    c.synth.artefact_scenes = 3;
    c.synth.seed = 5;
    c.quant.dual_path_patches = 4;
    c.bench.warmup = 1;
    c.bench.iterations = 5;
    return c;
}

std::map<std::string, std::string> dir_contents(const fs::path& d) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(d)) out[e.path().filename().string()] = slurp(e.path());
    return out;
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config text round trip") {
    PipelineConfig c;
    c.output_dir = "/tmp/x y";
    c.data.scale = 0.1 + 0.2;
    c.model = CaeConfig::with_filters({3, 5, 7}, 32);
    c.detector.k = 1.0 / 3.0;
    c.detector.threshold = 1e-7;
    c.quant.calibration = CalibrationMode::Percentile999;
    c.synth.kinds = {ArtefactKind::SensorStripe};
    c.bench.precision = Precision::Float32;
    const std::string t = c.to_text();
    const PipelineConfig back = PipelineConfig::from_text(t);
    CHECK(back.to_text() == t);
    CHECK(back.data.scale == c.data.scale);
    CHECK(*back.detector.k == *c.detector.k);
    CHECK(back.model == c.model);

    const PipelineConfig d = PipelineConfig::from_text(PipelineConfig{}.to_text());
    CHECK_FALSE(d.detector.k.has_value());
    CHECK_FALSE(d.detector.threshold.has_value());
    CHECK(d.model == CaeConfig{});
    CHECK(d.train.lr == 1e-3);
    CHECK(d.train.epochs == 2000);
    CHECK(d.quant.finetune_epochs == 0);
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(PipelineConfig::from_text("no.such.key = 1\n"), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_text("train.epochs = many\n"), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_text("train.epochs\n"), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_text("bench.precision = fp16\n"), ConfigError);
    const auto c = PipelineConfig::from_text("# comment\n\ntrain.epochs = 7  # trailing\n");
    CHECK(c.train.epochs == 7);
    CHECK(parse_band_list("1,3,10-12") == std::set<std::size_t>{1, 3, 10, 11, 12});
    CHECK_THROWS_AS(parse_band_list("5-2"), ConfigError);
}

TEST_CASE("gen is deterministic and its manifest matches the corpus") {
    testing::TempDir a("gena"), b("genb");
    PipelineConfig ca = tiny_config(a), cb = tiny_config(b);
    const auto sa = run_gen(ca);
    run_gen(cb);
    const auto fa = dir_contents(ca.data.dir), fb = dir_contents(cb.data.dir);
    CHECK(fa == fb);
    CHECK(fs::exists(ca.output_dir / "gen.resolved.cfg"));
    CHECK(sa.cubes == 5);

    const auto rows = read_manifest(ca.data.dir / outputs::kManifest);
    // 3 bands x 9 patches per scene.
    CHECK(rows.size() == 5 * 27);
    CHECK(sa.clean_patches + sa.artefact_patches + sa.partial_patches == rows.size());
    std::size_t clean_in_clean_scenes = 0;
    for (const auto& r : rows) {
        if (r.source.cube == "scene_000" || r.source.cube == "scene_001") {
            CHECK(r.label == "clean");
            clean_in_clean_scenes += r.label == "clean";
        }
        if (r.label == "artefact") CHECK(r.affected >= ca.synth.min_affected);
        if (r.label == "clean") CHECK(r.affected == 0.0);
    }
    CHECK(clean_in_clean_scenes == 2 * 27);
    CHECK(sa.artefact_patches > 0);

    const Corpus corpus = load_corpus(ca);
    CHECK(corpus.seen.size() == sa.clean_patches);
    CHECK(corpus.unseen.size() == sa.artefact_patches);
}

TEST_CASE("train writes weights and history, and resumes bitwise") {
    testing::TempDir d("train");
    PipelineConfig c = tiny_config(d);
    run_gen(c);
    c.train.epochs = 4;
    const auto full = run_train(c);
    CHECK(full.size() == 4);
    const std::string hist = slurp(c.output_dir / outputs::kHistory);
    CHECK(std::count(hist.begin(), hist.end(), '\n') == 4);
    CHECK(fs::exists(c.output_dir / outputs::kWeights));
    CHECK(fs::exists(c.output_dir / "train.resolved.cfg"));

    PipelineConfig r = c;
    r.output_dir = d / "resumed";
    r.train.epochs = 2;
    r.train.checkpoint_every = 2;
    run_train(r);
    r.train.epochs = 4;
    const auto resumed = run_train(r, {true});
    CHECK(resumed == full);
    CHECK(slurp(r.output_dir / outputs::kWeights) == slurp(c.output_dir / outputs::kWeights));
    CHECK(slurp(r.output_dir / outputs::kHistory) == hist);

    PipelineConfig missing = c;
    missing.data.dir = d / "nowhere";
    CHECK_THROWS_AS(run_train(missing), IoError);
}

TEST_CASE("quantize, eval and bench") {
    testing::TempDir d("quant");
    PipelineConfig c = tiny_config(d);
    run_gen(c);
    run_train(c);

    const auto q = run_quantize(c);
    CHECK(q.dual_path_exact);
    CHECK(q.dual_path_checked == 4);
    CHECK(fs::exists(c.output_dir / outputs::kQuantized));
    const auto rep = nlohmann::json::parse(slurp(c.output_dir / outputs::kQuantReport));
    CHECK(rep["dual_path"] == "exact");
    CHECK(nlohmann::json::parse(slurp(c.output_dir / outputs::kCalibration)).contains("sites"));

    const auto fp = run_eval(c, c.output_dir / outputs::kWeights);
    const auto i8 = run_eval(c, c.output_dir / outputs::kQuantized);
    CHECK(fp.patches.size() == i8.patches.size());
    CHECK(i8.k == fp.k); // frozen from the float model
    CHECK(fs::exists(report_path(c, Precision::Float32)));
    CHECK(fs::exists(report_path(c, Precision::Int8)));
    const auto cm = fp.confusion;
    CHECK(cm.total() == fp.patches.size());

    PipelineConfig fixed = c;
    fixed.detector.threshold = 0.5;
    const auto ft = run_eval(fixed, c.output_dir / outputs::kWeights);
    CHECK(ft.threshold == 0.5);
    for (const auto& p : ft.patches) CHECK(p.verdict == classify(p.error.r_err, 0.5));

    SUBCASE("fine-tuning") {
        PipelineConfig f = c;
        f.quant.finetune_epochs = 2;
        const auto s = run_quantize(f);
        CHECK(s.finetune_history.size() == 2);
        CHECK(s.dual_path_exact);
        CHECK(fs::exists(f.output_dir / outputs::kFinetuneHistory));
    }
    SUBCASE("corrupt weights") {
        std::ofstream(d / "bad.caew", std::ios::binary) << "CAEWgarbage";
        CHECK_THROWS_AS(run_quantize(c, d / "bad.caew"), FormatError);
    }
    SUBCASE("bench") {
        const auto b = run_bench(c, c.output_dir / outputs::kQuantized);
        CHECK(b.iterations == 5);
        CHECK(b.precision == Precision::Int8);
        CHECK(b.throughput == doctest::Approx(1000.0 / b.mean_ms).epsilon(0.01));
        CHECK(b.mean_ms >= 0.5 * b.p50_ms);
        CHECK(b.mean_ms <= b.p99_ms);
        const auto j = to_json(b);
        CHECK(j["iterations"] == 5);
        CHECK(j["precision"] == "int8");
        CHECK(fs::exists(bench_path(c, Precision::Int8)));
        // Outputs are deterministic, timings are not.
        CHECK(run_bench(c, c.output_dir / outputs::kQuantized).output_checksum == b.output_checksum);

        PipelineConfig z = c;
        z.bench.iterations = 0;
        CHECK_THROWS_AS(run_bench(z, c.output_dir / outputs::kQuantized), ConfigError);
        PipelineConfig f32 = c;
        f32.bench.precision = Precision::Float32;
        CHECK(run_bench(f32, c.output_dir / outputs::kWeights).precision == Precision::Float32);
        CHECK_THROWS_AS(run_bench(f32, c.output_dir / outputs::kQuantized), ConfigError);
    }
}

TEST_CASE("single-class validation cannot be swept") {
    testing::TempDir d("single");
    PipelineConfig c = tiny_config(d);
    c.synth.artefact_scenes = 0;
    run_gen(c);
    run_train(c);
    CHECK_THROWS_AS(run_eval(c, c.output_dir / outputs::kWeights), ThresholdError);
    c.detector.threshold = 1.0;
    CHECK_NOTHROW(run_eval(c, c.output_dir / outputs::kWeights));
}

TEST_CASE("eval on precomputed scores reproduces the published metrics") {
    testing::TempDir d("scores");
    PipelineConfig c;
    c.output_dir = d / "out";
    c.detector.k = 0.0;
    c.detector.threshold = 50.0;
    std::ofstream out(d / "scores.tsv");
    out << "source\tmse\tmsle\ttruth\n";
    for (int i = 0; i < 79; ++i) out << "s" << i << "\t1\t0\tSimilar\n";
    for (int i = 0; i < 10; ++i) out << "m" << i << "\t100\t0\tSimilar\n";
    for (int i = 0; i < 837; ++i) out << "a" << i << "\t100\t0\tAnomalous\n";
    out.close();
    const auto r = run_eval_scores(c, d / "scores.tsv");
    CHECK(r.confusion == ConfusionMatrix{79, 10, 0, 837});
    const auto j = to_json(r.metrics);
    CHECK(j["accuracy"] == 98.92);
    CHECK(j["f1"] == 94.05);
    CHECK(j["fnr"] == 11.24);
    CHECK(j["fpr"] == 0.0);
}

}
