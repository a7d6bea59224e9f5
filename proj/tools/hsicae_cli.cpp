// Command-line front end: gen, train, quantize, eval, bench.

#include <hsicae/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace hsicae;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "key=value configuration file");
    app->add_option("--set", c.sets, "override a config key (key=value), repeatable");
    app->add_option("--seed", c.seed, "seed override");
}

PipelineConfig load(const Common& c) {
    PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : PipelineConfig::from_file(c.config);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convolutional-autoencoder artefact detection for hyperspectral imagery"};
    app.require_subcommand(1);

    Common gen_c, train_c, quant_c, eval_c, bench_c;

    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    add_common(gen, gen_c);

    auto* tr = app.add_subcommand("train", "train the autoencoder");
    add_common(tr, train_c);
    std::optional<int> epochs;
    bool resume = false;
    tr->add_option("--epochs", epochs, "epoch count override");
    tr->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

    auto* qu = app.add_subcommand("quantize", "calibrate and quantize to int8");
    add_common(qu, quant_c);
    std::string weights;
    std::optional<int> finetune;
    qu->add_option("--weights", weights, "float weight file (default: <output>/weights.caew)");
    qu->add_option("--finetune", finetune, "fake-quant fine-tuning epochs");

    auto* ev = app.add_subcommand("eval", "score the validation split");
    add_common(ev, eval_c);
    std::string eval_model, scores;
    std::optional<double> threshold;
    std::string eval_precision;
    ev->add_option("--model", eval_model, "model file (CAEW or CAEQ)");
    ev->add_option("--precision", eval_precision, "fp32 or int8 (picks the default model file)")
        ->check(CLI::IsMember({"fp32", "int8"}));
    ev->add_option("--threshold", threshold, "fixed threshold instead of the sweep");
    ev->add_option("--scores", scores, "evaluate precomputed scores (TSV: source, mse, msle, truth)");

    auto* be = app.add_subcommand("bench", "inference latency benchmark");
    add_common(be, bench_c);
    std::string bench_model, bench_precision;
    be->add_option("--model", bench_model, "model file");
    be->add_option("--precision", bench_precision, "fp32 or int8")->check(CLI::IsMember({"fp32", "int8"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen) {
            PipelineConfig cfg = load(gen_c);
            if (gen_c.seed) cfg.synth.seed = *gen_c.seed;
            const auto s = run_gen(cfg);
            print({{"cubes", s.cubes},
                   {"clean_patches", s.clean_patches},
                   {"artefact_patches", s.artefact_patches},
                   {"partial_patches", s.partial_patches}});
        } else if (*tr) {
            PipelineConfig cfg = load(train_c);
            if (train_c.seed) cfg.train.seed = *train_c.seed;
            if (epochs) cfg.train.epochs = *epochs;
            const auto h = run_train(cfg, TrainRunOptions{resume});
            print({{"epochs", h.size()}, {"final_loss", h.empty() ? 0.0 : h.back()}});
        } else if (*qu) {
            PipelineConfig cfg = load(quant_c);
            if (quant_c.seed) cfg.train.seed = *quant_c.seed;
            if (finetune) cfg.quant.finetune_epochs = *finetune;
            const auto s = run_quantize(cfg, weights.empty() ? std::nullopt : std::optional<std::filesystem::path>(weights));
            print({{"dual_path", s.dual_path_exact ? "exact" : "mismatch"},
                   {"dual_path_patches", s.dual_path_checked},
                   {"calibration", s.calibration}});
            if (!s.dual_path_exact) return 1;
        } else if (*ev) {
            PipelineConfig cfg = load(eval_c);
            if (eval_c.seed) cfg.data.split_seed = *eval_c.seed;
            if (threshold) cfg.detector.threshold = *threshold;
            DetectionReport r;
            if (!scores.empty()) {
                r = run_eval_scores(cfg, scores);
            } else {
                std::filesystem::path model = eval_model;
                if (model.empty())
                    model = cfg.output_dir / (eval_precision == "int8" ? outputs::kQuantized : outputs::kWeights);
                r = run_eval(cfg, model);
            }
            nlohmann::json j = to_json(r);
            j.erase("patches");
            print(j);
        } else if (*be) {
            PipelineConfig cfg = load(bench_c);
            if (bench_c.seed) cfg.bench.seed = *bench_c.seed;
            if (!bench_precision.empty()) cfg.bench.precision = parse_precision(bench_precision);
            std::filesystem::path model = bench_model;
            if (model.empty())
                model = cfg.output_dir /
                        (cfg.bench.precision == Precision::Int8 ? outputs::kQuantized : outputs::kWeights);
            print(to_json(run_bench(cfg, model)));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.category() << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: InternalError: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
