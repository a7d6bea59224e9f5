// Python module hsicae._core.

#include <hsicae/pipeline.hpp>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace hsicae;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (N,1,H,W), (N,H,W) or (H,W) float array to an NCHW tensor.
Tensor4f to_tensor(const FloatArray& a) {
    const auto nd = a.ndim();
    Shape4 s;
    if (nd == 2) s = {1, 1, static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))};
    else if (nd == 3) s = {static_cast<std::size_t>(a.shape(0)), 1, static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2))};
    else if (nd == 4) s = {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))};
    else throw ShapeError("expected a 2-, 3- or 4-dimensional array");
    return Tensor4f(s, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor4f& t) {
    const Shape4 s = t.shape();
    FloatArray out({s.n, s.c, s.h, s.w});
    std::copy(t.span().begin(), t.span().end(), out.mutable_data());
    return out;
}

Verdict verdict_of(const std::string& s) {
    if (s == "Similar") return Verdict::Similar;
    if (s == "Anomalous") return Verdict::Anomalous;
    throw ArgError("verdict must be 'Similar' or 'Anomalous', got '" + s + "'");
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    auto put = [&](const char* k, const std::optional<double>& v) { d[k] = v ? py::cast(*v) : py::none(); };
    put("accuracy", m.accuracy);
    put("f1", m.f1);
    put("recall", m.recall);
    put("precision", m.precision);
    put("fnr", m.fnr);
    put("fpr", m.fpr);
    return d;
}

py::dict confusion_dict(const ConfusionMatrix& cm) {
    py::dict d;
    d["tp"] = cm.tp;
    d["fn"] = cm.fn;
    d["fp"] = cm.fp;
    d["tn"] = cm.tn;
    return d;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Convolutional-autoencoder artefact detection for hyperspectral imagery";

    static py::exception<Error> base(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::set_error(base, (std::string(e.category()) + ": " + e.what()).c_str());
        }
    });

    py::enum_<OutputActivation>(m, "OutputActivation")
        .value("ReLU", OutputActivation::ReLU)
        .value("Linear", OutputActivation::Linear);

    py::class_<CaeConfig>(m, "CaeConfig")
        .def(py::init<>())
        .def_static("with_filters", &CaeConfig::with_filters, py::arg("encoder"), py::arg("input_size"))
        .def_readwrite("input_size", &CaeConfig::input_size)
        .def_readwrite("encoder_filters", &CaeConfig::encoder_filters)
        .def_readwrite("decoder_filters", &CaeConfig::decoder_filters)
        .def_readwrite("kernel", &CaeConfig::kernel)
        .def_readwrite("stride2_layer_index", &CaeConfig::stride2_layer_index)
        .def_readwrite("output_activation", &CaeConfig::output_activation)
        .def_readwrite("batchnorm", &CaeConfig::batchnorm)
        .def("to_text", &CaeConfig::to_text);

    py::class_<CaeModelF>(m, "Model")
        .def(py::init([](const CaeConfig& c, std::uint64_t seed) { return build_model<float>(c, seed); }),
             py::arg("config") = CaeConfig{}, py::arg("seed") = 0)
        .def_readonly("config", &CaeModelF::config)
        .def("param_count", [](const CaeModelF& model) { return param_count(model); })
        .def("infer", [](const CaeModelF& model, const FloatArray& x) { return to_array(infer(model, to_tensor(x))); })
        .def("save", [](const CaeModelF& model, const std::filesystem::path& p) { save_weights(model, p); })
        .def_static("load", &load_weights);

    py::class_<QuantizedModel>(m, "QuantizedModel")
        .def_readonly("config", &QuantizedModel::config)
        .def("infer",
             [](const QuantizedModel& q, const FloatArray& x) { return to_array(qforward(q, to_tensor(x))); })
        .def("save", [](const QuantizedModel& q, const std::filesystem::path& p) { save_quantized(q, p); })
        .def_static("load", &load_quantized);

    m.def(
        "quantize",
        [](const CaeModelF& model, const FloatArray& calibration) {
            const Tensor4f t = to_tensor(calibration);
            std::vector<Patch> ps(t.n());
            const std::size_t hw = t.h() * t.w();
            for (std::size_t i = 0; i < t.n(); ++i) {
                ps[i].size = t.h();
                ps[i].pixels.assign(t.span().begin() + i * hw, t.span().begin() + (i + 1) * hw);
            }
            return quantize_model(model, calibrate(model, ps));
        },
        py::arg("model"), py::arg("calibration"), "Min/max calibration on the given patches, then int8 quantization.");

    m.def(
        "reconstruction_error",
        [](const DoubleArray& x, const DoubleArray& y, double k) {
            const auto e = reconstruction_error<double>(std::span<const double>(x.data(), x.size()),
                                                        std::span<const double>(y.data(), y.size()), k);
            py::dict d;
            d["mse"] = e.mse;
            d["msle"] = e.msle;
            d["k"] = e.k;
            d["r_err"] = e.r_err;
            return d;
        },
        py::arg("x"), py::arg("y"), py::arg("k") = 1.0);

    m.def(
        "select_k",
        [](const std::vector<double>& mse, const std::vector<double>& msle) {
            if (mse.size() != msle.size()) throw ArgError("mse and msle differ in length");
            std::vector<ReconError> v;
            for (std::size_t i = 0; i < mse.size(); ++i) v.push_back({mse[i], msle[i], 0.0, mse[i]});
            return select_k(v);
        },
        py::arg("mse"), py::arg("msle"));

    m.def(
        "select_threshold",
        [](const std::vector<double>& errors, const std::vector<std::string>& truths) {
            std::vector<Verdict> t;
            for (const auto& s : truths) t.push_back(verdict_of(s));
            const auto c = select_threshold(errors, t);
            py::dict d;
            d["threshold"] = c.threshold;
            d["f1"] = c.f1 ? py::cast(*c.f1) : py::none();
            d["confusion"] = confusion_dict(c.confusion);
            return d;
        },
        py::arg("errors"), py::arg("truths"));

    m.def("classify", [](double r, double t) { return to_string(classify(r, t)); }, py::arg("r_err"),
          py::arg("threshold") = kDefaultThreshold);

    m.def(
        "compute_metrics",
        [](std::uint64_t tp, std::uint64_t fn, std::uint64_t fp, std::uint64_t tn) {
            return metrics_dict(compute_metrics({tp, fn, fp, tn}));
        },
        py::arg("tp"), py::arg("fn"), py::arg("fp"), py::arg("tn"));

    m.def(
        "gen_cube",
        [](std::uint32_t bands, std::uint32_t rows, std::uint32_t cols, std::uint64_t seed, double noise_sigma) {
            SceneConfig c;
            c.bands = bands;
            c.rows = rows;
            c.cols = cols;
            c.seed = seed;
            c.noise_sigma = noise_sigma;
            const HsiCube cube = gen_cube(c);
            FloatArray out({static_cast<py::ssize_t>(bands), static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
            std::copy(cube.data.begin(), cube.data.end(), out.mutable_data());
            return out;
        },
        py::arg("bands") = 8, py::arg("rows") = 48, py::arg("cols") = 48, py::arg("seed") = 0,
        py::arg("noise_sigma") = 0.01, "Synthetic cube as a (bands, rows, cols) array.");

    // Pipeline commands on key=value configuration text.
    m.def("resolve_config", [](const std::string& text) { return PipelineConfig::from_text(text).to_text(); },
          py::arg("text"));
    m.def(
        "run_gen",
        [](const std::string& text) {
            const auto s = run_gen(PipelineConfig::from_text(text));
            py::dict d;
            d["cubes"] = s.cubes;
            d["clean_patches"] = s.clean_patches;
            d["artefact_patches"] = s.artefact_patches;
            d["partial_patches"] = s.partial_patches;
            return d;
        },
        py::arg("config"));
    m.def("run_train", [](const std::string& text) { return run_train(PipelineConfig::from_text(text)); },
          py::arg("config"));
    m.def(
        "run_quantize",
        [](const std::string& text) {
            const auto s = run_quantize(PipelineConfig::from_text(text));
            py::dict d;
            d["dual_path"] = s.dual_path_exact ? "exact" : "mismatch";
            d["dual_path_patches"] = s.dual_path_checked;
            d["finetune_history"] = s.finetune_history;
            return d;
        },
        py::arg("config"));
    m.def(
        "run_eval",
        [](const std::string& text, const std::filesystem::path& model) {
            return json_to_py(to_json(run_eval(PipelineConfig::from_text(text), model)));
        },
        py::arg("config"), py::arg("model"));
    m.def(
        "run_bench",
        [](const std::string& text, const std::filesystem::path& model) {
            return json_to_py(to_json(run_bench(PipelineConfig::from_text(text), model)));
        },
        py::arg("config"), py::arg("model"));
}
