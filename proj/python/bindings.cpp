#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "headlamp/ablation.hpp"
#include "headlamp/config.hpp"
#include "headlamp/dynamism.hpp"
#include "headlamp/linalg.hpp"
#include "headlamp/metrics.hpp"
#include "headlamp/model.hpp"
#include "headlamp/scores.hpp"
#include "headlamp/tasks.hpp"
#include "headlamp/tokenizer.hpp"

namespace py = pybind11;
using namespace headlamp;

namespace {

Intervention make_intervention(const std::vector<std::pair<int, int>>& masked, std::optional<std::vector<int>> visible) {
    Intervention iv;
    for (const auto& [l, h] : masked) iv.masked_heads.insert({l, h});
    iv.visible_positions = std::move(visible);
    return iv;
}

py::dict step_to_dict(const StepOutput& s) {
    const auto n = static_cast<Eigen::Index>(s.attn_rows.size());
    const auto t = n ? static_cast<Eigen::Index>(s.attn_rows[0].size()) : 0;
    Eigen::MatrixXd attn(n, t);
    for (Eigen::Index h = 0; h < n; ++h)
        for (Eigen::Index j = 0; j < t; ++j) attn(h, j) = s.attn_rows[h][j];
    py::dict d;
    d["logits"] = Eigen::Map<const Eigen::VectorXd>(s.logits.data(), static_cast<Eigen::Index>(s.logits.size())).eval();
    d["attention"] = attn;
    d["degenerate"] = std::vector<bool>(s.degenerate_rows.begin(), s.degenerate_rows.end());
    d["hidden"] =
        Eigen::Map<const Eigen::VectorXd>(s.final_hidden.data(), static_cast<Eigen::Index>(s.final_hidden.size())).eval();
    d["predicted"] = s.predicted_token;
    d["heads_per_layer"] = s.heads_per_layer;
    return d;
}

}  // namespace

PYBIND11_MODULE(_headlamp, m) {
    m.doc() = "Retrieval-head dynamics lab: toy models, head scores, and analysis tools.";

    auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<InputError>(m, "InputError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());

    py::class_<HeadId>(m, "HeadId")
        .def(py::init<int, int>(), py::arg("layer"), py::arg("head"))
        .def_readwrite("layer", &HeadId::layer)
        .def_readwrite("head", &HeadId::head)
        .def("__str__", &HeadId::str)
        .def("__repr__", [](const HeadId& h) { return "HeadId(" + h.str() + ")"; })
        .def("__eq__", [](const HeadId& a, const HeadId& b) { return a == b; })
        .def("__hash__", [](const HeadId& h) { return std::hash<long long>{}((static_cast<long long>(h.layer) << 32) | h.head); });
    m.def("parse_head", &parse_head, py::arg("text"));

    py::class_<ModelShape>(m, "ModelShape")
        .def_readonly("n_layers", &ModelShape::n_layers)
        .def_readonly("heads_per_layer", &ModelShape::heads_per_layer)
        .def_readonly("d_model", &ModelShape::d_model)
        .def_readonly("vocab_size", &ModelShape::vocab_size)
        .def_property_readonly("total_heads", &ModelShape::total_heads);

    py::class_<WordTokenizer>(m, "WordTokenizer")
        .def(py::init<std::vector<std::string>>(), py::arg("vocabulary"))
        .def("encode", [](const WordTokenizer& t, const std::string& s) { return t.encode(s).tokens; })
        .def("decode", [](const WordTokenizer& t, const Tokens& toks) { return t.decode(toks); })
        .def("id", &WordTokenizer::id)
        .def_property_readonly("vocabulary", &WordTokenizer::vocabulary)
        .def_property_readonly("vocab_size", &WordTokenizer::vocab_size);
    py::class_<ByteTokenizer>(m, "ByteTokenizer")
        .def(py::init<>())
        .def("encode", [](const ByteTokenizer& t, const std::string& s) { return t.encode(s).tokens; })
        .def("decode", [](const ByteTokenizer& t, const Tokens& toks) { return t.decode(toks); });

    py::class_<Model>(m, "Model")
        .def_property_readonly("shape", &Model::shape)
        .def_property_readonly("max_context", &Model::max_context)
        .def_property_readonly("eos_token", &Model::eos_token)
        .def(
            "forward",
            [](const Model& model, const Tokens& tokens, const std::vector<std::pair<int, int>>& masked,
               std::optional<std::vector<int>> visible) {
                StepOutput out;
                {
                    py::gil_scoped_release release;
                    out = model.forward(tokens, make_intervention(masked, std::move(visible)));
                }
                return step_to_dict(out);
            },
            py::arg("tokens"), py::arg("masked_heads") = std::vector<std::pair<int, int>>{},
            py::arg("visible_positions") = py::none())
        .def(
            "generate",
            [](const Model& model, const Tokens& prompt, std::size_t max_new) { return generate(model, prompt, max_new).generated(); },
            py::arg("prompt"), py::arg("max_new"))
        .def("save", [](const Model& model, const std::string& path) { save_model(model, path); });
    m.def(
        "induction_model",
        [](int vocab_size, std::uint64_t seed, int heads_per_layer, int max_context) {
            InductionOptions o;
            o.heads_per_layer = heads_per_layer;
            o.max_context = max_context;
            return build_induction_model(vocab_size, seed, o);
        },
        py::arg("vocab_size"), py::arg("seed"), py::arg("heads_per_layer") = 32, py::arg("max_context") = 4096);
    m.def("load_model", [](const std::string& path) { return load_model(path); }, py::arg("path"));

    m.def("toy_vocabulary", [] { return toy_vocabulary({}); });
    m.def(
        "toy_niah",
        [](const WordTokenizer& tok, int haystack_len, double depth, std::uint64_t seed) {
            ToyNiahConfig c;
            c.haystack_len = haystack_len;
            const auto s = make_toy_niah(tok, c, depth, seed);
            py::dict d;
            d["prompt"] = s.prompt;
            d["answer"] = s.answer;
            d["answer_text"] = s.answer_text;
            d["needle_span"] = s.needle_span;
            d["max_new"] = s.max_new();
            return d;
        },
        py::arg("tokenizer"), py::arg("haystack_len"), py::arg("depth"), py::arg("seed"));
    m.def(
        "niah",
        [](const std::string& haystack, std::size_t target_len, double depth, std::uint64_t seed) {
            const auto s = make_niah(haystack, ByteTokenizer{}, target_len, depth, seed);
            py::dict d;
            d["prompt"] = s.prompt;
            d["uuid"] = s.uuid;
            d["needle_chars"] = std::make_pair(s.needle_chars.begin, s.needle_chars.end);
            d["needle_span"] = s.needle_span;
            d["n_tokens"] = s.tokens.size();
            return d;
        },
        py::arg("haystack"), py::arg("target_len"), py::arg("depth"), py::arg("seed"));

    m.def(
        "reasoning_score",
        [](const std::vector<double>& row, const std::vector<int>& needle, int sink_count, int local_window) {
            const auto r = reasoning_score(row, SpanSet::make(row.size(), needle, sink_count, local_window));
            return std::make_pair(r.value, r.degenerate);
        },
        py::arg("row"), py::arg("needle"), py::arg("sink_count") = 1, py::arg("local_window") = 4);
    m.def(
        "copy_paste_score",
        [](const std::vector<double>& row, const std::vector<int>& needle, const Tokens& tokens, Token predicted) {
            return copy_paste_score(row, SpanSet::make(row.size(), needle), tokens, predicted);
        },
        py::arg("row"), py::arg("needle"), py::arg("tokens"), py::arg("predicted"));
    m.def("activation_entropy", &activation_entropy, py::arg("counts"));
    m.def("accuracy_contains", &accuracy_contains, py::arg("output"), py::arg("gold"));

    m.def(
        "ablation_sample",
        [](const Model& model, const WordTokenizer& tok, const py::dict& task, const std::string& condition,
           std::uint64_t seed) {
            TaskInstance t{task["prompt"].cast<Tokens>(), task["needle_span"].cast<std::vector<int>>(),
                           task["answer_text"].cast<std::string>(), task["max_new"].cast<std::size_t>()};
            const auto r = run_ablation_sample(model, tok, t, parse_condition(condition), nullptr, seed, {},
                                               MetricKind::AccuracyContains);
            return std::make_pair(r.text, r.metric);
        },
        py::arg("model"), py::arg("tokenizer"), py::arg("task"), py::arg("condition"), py::arg("seed") = 0);

    py::class_<CCAResult>(m, "CCAResult")
        .def_readonly("correlations", &CCAResult::correlations)
        .def_readonly("top1", &CCAResult::top1)
        .def_readonly("top10_mean", &CCAResult::top10_mean)
        .def_readonly("top50_mean", &CCAResult::top50_mean)
        .def_readonly("rank_x", &CCAResult::rank_x)
        .def_readonly("rank_y", &CCAResult::rank_y)
        .def_readonly("degenerate", &CCAResult::degenerate)
        .def_readonly("warnings", &CCAResult::warnings);
    m.def(
        "cca",
        [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int n_components, double fx, double fy, double ridge) {
            CCAOptions o;
            o.n_components = n_components;
            o.pca_fraction_x = fx;
            o.pca_fraction_y = fy;
            o.ridge = ridge;
            return cca(x, y, o);
        },
        py::arg("x"), py::arg("y"), py::arg("n_components") = 50, py::arg("pca_fraction_x") = 0.95,
        py::arg("pca_fraction_y") = 0.99, py::arg("ridge") = 1e-6, py::call_guard<py::gil_scoped_release>());

    m.def(
        "config_hash", [](const std::string& text) { return RunConfig::from_json(nlohmann::json::parse(text)).hash(); },
        py::arg("json_text"));
}
