#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "redkit/dataset.hpp"
#include "redkit/experiments.hpp"
#include "redkit/graph.hpp"
#include "redkit/models.hpp"
#include "redkit/sampler.hpp"

namespace py = pybind11;
using namespace redkit;
namespace ex = redkit::experiments;

namespace {

// Python objects cross the boundary as JSON text.
json to_cpp(const py::object& o) { return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::vector<dataset::Label> labels(const std::vector<std::string>& names) {
    std::vector<dataset::Label> out;
    for (const auto& n : names) out.push_back(dataset::label_from_string(n));
    return out;
}

std::vector<dataset::RelationInstance> instances(const py::list& records) {
    std::vector<dataset::RelationInstance> out;
    for (const auto& r : records) out.push_back(dataset::instance_from_json(to_cpp(py::reinterpret_borrow<py::object>(r))));
    return out;
}

std::vector<mentions::LinkedMention> linked(const py::list& records) {
    std::vector<mentions::LinkedMention> out;
    for (const auto& r : records) out.push_back(mentions::mention_from_json(to_cpp(py::reinterpret_borrow<py::object>(r))));
    return out;
}

py::dict f1_map(const std::map<dataset::F1Mode, double>& m) {
    py::dict d;
    for (const auto& [mode, v] : m) d[py::str(dataset::to_string(mode))] = v;
    return d;
}

} // namespace

PYBIND11_MODULE(_redkit, m) {
    m.doc() = "Relation dataset and modelling toolkit";

    py::register_exception<Error>(m, "RedkitError", PyExc_ValueError);

    m.def(
        "f1_score",
        [](const std::vector<std::string>& gold, const std::vector<std::string>& pred, const std::string& mode,
           const std::string& space) {
            return dataset::f1_score(labels(gold), labels(pred), dataset::f1_mode_from_string(mode),
                                     dataset::label_space_from_string(space));
        },
        py::arg("gold"), py::arg("pred"), py::arg("mode") = "macro", py::arg("space") = "multiclass");

    m.def("fleiss_kappa", &dataset::fleiss_kappa, py::arg("counts"));

    m.def(
        "confusion_matrix",
        [](const std::vector<std::string>& gold, const std::vector<std::string>& pred, const std::string& space) {
            return dataset::confusion_matrices(labels(gold), labels(pred), dataset::label_space_from_string(space)).matrix;
        },
        py::arg("gold"), py::arg("pred"), py::arg("space") = "multiclass");

    m.def("cosine_embedding_loss", &models::cosine_embedding_loss, py::arg("cos"), py::arg("y"), py::arg("margin") = 0.0);

    m.def(
        "build_graph",
        [](const py::list& mention_records) {
            const auto g = graph::build_graph(linked(mention_records));
            py::dict edges;
            for (const auto& [key, e] : g.edges()) edges[py::str(key)] = e.weight;
            return edges;
        },
        py::arg("mentions"), "Edge weights keyed by \"cui_a|cui_b\".");

    m.def(
        "sample_sentences",
        [](const py::list& mention_records, std::size_t n, std::uint64_t seed) {
            const auto ms = linked(mention_records);
            const auto scores = sampler::score_sentences(ms, graph::build_graph(ms));
            return sampler::sample(sampler::build_distributions(scores.weights), n, seed);
        },
        py::arg("mentions"), py::arg("n"), py::arg("seed") = 42, "Sentence ids in draw order.");

    m.def(
        "random_baseline",
        [](const std::vector<double>& distribution, const std::vector<std::string>& gold, const std::string& space,
           std::size_t trials, std::uint64_t seed) {
            const auto r = ex::random_baseline(distribution, labels(gold), dataset::label_space_from_string(space), trials, seed);
            py::dict d;
            d["trials"] = r.trials;
            d["mean"] = f1_map(r.mean);
            d["std"] = f1_map(r.stddev);
            return d;
        },
        py::arg("distribution"), py::arg("gold"), py::arg("space") = "multiclass", py::arg("trials") = 100000,
        py::arg("seed") = 42);

    m.def(
        "synthetic_instances",
        [](std::size_t n, std::uint64_t seed) {
            py::list out;
            for (const auto& inst : ex::synthetic_instances(n, seed)) out.append(to_py(dataset::to_json(inst)));
            return out;
        },
        py::arg("n"), py::arg("seed") = 0);

    m.def(
        "run_holdout",
        [](const py::object& config, const py::list& train, const py::list& dev, const py::list& test,
           const std::string& name) {
            const auto r = ex::run_holdout(ex::run_config_from_json(to_cpp(config)), instances(train), instances(dev),
                                           instances(test), name);
            py::list out;
            for (const auto& rec : ex::result_records(r)) out.append(to_py(rec));
            return out;
        },
        py::arg("config"), py::arg("train"), py::arg("dev"), py::arg("test"), py::arg("name") = "holdout",
        "Per-seed records followed by a summary record.");
}
