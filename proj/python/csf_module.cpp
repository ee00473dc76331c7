#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "csf/error.hpp"
#include "csf/flowgraph.hpp"
#include "csf/io.hpp"
#include "csf/metrics.hpp"
#include "csf/pipeline.hpp"
#include "csf/synthbasin.hpp"

namespace py = pybind11;
using namespace csf;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

struct Graph {
    flow::FlowGraph graph;
    flow::Grouping grouping;

    explicit Graph(flow::FlowGraph g) : graph(std::move(g)), grouping(flow::hierarchical_groups(graph.stations())) {}
};

struct Dataset {
    SeriesSet series;
};

struct Simulation {
    Graph graph;
    Dataset dataset;
    std::vector<std::vector<double>> runoff;
    synth::BasinScenario scenario;
};

struct Model {
    pipeline::CsfModel model;
};

struct TrainOutcome {
    Model model;
    std::vector<pipeline::EpochRecord> log;
    std::size_t best_epoch = 0;
    double train_seconds = 0.0;
};

Array to_array(const std::vector<std::size_t>& shape, const double* data) {
    std::vector<py::ssize_t> dims(shape.begin(), shape.end());
    Array out(dims);
    std::copy_n(data, out.size(), out.mutable_data());
    return out;
}

Array to_array(const num::Tensor& t) { return to_array(t.shape(), t.ptr()); }

std::vector<double> flat(const Array& a) { return std::vector<double>(a.data(), a.data() + a.size()); }

flow::Station station_from(const py::dict& d) {
    flow::Station s;
    s.id = d["id"].cast<std::string>();
    s.lat = d.contains("lat") ? d["lat"].cast<double>() : 0.0;
    s.lon = d.contains("lon") ? d["lon"].cast<double>() : 0.0;
    s.elevation = d.contains("elevation") ? d["elevation"].cast<double>() : 0.0;
    s.huc8 = d.contains("huc8") ? d["huc8"].cast<std::string>() : "00000001";
    s.huc4 = d.contains("huc4") ? d["huc4"].cast<std::string>() : "0000";
    s.soil_class = d.contains("soil_class") ? d["soil_class"].cast<int>() : 0;
    return s;
}

py::dict station_dict(const flow::Station& s) {
    py::dict d;
    d["id"] = s.id;
    d["lat"] = s.lat;
    d["lon"] = s.lon;
    d["elevation"] = s.elevation;
    d["huc8"] = s.huc8;
    d["huc4"] = s.huc4;
    d["soil_class"] = s.soil_class;
    return d;
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

std::string config_value(const py::handle& v) {
    if (py::isinstance<py::bool_>(v)) return v.cast<bool>() ? "true" : "false";
    return py::str(v).cast<std::string>();
}

pipeline::TrainConfig make_config(const std::string& text, const py::kwargs& overrides) {
    pipeline::TrainConfig c = pipeline::parse_config(text);
    for (const auto& [k, v] : overrides) pipeline::set_config_value(c, k.cast<std::string>(), config_value(v));
    pipeline::validate_config(c);
    return c;
}

pipeline::DayRange split_range(const std::string& name, std::size_t days, const pipeline::SplitFractions& f) {
    if (name == "all") return {0, days};
    const auto s = pipeline::temporal_split(days, f);
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    fail(ErrorKind::ConfigInvalid, "unknown split '" + name + "'");
}

pipeline::FeatureCube cube_for(const pipeline::CsfModel& m, const SeriesSet& s) {
    return pipeline::build_features(pipeline::apply_stats(s, m.stats, m.config.preprocess.impute), m.forcing_window());
}

}  // namespace

PYBIND11_MODULE(_csf, m) {
    m.doc() = "Causal streamflow forecasting core";

    py::register_exception<Error>(m, "CsfError", PyExc_ValueError);

    py::class_<Graph>(m, "Graph")
        .def_static(
            "from_edges",
            [](const std::vector<py::dict>& stations, const std::vector<std::pair<std::string, std::string>>& edges) {
                std::vector<flow::Station> s;
                for (const auto& d : stations) s.push_back(station_from(d));
                return Graph(flow::build_from_edges(std::move(s), edges));
            },
            py::arg("stations"), py::arg("edges"))
        .def_static(
            "from_dem",
            [](const Array& dem, std::optional<py::array_t<bool, py::array::c_style | py::array::forcecast>> mask) {
                if (dem.ndim() != 2) fail(ErrorKind::ShapeMismatch, "DEM must be two-dimensional");
                flow::Grid g{static_cast<std::size_t>(dem.shape(0)), static_cast<std::size_t>(dem.shape(1)), flat(dem)};
                std::vector<bool> mk(g.values.size(), true);
                if (mask) {
                    if (static_cast<std::size_t>(mask->size()) != mk.size()) fail(ErrorKind::ShapeMismatch, "mask size differs");
                    for (std::size_t i = 0; i < mk.size(); ++i) mk[i] = mask->data()[i];
                }
                return Graph(flow::build_from_d8(g, mk).graph);
            },
            py::arg("dem"), py::arg("mask") = py::none())
        .def_static("load", [](const std::string& dir) { return Graph(io::read_graph_bundle(dir).graph); })
        .def("write", [](const Graph& g, const std::string& dir) { return from_json(io::write_graph_bundle(dir, g.graph)); })
        .def_property_readonly("size", [](const Graph& g) { return g.graph.size(); })
        .def_property_readonly("station_ids",
                               [](const Graph& g) {
                                   std::vector<std::string> ids;
                                   for (const auto& s : g.graph.stations()) ids.push_back(s.id);
                                   return ids;
                               })
        .def_property_readonly("stations",
                               [](const Graph& g) {
                                   py::list out;
                                   for (const auto& s : g.graph.stations()) out.append(station_dict(s));
                                   return out;
                               })
        .def_property_readonly("edges",
                               [](const Graph& g) {
                                   std::vector<std::pair<std::string, std::string>> out;
                                   for (const auto& [u, d] : g.graph.edges())
                                       out.emplace_back(g.graph.station(u).id, g.graph.station(d).id);
                                   return out;
                               })
        .def_property_readonly("topological_order", [](const Graph& g) { return g.graph.topological_order(); })
        .def_property_readonly("groups",
                               [](const Graph& g) {
                                   std::map<std::string, std::vector<std::size_t>> out;
                                   for (const auto& name : g.grouping.groups()) out[name] = g.grouping.members(name);
                                   return out;
                               })
        .def("upstream_closure",
             [](const Graph& g, const std::set<std::size_t>& targets) {
                 const auto c = flow::upstream_closure(g.graph, targets);
                 return std::vector<std::size_t>(c.begin(), c.end());
             })
        .def("adjacency", [](const Graph& g) { return to_array(flow::causal_adjacency(g.graph).entries); })
        .def(
            "aggregation_matrix",
            [](const Graph& g, bool self_loops, bool row_normalize) {
                return to_array(flow::aggregation_matrix(flow::causal_adjacency(g.graph), self_loops, row_normalize));
            },
            py::arg("self_loops") = true, py::arg("row_normalize") = true)
        .def("validate", [](const Graph& g) {
            return from_json(io::to_json(
                flow::validate(g.graph, g.grouping, flow::aggregation_matrix(flow::causal_adjacency(g.graph)))));
        });

    py::class_<Dataset>(m, "Dataset")
        .def_static(
            "load", [](const std::string& dir, const Graph& g) { return Dataset{io::read_series(dir, g.graph.stations())}; },
            py::arg("data_dir"), py::arg("graph"))
        .def_property_readonly("days", [](const Dataset& d) { return d.series.days(); })
        .def_property_readonly("dates", [](const Dataset& d) { return d.series.dates; })
        .def_property_readonly("station_ids",
                               [](const Dataset& d) {
                                   std::vector<std::string> ids;
                                   for (const auto& s : d.series.stations) ids.push_back(s.station_id);
                                   return ids;
                               })
        .def_property_readonly("flow",
                               [](const Dataset& d) {
                                   const std::size_t n = d.series.stations.size(), t = d.series.days();
                                   std::vector<double> v;
                                   for (const auto& s : d.series.stations) v.insert(v.end(), s.flow.begin(), s.flow.end());
                                   return to_array({n, t}, v.data());
                               })
        .def_property_readonly("forcings", [](const Dataset& d) {
            const std::size_t n = d.series.stations.size(), t = d.series.days();
            std::vector<double> v;
            for (const auto& s : d.series.stations)
                for (const auto& f : s.forcings) v.insert(v.end(), f.begin(), f.end());
            return to_array({n, t, kForcingCount}, v.data());
        });

    py::class_<Simulation>(m, "Simulation")
        .def_readonly("graph", &Simulation::graph)
        .def_readonly("dataset", &Simulation::dataset)
        .def_property_readonly("runoff",
                               [](const Simulation& s) {
                                   std::vector<double> v;
                                   for (const auto& r : s.runoff) v.insert(v.end(), r.begin(), r.end());
                                   return to_array({s.runoff.size(), s.dataset.series.days()}, v.data());
                               })
        .def_property_readonly("storage_coef", [](const Simulation& s) { return s.scenario.storage_coef; })
        .def("write", [](const Simulation& s, const std::string& dir) {
            const std::filesystem::path p(dir);
            io::write_stations(p / "stations.csv", s.graph.graph.stations());
            io::write_edges(p / "edges.csv", s.graph.graph);
            io::write_forcings(p / "forcings.csv", s.dataset.series);
            io::write_streamflow(p / "streamflow.csv", s.dataset.series);
            std::vector<std::string> ids;
            for (const auto& st : s.dataset.series.stations) ids.push_back(st.station_id);
            io::write_panel(p / "runoff_truth.csv", io::station_values(ids, s.dataset.series.dates, s.runoff, "runoff_mm"));
        });

    m.def(
        "simulate",
        [](std::size_t stations, std::size_t groups, std::size_t days, std::uint64_t seed) {
            synth::ScenarioConfig c;
            c.stations = stations;
            c.groups = groups;
            auto sim = synth::simulate(c, days, seed);
            Graph g(sim.scenario.graph);
            return Simulation{std::move(g), Dataset{std::move(sim.series)}, std::move(sim.runoff), std::move(sim.scenario)};
        },
        py::arg("stations") = 30, py::arg("groups") = 3, py::arg("days") = 2000, py::arg("seed") = 0,
        "Synthetic basin with linear-reservoir runoff and routed streamflow.");

    m.def(
        "config_text", [](const std::string& text, const py::kwargs& kw) { return pipeline::to_text(make_config(text, kw)); },
        py::arg("text") = "", "Canonical training config text after applying keyword overrides.");

    py::class_<Model>(m, "Model")
        .def_static("load", [](const std::string& dir) { return Model{pipeline::load_model(dir)}; })
        .def("save", [](const Model& md, const std::string& dir) { pipeline::save_model(dir, md.model); })
        .def_property_readonly("config_text", [](const Model& md) { return pipeline::to_text(md.model.config); })
        .def_property_readonly("station_ids", [](const Model& md) { return md.model.station_ids; })
        .def(
            "evaluate",
            [](const Model& md, const Dataset& d, const std::string& split) {
                const auto range = split_range(split, d.series.days(), md.model.config.split);
                return from_json(metrics::to_json(pipeline::evaluate(md.model, d.series, cube_for(md.model, d.series), range)));
            },
            py::arg("dataset"), py::arg("split") = "test")
        .def(
            "forecast",
            [](const Model& md, const Dataset& d, std::optional<std::size_t> lead, const std::string& split) {
                const auto range = split_range(split, d.series.days(), md.model.config.split);
                const auto fc =
                    pipeline::forecast_range(md.model, cube_for(md.model, d.series), range, lead.value_or(md.model.task.output_days));
                std::vector<std::string> dates;
                for (std::size_t t : fc.target_days) dates.push_back(d.series.dates[t]);
                std::vector<double> v;
                for (const auto& f : fc.flow) v.insert(v.end(), f.begin(), f.end());
                return py::make_tuple(dates, to_array({fc.flow.size(), fc.target_days.size()}, v.data()));
            },
            py::arg("dataset"), py::arg("lead") = py::none(), py::arg("split") = "test",
            "Returns (target dates, flow [stations, dates]) in physical units.")
        .def(
            "embeddings",
            [](const Model& md, const Dataset& d, const std::string& split) {
                if (!md.model.config.use_embeddings) fail(ErrorKind::ConfigInvalid, "model has no embeddings");
                const auto range = split_range(split, d.series.days(), md.model.config.split);
                const auto feats = pipeline::model_features(md.model, cube_for(md.model, d.series), range);
                const std::size_t n = d.series.stations.size(), dim = md.model.config.latent_dim, f = md.model.feature_count();
                std::vector<double> v(range.size() * n * dim);
                for (std::size_t r = 0; r < range.size() * n; ++r)
                    std::copy_n(feats.ptr() + r * f + 1, dim, v.data() + r * dim);
                return to_array({range.size(), n, dim}, v.data());
            },
            py::arg("dataset"), py::arg("split") = "all", "Posterior means [days, stations, latent_dim].");

    py::class_<TrainOutcome>(m, "TrainResult")
        .def_readonly("model", &TrainOutcome::model)
        .def_readonly("best_epoch", &TrainOutcome::best_epoch)
        .def_readonly("train_seconds", &TrainOutcome::train_seconds)
        .def_property_readonly("log", [](const TrainOutcome& t) {
            py::list out;
            for (const auto& r : t.log) out.append(from_json(pipeline::to_json(r)));
            return out;
        });

    m.def(
        "train",
        [](const Dataset& d, const Graph& g, const std::string& config, std::optional<py::function> on_epoch,
           const py::kwargs& overrides) {
            const pipeline::TrainConfig c = make_config(config, overrides);
            pipeline::EpochCallback cb;
            if (on_epoch) cb = [&](const pipeline::EpochRecord& r) { (*on_epoch)(from_json(pipeline::to_json(r))); };
            pipeline::TrainResult r = pipeline::train(c, d.series, g.graph, g.grouping, cb);
            return TrainOutcome{Model{std::move(r.model)}, std::move(r.log), r.best_epoch, r.train_seconds};
        },
        py::arg("dataset"), py::arg("graph"), py::arg("config") = "", py::arg("on_epoch") = py::none(),
        "Train on a dataset; keyword arguments override config keys.");

    m.def("nse", [](const Array& y, const Array& yhat) { return metrics::nse(flat(y), flat(yhat)); });
    m.def(
        "kge",
        [](const Array& y, const Array& yhat, bool sd_ratio) {
            return metrics::kge(flat(y), flat(yhat),
                                sd_ratio ? metrics::KgeVariability::StandardDeviation
                                         : metrics::KgeVariability::CoefficientOfVariation);
        },
        py::arg("y"), py::arg("yhat"), py::arg("sd_ratio") = false);
    m.def("volumetric_efficiency", [](const Array& y, const Array& yhat) { return metrics::volumetric_efficiency(flat(y), flat(yhat)); });
    m.def("pearson_rho", [](const Array& y, const Array& yhat) { return metrics::pearson_rho(flat(y), flat(yhat)); });
    m.def(
        "knn_alignment",
        [](const Array& z, const Array& r, std::size_t k) {
            if (z.ndim() != 2) fail(ErrorKind::ShapeMismatch, "embeddings must be [points, dim]");
            return metrics::knn_alignment(flat(z), static_cast<std::size_t>(z.shape(1)), flat(r), k);
        },
        py::arg("z"), py::arg("r"), py::arg("k") = 10);
}
